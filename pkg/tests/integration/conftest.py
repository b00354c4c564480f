import os
import subprocess
import sys

import pytest


@pytest.fixture
def run_cli(tmpdir):
    """Runs python -m vectorpose in a subprocess within tmpdir"""

    def _run_cli(*args):
        env = os.environ.copy()
        env["CUBLAS_WORKSPACE_CONFIG"] = ":4096:8"
        env.pop("VECTORPOSE_NUM_WORKERS", None)
        result = subprocess.run(
            args=[sys.executable, "-m", "vectorpose", *map(str, args)],
            cwd=tmpdir,
            env=env,
            capture_output=True,
        )
        assert result.returncode == 0, result.stderr.decode("utf-8")
        return result

    return _run_cli

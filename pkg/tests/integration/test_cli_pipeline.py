import csv
import json

import pytest

from vectorpose.config import CONFIG_NAME, HASH_KEY
from vectorpose.lib.checkpoint import load_checkpoint
from vectorpose.lib.metrics import read_metrics


def read_table(path):
    with path.open(encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_pipeline(tmpdir, tiny_config_file, run_cli):
    config = tiny_config_file()
    data = tmpdir / "data"

    run_cli("make-phantoms", "--config", config, "--out", data)
    assert (data / "dataset.json").exists()

    pretrain_out = tmpdir / "pretrain"
    run_cli(
        "pretrain",
        "--config",
        config,
        "--data",
        data,
        "--out",
        pretrain_out,
    )
    final = pretrain_out / "checkpoints" / "pretrain_final.pt"
    assert load_checkpoint(final).kind == "pretrain"
    steps = [r["step"] for r in read_metrics(pretrain_out / "metrics.jsonl")]
    assert steps == [1, 2, 3, 4]

    finetune_out = tmpdir / "finetune"
    run_cli(
        "finetune",
        "--config",
        config,
        "--data",
        data,
        "--checkpoint",
        final,
        "--out",
        finetune_out,
        "--runs",
        1,
    )
    [run, mean, std] = read_table(finetune_out / "tables" / "finetune_runs.csv")
    assert run["init"] == "pretrained"
    assert mean["run"] == "mean"
    assert float(std["best_dice"]) == 0.0

    evaluate_out = tmpdir / "evaluate"
    run_cli(
        "evaluate",
        "--config",
        config,
        "--data",
        data,
        "--checkpoint",
        finetune_out / "checkpoints" / "finetune_run00.pt",
        "--out",
        evaluate_out,
    )
    table = read_table(evaluate_out / "tables" / "evaluate.csv")
    means = [row for row in table if row["class"] == "mean"]
    # one labeled test phantom
    assert len(means) == 1
    assert 0.0 <= float(means[0]["dice"]) <= 1.0

    for out in (pretrain_out, finetune_out, evaluate_out):
        echoed = json.loads((out / CONFIG_NAME).read_text())
        assert echoed["data"]["source"] == str(data)
        assert echoed[HASH_KEY]


@pytest.mark.parametrize(
    "command, extra",
    (
        ("pretrain", ()),
        ("finetune", ("--from-scratch",)),
    ),
)
def test_deterministic_rerun(tmpdir, tiny_config_file, run_cli, command, extra):
    config = tiny_config_file()
    first, second, echoed = (
        tmpdir / name for name in ("first", "second", "echoed")
    )
    for out in (first, second):
        run_cli(
            command, "--config", config, "--out", out, "--deterministic", *extra
        )
    # rerun from the echoed config alone
    run_cli(
        command,
        "--config",
        first / CONFIG_NAME,
        "--out",
        echoed,
        "--deterministic",
        *extra,
    )

    expected = (first / "metrics.jsonl").read_bytes()
    assert expected
    assert (second / "metrics.jsonl").read_bytes() == expected
    assert (echoed / "metrics.jsonl").read_bytes() == expected
    assert (echoed / CONFIG_NAME).read_bytes() == (
        first / CONFIG_NAME
    ).read_bytes()
    records = read_metrics(first / "metrics.jsonl")
    assert all("wall_time" not in r for r in records)

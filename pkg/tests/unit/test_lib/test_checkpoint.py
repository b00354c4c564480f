import pytest
import torch

from vectorpose.errors import IncompatibleCheckpointError
from vectorpose.lib.checkpoint import (
    CHECKPOINT_VERSION,
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from vectorpose.lib.network import NetworkConfig, PretrainNet


@pytest.fixture
def checkpoint():
    config = NetworkConfig(base_channels=2, num_stages=1, decoder_channels=4)
    model = PretrainNet(config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
    vp_logits, bfr_logits = model(torch.rand((1, 1, 4, 4, 4)))
    (vp_logits.sum() + bfr_logits.sum()).backward()
    optimizer.step()
    return Checkpoint(
        kind="pretrain",
        network=config.to_dict(),
        model=model.state_dict(),
        config_hash="0" * 64,
        optimizer=optimizer.state_dict(),
        epoch=3,
        step=12,
        rng=torch.get_rng_state(),
        extra={"best_dice": 0.5},
    )


def test_save_load(tmpdir, checkpoint):
    path = save_checkpoint(checkpoint, tmpdir / "nested" / "epoch_003.pt")
    assert path.exists()
    assert list(path.parent.iterdir()) == [path]

    loaded = load_checkpoint(path)

    assert loaded.kind == "pretrain"
    assert loaded.network == checkpoint.network
    assert loaded.config_hash == checkpoint.config_hash
    assert (loaded.epoch, loaded.step) == (3, 12)
    assert loaded.extra == {"best_dice": 0.5}
    assert loaded.scheduler is None
    assert torch.equal(loaded.rng, checkpoint.rng)
    assert loaded.model.keys() == checkpoint.model.keys()
    for key, value in checkpoint.model.items():
        assert torch.equal(loaded.model[key], value)
    assert loaded.optimizer["param_groups"] == (
        checkpoint.optimizer["param_groups"]
    )


def test_save_replaces(tmpdir, checkpoint):
    path = tmpdir / "last.pt"
    save_checkpoint(checkpoint, path)
    checkpoint.epoch = 4
    save_checkpoint(checkpoint, path)
    assert load_checkpoint(path).epoch == 4
    assert not path.with_suffix(".tmp").exists()


def test_load_missing(tmpdir):
    with pytest.raises(IncompatibleCheckpointError, match="no such file"):
        load_checkpoint(tmpdir / "missing.pt")


def test_load_truncated(tmpdir, checkpoint):
    path = save_checkpoint(checkpoint, tmpdir / "last.pt")
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(IncompatibleCheckpointError, match="unreadable"):
        load_checkpoint(path)


def test_load_not_container(tmpdir):
    path = tmpdir / "list.pt"
    torch.save([1, 2, 3], path)
    with pytest.raises(IncompatibleCheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_load_missing_keys(tmpdir):
    path = tmpdir / "partial.pt"
    torch.save({"version": CHECKPOINT_VERSION, "kind": "pretrain"}, path)
    with pytest.raises(IncompatibleCheckpointError) as exc:
        load_checkpoint(path)
    assert exc.value.diff == {"missing": ["network", "model"]}


@pytest.mark.parametrize(
    "key, value, match",
    (
        ("version", CHECKPOINT_VERSION + 1, "version: 2 != 1"),
        ("kind", "distill", "kind: 'distill'"),
    ),
)
def test_load_mismatched(tmpdir, checkpoint, key, value, match):
    data = checkpoint.to_dict()
    data[key] = value
    path = tmpdir / "bad.pt"
    torch.save(data, path)
    with pytest.raises(IncompatibleCheckpointError, match=match):
        load_checkpoint(path)

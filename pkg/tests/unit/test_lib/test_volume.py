import numpy as np
import pytest

from vectorpose.errors import ConfigError, InvalidArgumentError, VolumeIOError
from vectorpose.lib.seeding import rng_for
from vectorpose.lib.volume import (
    CropPlacement,
    Volume,
    VolumeDataConfig,
    crop_at,
    informative_fraction,
    load_volume,
    normalize,
    sample_crop,
    save_volume,
)


@pytest.fixture
def noisy_volume(volume):
    data = np.random.default_rng(0).normal(100.0, 30.0, size=(16, 16, 16))
    return volume(data, spacing=(1.0, 1.5, 2.0), name="noisy")


def test_volume_not_3d():
    with pytest.raises(InvalidArgumentError, match="should be 3D"):
        Volume(data=np.zeros((4, 4)))


def test_normalize_range(noisy_volume):
    normalized = normalize(noisy_volume)
    assert normalized.normalized
    assert normalized.data.dtype == np.float32
    assert normalized.data.min() == 0.0
    assert normalized.data.max() == 1.0
    assert normalized.spacing == noisy_volume.spacing
    assert normalized.name == "noisy"


def test_normalize_clips_outliers(volume):
    data = np.tile(np.linspace(0.0, 1.0, 1000), (10, 1))[..., None]
    data = np.repeat(data, 2, axis=2)
    data[0, 0, 0] = 1e6
    normalized = normalize(volume(data), 0.5, 99.5).data
    # a single outlier doesn't squash the rest of the range
    assert np.median(normalized) == pytest.approx(0.5, abs=0.01)


def test_normalize_idempotent(noisy_volume):
    once = normalize(noisy_volume)
    twice = normalize(once)
    assert np.array_equal(once.data, twice.data)


def test_normalize_constant(volume):
    normalized = normalize(volume(np.full((4, 4, 4), 7.0)))
    assert np.array_equal(normalized.data, np.zeros((4, 4, 4)))


@pytest.mark.parametrize("lo, hi", ((50.0, 50.0), (-1.0, 99.0), (1.0, 101.0)))
def test_normalize_invalid_percentiles(noisy_volume, lo, hi):
    with pytest.raises(InvalidArgumentError, match="percentiles"):
        normalize(noisy_volume, lo, hi)


def test_normalize_empty(volume):
    with pytest.raises(InvalidArgumentError, match="empty"):
        normalize(volume(np.zeros((0, 4, 4))))


def test_crop_at(noisy_volume):
    crop, placement = crop_at(noisy_volume, (2, 3, 4), (5, 6, 7))
    assert np.array_equal(crop, noisy_volume.data[2:7, 3:9, 4:11])
    assert placement == CropPlacement(
        offset=(2, 3, 4), extents=(5, 6, 7), source_volume_id="noisy"
    )
    assert placement.grid_extents == (5, 6, 7)


def test_crop_at_outside(noisy_volume):
    with pytest.raises(InvalidArgumentError, match="outside of volume"):
        crop_at(noisy_volume, (12, 0, 0), (5, 5, 5))
    with pytest.raises(InvalidArgumentError, match="outside of volume"):
        crop_at(noisy_volume, (-1, 0, 0), (5, 5, 5))


def test_sample_crop_placement(noisy_volume):
    for seed in range(20):
        crop, placement = sample_crop(
            noisy_volume, (8, 4, 16), 0.0, rng_for(seed)
        )
        assert crop.shape == (8, 4, 16)
        placement.check_inside(noisy_volume.shape)
        window = tuple(
            slice(o, o + e) for o, e in zip(placement.offset, placement.extents)
        )
        assert np.array_equal(crop, noisy_volume.data[window])


def test_sample_crop_whole_volume(noisy_volume):
    crop, placement = sample_crop(noisy_volume, (16, 16, 16), 0.5, rng_for(0))
    assert placement.offset == (0, 0, 0)
    assert np.array_equal(crop, noisy_volume.data)


@pytest.mark.parametrize("extents", ((17, 4, 4), (0, 4, 4), (4, 4)))
def test_sample_crop_invalid_extents(noisy_volume, extents):
    with pytest.raises(InvalidArgumentError, match="don't fit"):
        sample_crop(noisy_volume, extents, 0.1, rng_for(0))


def test_sample_crop_informative(volume):
    """Only crops inside the bright octant are informative enough"""
    data = np.zeros((16, 16, 16), dtype=np.float32)
    data[8:, 8:, 8:] = 1.0
    bright = volume(data, name="octant")
    for seed in range(10):
        crop, placement = sample_crop(
            bright, (4, 4, 4), 1.0, rng_for(seed), max_retries=2000
        )
        assert informative_fraction(crop) == 1.0
        assert all(o >= 8 for o in placement.offset)


def test_sample_crop_best_effort(volume):
    """Unreachable fraction returns the most informative candidate"""
    data = np.zeros((16, 16, 16), dtype=np.float32)
    data[:8] = 1.0
    half = volume(data)
    crop, _ = sample_crop(half, (8, 8, 8), 1.1, rng_for(1), max_retries=200)
    assert informative_fraction(crop) == 1.0


def test_sample_crop_deterministic(noisy_volume):
    first = sample_crop(noisy_volume, (6, 6, 6), 0.1, rng_for(3, 1, 2))
    second = sample_crop(noisy_volume, (6, 6, 6), 0.1, rng_for(3, 1, 2))
    assert first[1] == second[1]
    assert np.array_equal(first[0], second[0])


def test_sample_crop_landmark(noisy_volume):
    _, placement = sample_crop(
        noisy_volume, (4, 4, 4), 0.0, rng_for(0), landmark="landmark"
    )
    assert placement.landmark == "landmark"
    assert placement.source_volume_id == "noisy"


def test_sample_crop_scale_jitter(volume):
    ramp = volume(np.indices((20, 20, 20))[0].astype(np.float32))
    seen_resampled = False
    for seed in range(20):
        crop, placement = sample_crop(
            ramp, (8, 8, 8), 0.0, rng_for(seed), scale_jitter=0.5
        )
        assert crop.shape == (8, 8, 8)
        placement.check_inside(ramp.shape)
        if placement.sample_extents is None:
            assert placement.extents == (8, 8, 8)
            continue
        seen_resampled = True
        assert placement.grid_extents == (8, 8, 8)
        # corner voxels stay on corner voxels
        x0 = placement.offset[0]
        x1 = x0 + placement.extents[0] - 1
        assert crop[0, 0, 0] == pytest.approx(x0)
        assert crop[-1, 0, 0] == pytest.approx(x1)
        assert np.all(np.diff(crop[:, 0, 0]) > 0)
    assert seen_resampled


def test_informative_fraction(volume):
    data = np.zeros((4, 4, 4))
    data[:1] = 0.5
    assert informative_fraction(volume(data)) == 0.25
    assert informative_fraction(data, threshold=0.5) == 0.0


@pytest.mark.parametrize("suffix", (".nii.gz", ".nii", ".vpraw"))
def test_save_load(tmpdir, noisy_volume, suffix):
    path = save_volume(noisy_volume, tmpdir / "sub" / f"case{suffix}")
    assert path.exists()
    loaded = load_volume(path)
    assert loaded.name == "case"
    assert loaded.shape == noisy_volume.shape
    assert loaded.spacing == pytest.approx(noisy_volume.spacing)
    assert np.array_equal(loaded.data, noisy_volume.data.astype(np.float32))


def test_save_default_spacing(tmpdir, volume):
    path = save_volume(volume(np.zeros((3, 3, 3))), tmpdir / "zeros.vpraw")
    assert load_volume(path).spacing == (1.0, 1.0, 1.0)


def test_unsupported_format(tmpdir, noisy_volume):
    with pytest.raises(VolumeIOError, match="unsupported volume format"):
        save_volume(noisy_volume, tmpdir / "case.npy")
    (tmpdir / "case.npy").write_bytes(b"")
    with pytest.raises(VolumeIOError, match="unsupported volume format"):
        load_volume(tmpdir / "case.npy")


def test_load_missing(tmpdir):
    with pytest.raises(VolumeIOError) as exc:
        load_volume(tmpdir / "missing.vpraw")
    assert exc.value.path == tmpdir / "missing.vpraw"


def test_raw_bad_magic(tmpdir, noisy_volume):
    path = save_volume(noisy_volume, tmpdir / "case.vpraw")
    content = path.read_bytes()
    path.write_bytes(b"XXXX" + content[4:])
    with pytest.raises(VolumeIOError, match="bad magic"):
        load_volume(path)


def test_raw_truncated(tmpdir, noisy_volume):
    path = save_volume(noisy_volume, tmpdir / "case.vpraw")
    content = path.read_bytes()
    path.write_bytes(content[:-4])
    with pytest.raises(VolumeIOError, match="expected 4096 voxels"):
        load_volume(path)
    path.write_bytes(content[:10])
    with pytest.raises(VolumeIOError, match="truncated raw header"):
        load_volume(path)


def test_nifti_corrupted(tmpdir):
    path = tmpdir / "broken.nii.gz"
    path.write_bytes(b"not a nifti image")
    with pytest.raises(VolumeIOError):
        load_volume(path)


@pytest.mark.parametrize(
    "kwargs, key",
    (
        ({"clip_lo_pct": 60.0, "clip_hi_pct": 40.0}, "clip_hi_pct"),
        ({"min_informative_fraction": 1.5}, "min_informative_fraction"),
        ({"max_retries": 0}, "max_retries"),
        ({"scale_jitter": 1.0}, "scale_jitter"),
        ({"num_workers": -1}, "num_workers"),
        ({"phantom_shape": (4, 4, 4)}, "phantom_shape"),
        ({"landmark": "corner"}, "landmark"),
    ),
)
def test_volume_data_config_invalid(kwargs, key):
    with pytest.raises(ConfigError) as exc:
        VolumeDataConfig(**kwargs)
    assert exc.value.key == key


def test_volume_data_config_landmark():
    assert VolumeDataConfig().landmark_base is None
    config = VolumeDataConfig(landmark=[1, 2, 3])
    assert config.landmark_base == (1.0, 2.0, 3.0)

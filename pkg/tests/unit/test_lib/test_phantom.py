import numpy as np
import pytest

from vectorpose.errors import InvalidArgumentError
from vectorpose.lib.phantom import (
    DEFAULT_ORGANS,
    OrganSpec,
    PhantomSpec,
    default_phantom_spec,
    generate_phantom,
    generate_phantoms,
)


def ball(label, offset, radius, intensity=0.8):
    return OrganSpec(
        label=label,
        offset=offset,
        radii=(radius, radius, radius),
        intensity=intensity,
    )


def test_generate_phantom_deterministic():
    spec = default_phantom_spec(seed=3, shape=(24, 24, 24))
    first_volume, first_labels = generate_phantom(spec)
    second_volume, second_labels = generate_phantom(spec)
    assert np.array_equal(first_volume.data, second_volume.data)
    assert np.array_equal(first_labels, second_labels)


def test_generate_phantom_seeds_differ():
    first, _ = generate_phantom(default_phantom_spec(1, (24, 24, 24)))
    second, _ = generate_phantom(default_phantom_spec(2, (24, 24, 24)))
    assert not np.array_equal(first.data, second.data)


def test_default_phantom():
    volume, labels = generate_phantom(default_phantom_spec(0, (32, 28, 24)))
    assert volume.shape == (32, 28, 24)
    assert volume.data.dtype == np.float32
    assert volume.spacing == (1.0, 1.0, 1.0)
    assert 0.0 <= volume.data.min() and volume.data.max() <= 1.0
    assert labels.dtype == np.uint8
    assert labels.shape == (32, 28, 24)
    assert set(np.unique(labels)) == set(range(len(DEFAULT_ORGANS) + 1))


def test_organ_rendering():
    spec = PhantomSpec(
        seed=0,
        shape=(21, 21, 21),
        organs=(ball(1, (0.0, 0.0, 0.0), 5.5),),
        background_noise=0.0,
        texture_noise=0.0,
    )
    volume, labels = generate_phantom(spec)
    grid = np.indices((21, 21, 21)) - 10
    inside = (grid**2).sum(axis=0) <= 5.5**2
    assert np.array_equal(labels == 1, inside)
    assert volume.data[10, 10, 10] == pytest.approx(0.8, abs=0.01)
    assert volume.data[0, 0, 0] == pytest.approx(0.02, abs=1e-3)


def test_overlap_higher_label_wins():
    spec = PhantomSpec(
        seed=0,
        shape=(21, 21, 21),
        organs=(
            ball(2, (2.0, 0.0, 0.0), 4.0),
            ball(1, (-2.0, 0.0, 0.0), 4.0),
        ),
    )
    _, labels = generate_phantom(spec)
    assert labels[10, 10, 10] == 2
    assert labels[7, 10, 10] == 1


@pytest.mark.parametrize(
    "kwargs, match",
    (
        ({"shape": (8, 8)}, "Invalid phantom shape"),
        (
            {"organs": (ball(1, (0, 0, 0), 2), ball(1, (1, 1, 1), 2))},
            "distinct positive",
        ),
        ({"organs": (ball(0, (0, 0, 0), 2),)}, "distinct positive"),
        ({"organs": (ball(256, (0, 0, 0), 2),)}, "uint8"),
        ({"organs": (ball(1, (6, 0, 0), 4),)}, "doesn't fit"),
        ({"organs": (ball(1, (0, 0, 0), 0),)}, "radii should be positive"),
    ),
)
def test_invalid_spec(kwargs, match):
    spec = PhantomSpec(**{"seed": 0, "shape": (16, 16, 16), **kwargs})
    with pytest.raises(InvalidArgumentError, match=match):
        generate_phantom(spec)


def test_generate_phantoms_family():
    phantoms = generate_phantoms(3, (16, 16, 16), seed=5)
    assert [v.name for v, _ in phantoms] == [
        "phantom_000",
        "phantom_001",
        "phantom_002",
    ]
    # any member can be rendered on its own
    [(volume, labels)] = generate_phantoms(1, (16, 16, 16), seed=5, start=2)
    assert volume.name == "phantom_002"
    assert np.array_equal(volume.data, phantoms[2][0].data)
    assert np.array_equal(labels, phantoms[2][1])


def test_generate_phantoms_family_seed():
    first = generate_phantoms(1, (16, 16, 16), seed=0)[0][0]
    second = generate_phantoms(1, (16, 16, 16), seed=1)[0][0]
    assert not np.array_equal(first.data, second.data)

"""
Spatial (T_S) and intensity (T_I) augmentations of crops.

Spatial augmentations are exact voxel permutations from the 48-element cube
symmetry group (axis flips and 90 degree rotations in axis-aligned planes).
Each sampled transform is kept as a `TransformRecord`, which maps crop voxel
coordinates forward and backward. Intensity augmentations follow the
Models Genesis suite and are only ever applied to the network input copy.

Arrays are indexed (x, y, z) on their last three axes.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import comb

from ..errors import (
    ConfigError,
    InvalidArgumentError,
    UnsupportedTransformError,
)

__all__ = [
    "Flip",
    "Rot90",
    "TransformRecord",
    "SpatialAugmentConfig",
    "IntensityNoiseConfig",
    "FinetuneAugmentConfig",
    "AugmentConfig",
    "PLANES",
    "sample_spatial",
    "apply_spatial",
    "forward_point",
    "invert_point",
    "enumerate_cube_group",
    "apply_intensity",
    "apply_finetune_augment",
]

logger = logging.getLogger(__name__)

AXES = "xyz"
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}

# tolerance of point bound checks in voxel units
POINT_TOLERANCE = 1e-9


def _check(condition, key, reason):
    if not condition:
        raise ConfigError(key, reason)


def _check_prob(value, key):
    _check(0.0 <= value <= 1.0, key, f"should be in [0, 1], given: {value!r}")


def _check_range(value, key, low=0.0, high=None):
    _check(
        len(value) == 2 and low <= value[0] <= value[1],
        key,
        f"should be an ordered pair >= {low}, given: {value!r}",
    )
    if high is not None:
        _check(value[1] <= high, key, f"should be <= {high}, given: {value!r}")


@dataclass(frozen=True)
class Flip:
    axis: int

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise UnsupportedTransformError(f"Invalid flip axis: {self.axis!r}")

    def affine(self, extents):
        matrix = np.eye(3, dtype=np.int64)
        matrix[self.axis, self.axis] = -1
        offset = np.zeros(3, dtype=np.int64)
        offset[self.axis] = extents[self.axis] - 1
        return matrix, offset, tuple(extents)

    def inverse(self):
        return self

    def apply(self, data):
        return np.flip(data, axis=data.ndim - 3 + self.axis)

    def to_dict(self):
        return {"op": "flip", "axis": AXES[self.axis]}

    def __str__(self):
        return f"Flip({AXES[self.axis]})"


@dataclass(frozen=True)
class Rot90:
    plane: str
    k: int = 1

    def __post_init__(self):
        if self.plane not in PLANES:
            raise UnsupportedTransformError(
                f"Invalid rotation plane: {self.plane!r}, "
                f"supported: {', '.join(PLANES)}"
            )
        if self.k not in (1, 2, 3):
            raise UnsupportedTransformError(
                f"Invalid number of quarter turns: {self.k!r}"
            )

    @property
    def axes(self):
        return PLANES[self.plane]

    def affine(self, extents):
        a, b = self.axes
        extents = tuple(extents)
        if self.k % 2 and extents[a] != extents[b]:
            raise InvalidArgumentError(
                f"{self} exchanges axes of unequal extents: {extents}"
            )

        matrix = np.eye(3, dtype=np.int64)
        offset = np.zeros(3, dtype=np.int64)
        current = list(extents)
        for _ in range(self.k):
            # one quarter turn as numpy.rot90 does it:
            # out[a] = (e_b - 1) - in[b], out[b] = in[a]
            turn = np.eye(3, dtype=np.int64)
            turn[a, a] = turn[b, b] = 0
            turn[a, b] = -1
            turn[b, a] = 1
            turn_offset = np.zeros(3, dtype=np.int64)
            turn_offset[a] = current[b] - 1
            matrix = turn @ matrix
            offset = turn @ offset + turn_offset
            current[a], current[b] = current[b], current[a]
        return matrix, offset, tuple(current)

    def inverse(self):
        return Rot90(self.plane, 4 - self.k)

    def apply(self, data):
        a, b = self.axes
        shift = data.ndim - 3
        return np.rot90(data, k=self.k, axes=(a + shift, b + shift))

    def to_dict(self):
        return {"op": "rot90", "plane": self.plane, "k": self.k}

    def __str__(self):
        return f"Rot90({self.plane}, {self.k})"


def _op_from_dict(data):
    op = data.get("op")
    if op == "flip":
        return Flip(AXES.index(data["axis"]))
    if op == "rot90":
        return Rot90(data["plane"], int(data["k"]))
    raise UnsupportedTransformError(f"Unknown spatial op: {op!r}")


@dataclass(frozen=True)
class TransformRecord:
    """Ordered spatial ops, the first one is applied first"""

    ops: tuple = ()

    def __post_init__(self):
        for op in self.ops:
            if not isinstance(op, (Flip, Rot90)):
                raise UnsupportedTransformError(
                    f"Unsupported spatial op: {op!r}"
                )
        object.__setattr__(self, "ops", tuple(self.ops))

    @property
    def is_identity(self):
        return not self.ops

    def then(self, other):
        """Record applying self first and other next"""
        return TransformRecord(self.ops + other.ops)

    def inverse(self):
        return TransformRecord(tuple(op.inverse() for op in reversed(self.ops)))

    def affine(self, extents):
        """
        Coordinate map of the whole record as (matrix, offset, out_extents)
        so that out_point = matrix @ in_point + offset.
        """
        extents = tuple(int(e) for e in extents)
        matrix = np.eye(3, dtype=np.int64)
        offset = np.zeros(3, dtype=np.int64)
        for op in self.ops:
            op_matrix, op_offset, extents = op.affine(extents)
            matrix = op_matrix @ matrix
            offset = op_matrix @ offset + op_offset
        return matrix, offset, extents

    def to_list(self):
        return [op.to_dict() for op in self.ops]

    @classmethod
    def from_list(cls, data):
        return cls(tuple(_op_from_dict(x) for x in data))

    def __str__(self):
        if not self.ops:
            return "Identity"
        return " -> ".join(str(op) for op in self.ops)


@dataclass
class SpatialAugmentConfig:
    # per axis
    flip_prob: float = 0.5
    rot_prob: float = 0.5

    def __post_init__(self):
        _check_prob(self.flip_prob, "flip_prob")
        _check_prob(self.rot_prob, "rot_prob")


@dataclass
class IntensityNoiseConfig:
    intensity_shift_prob: float = 0.9
    # number of random Bezier control points between (0, 0) and (1, 1)
    shift_control_points: int = 2
    shift_invert_prob: float = 0.5
    shuffle_prob: float = 0.5
    shuffle_block_extents: tuple = (8, 8, 8)
    shuffle_block_count: int = 1000
    paint_prob: float = 0.9
    # in-painting share of painting, the rest is out-painting
    inpaint_rate: float = 0.8
    paint_box_count: tuple = (1, 5)
    # box extents as fractions of crop extents
    inpaint_box_size: tuple = (1 / 6, 1 / 3)
    outpaint_box_size: tuple = (3 / 7, 4 / 7)

    def __post_init__(self):
        for name in (
            "intensity_shift_prob",
            "shift_invert_prob",
            "shuffle_prob",
            "paint_prob",
            "inpaint_rate",
        ):
            _check_prob(getattr(self, name), name)
        _check(
            self.shift_control_points >= 1,
            "shift_control_points",
            f"should be positive, given: {self.shift_control_points!r}",
        )
        _check(
            len(self.shuffle_block_extents) == 3
            and all(e >= 1 for e in self.shuffle_block_extents),
            "shuffle_block_extents",
            "should be 3 positive extents, "
            f"given: {self.shuffle_block_extents!r}",
        )
        _check(
            self.shuffle_block_count >= 0,
            "shuffle_block_count",
            f"should be non-negative, given: {self.shuffle_block_count!r}",
        )
        _check_range(self.paint_box_count, "paint_box_count", low=1)
        _check_range(self.inpaint_box_size, "inpaint_box_size", high=1.0)
        _check_range(self.outpaint_box_size, "outpaint_box_size", high=1.0)


@dataclass
class FinetuneAugmentConfig:
    flip_prob: float = 0.5
    brightness_prob: float = 0.3
    brightness_range: tuple = (0.9, 1.1)
    gamma_prob: float = 0.3
    gamma_range: tuple = (0.7, 1.5)
    blur_prob: float = 0.2
    blur_sigma: tuple = (0.5, 1.0)

    def __post_init__(self):
        for name in ("flip_prob", "brightness_prob", "gamma_prob", "blur_prob"):
            _check_prob(getattr(self, name), name)
        _check_range(self.brightness_range, "brightness_range")
        _check_range(self.gamma_range, "gamma_range")
        _check(
            self.gamma_range[0] > 0,
            "gamma_range",
            f"should be positive, given: {self.gamma_range!r}",
        )
        _check_range(self.blur_sigma, "blur_sigma")


@dataclass
class AugmentConfig:
    spatial: SpatialAugmentConfig = field(default_factory=SpatialAugmentConfig)
    intensity: IntensityNoiseConfig = field(
        default_factory=IntensityNoiseConfig
    )
    finetune: FinetuneAugmentConfig = field(
        default_factory=FinetuneAugmentConfig
    )


def sample_spatial(rng, cfg, extents=None):
    """
    Independent flips per axis, then at most one quarter-turn rotation in a
    uniformly chosen plane. Planes exchanging unequal extents are skipped
    when extents are given.
    """
    ops = [Flip(axis) for axis in range(3) if rng.random() < cfg.flip_prob]

    if rng.random() < cfg.rot_prob:
        planes = [
            name
            for name, (a, b) in PLANES.items()
            if extents is None or extents[a] == extents[b]
        ]
        # draw both numbers regardless of eligible planes to keep streams
        plane_draw = rng.random()
        k = int(rng.integers(1, 4))
        if planes:
            plane = planes[min(int(plane_draw * len(planes)), len(planes) - 1)]
            ops.append(Rot90(plane, k))

    return TransformRecord(tuple(ops))


def apply_spatial(data, record):
    # validates extents before touching data
    record.affine(data.shape[-3:])
    for op in record.ops:
        data = op.apply(data)
    return np.ascontiguousarray(data)


def _as_point(point):
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise InvalidArgumentError(f"Invalid 3D point: {point!r}")
    return point


def _check_bounds(point, extents):
    upper = np.asarray(extents, dtype=np.float64) - 1
    if np.any(point < -POINT_TOLERANCE) or np.any(
        point > upper + POINT_TOLERANCE
    ):
        raise InvalidArgumentError(
            f"Point {tuple(point)} is outside of crop extents {tuple(extents)}"
        )


def forward_point(record, point, extents):
    """Maps a point of the source crop onto the transformed crop"""
    point = _as_point(point)
    _check_bounds(point, extents)
    matrix, offset, _ = record.affine(extents)
    return matrix @ point + offset


def invert_point(record, point, extents):
    """
    Pre-image of a point of the transformed crop.

    extents are the extents of the source (untransformed) crop.
    """
    point = _as_point(point)
    matrix, offset, out_extents = record.affine(extents)
    _check_bounds(point, out_extents)
    # signed permutation matrices are orthogonal
    return matrix.T @ (point - offset)


def enumerate_cube_group():
    """All 48 distinct spatial transforms as shortest records"""
    generators = [Flip(axis) for axis in range(3)] + [
        Rot90(plane, 1) for plane in PLANES
    ]
    extents = (2, 2, 2)

    def key(record):
        matrix, _, _ = record.affine(extents)
        return matrix.tobytes()

    identity = TransformRecord()
    seen = {key(identity): identity}
    frontier = [identity]
    while frontier:
        next_frontier = []
        for record in frontier:
            for op in generators:
                candidate = record.then(TransformRecord((op,)))
                candidate_key = key(candidate)
                if candidate_key not in seen:
                    seen[candidate_key] = candidate
                    next_frontier.append(candidate)
        frontier = next_frontier
    return list(seen.values())


def bezier_curve(points, num_samples=1000):
    """Bernstein polynomial curve through control points"""
    points = np.asarray(points, dtype=np.float64)
    degree = len(points) - 1
    t = np.linspace(0.0, 1.0, num_samples)
    basis = np.stack(
        [
            comb(degree, i) * t**i * (1 - t) ** (degree - i)
            for i in range(degree + 1)
        ]
    )
    curve = basis.T @ points
    return curve[:, 0], curve[:, 1]


def intensity_shift(data, cfg, rng):
    control = rng.random((cfg.shift_control_points, 2))
    points = np.vstack([[0.0, 0.0], control, [1.0, 1.0]])
    xvals, yvals = bezier_curve(points)
    # sorting both coordinates makes the remap monotone non-decreasing
    xvals, yvals = np.sort(xvals), np.sort(yvals)
    if rng.random() < cfg.shift_invert_prob:
        yvals = 1.0 - yvals
    return np.interp(data, xvals, yvals)


def local_pixel_shuffle(data, cfg, rng):
    data = data.copy()
    extents = data.shape
    max_block = [min(b, e) for b, e in zip(cfg.shuffle_block_extents, extents)]
    for _ in range(cfg.shuffle_block_count):
        size = [int(rng.integers(1, b + 1)) for b in max_block]
        start = [int(rng.integers(0, e - s + 1)) for e, s in zip(extents, size)]
        window = tuple(slice(o, o + s) for o, s in zip(start, size))
        block = data[window].ravel()
        data[window] = rng.permutation(block).reshape(size)
    return data


def _random_box(extents, size_range, rng):
    lo, hi = size_range
    size = [
        min(e, max(1, int(rng.integers(int(e * lo), int(e * hi) + 1))))
        for e in extents
    ]
    start = [int(rng.integers(0, e - s + 1)) for e, s in zip(extents, size)]
    return tuple(slice(o, o + s) for o, s in zip(start, size))


def _box_count(cfg, rng):
    low, high = cfg.paint_box_count
    return int(rng.integers(low, high + 1))


def inpaint(data, cfg, rng):
    data = data.copy()
    for _ in range(_box_count(cfg, rng)):
        box = _random_box(data.shape, cfg.inpaint_box_size, rng)
        data[box] = rng.random(data[box].shape)
    return data


def outpaint(data, cfg, rng):
    painted = rng.random(data.shape)
    for _ in range(_box_count(cfg, rng)):
        box = _random_box(data.shape, cfg.outpaint_box_size, rng)
        painted[box] = data[box]
    return painted


def apply_intensity(data, cfg, rng):
    """
    T_I: intensity shift, local pixel shuffle, then in- or out-painting.
    Input is expected to be normalized to [0, 1] and so is the output.
    """
    dtype = data.dtype
    out = np.asarray(data, dtype=np.float64)

    if rng.random() < cfg.intensity_shift_prob:
        out = intensity_shift(out, cfg, rng)

    if rng.random() < cfg.shuffle_prob:
        out = local_pixel_shuffle(out, cfg, rng)

    if rng.random() < cfg.paint_prob:
        if rng.random() < cfg.inpaint_rate:
            out = inpaint(out, cfg, rng)
        else:
            out = outpaint(out, cfg, rng)

    return np.clip(out, 0.0, 1.0).astype(dtype, copy=False)


def apply_finetune_augment(image, labels, cfg, rng):
    """
    T_F: random flips (shared by image and labels), brightness, gamma and
    gaussian blurring of the image.
    """
    for axis in range(3):
        if rng.random() < cfg.flip_prob:
            image = Flip(axis).apply(image)
            labels = Flip(axis).apply(labels)
    image = np.array(image, dtype=np.float32)
    labels = np.ascontiguousarray(labels)

    if rng.random() < cfg.brightness_prob:
        image = image * np.float32(rng.uniform(*cfg.brightness_range))

    if rng.random() < cfg.gamma_prob:
        gamma = rng.uniform(*cfg.gamma_range)
        image = np.clip(image, 0.0, 1.0) ** np.float32(gamma)

    if rng.random() < cfg.blur_prob:
        image = gaussian_filter(image, sigma=rng.uniform(*cfg.blur_sigma))

    return np.clip(image, 0.0, 1.0).astype(np.float32), labels

"""
Vector Prediction geometry.

Every crop predicts vectors that start at canonical origin points of the
crop (its center and corners) and end at a per-volume reference landmark.
Vectors are regressed in normalized spherical coordinates
(r / R, theta / pi, phi / pi).

Conventions:
    - coordinates are voxel indices of the volume or crop, axis order
      (x, y, z), voxel centers at integer positions
    - vector directions are expressed in the volume (world) frame, while
      origin indices follow the crop frame: the target of origin m of a
      transformed crop is the vector of the point that origin m had before
      the spatial transform
    - corner m = 1 + bx + 2 * by + 4 * bz, b = 0 for the minimum face and
      b = 1 for the maximum face along that axis
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from ..errors import InvalidArgumentError
from .augment import TransformRecord, invert_point

__all__ = [
    "Landmark",
    "OriginLayout",
    "OriginPointSet",
    "VPTargetSet",
    "IndexPermutation",
    "CENTER_ONLY",
    "CENTER_PLUS_CORNERS",
    "center_plus_k_corners",
    "to_spherical",
    "from_spherical",
    "circumscribing_radius",
    "make_landmark",
    "make_origin_points",
    "vp_targets",
    "permutation_for",
    "denormalize_targets",
    "world_points",
]

logger = logging.getLogger(__name__)

SUPPORTED_CORNER_COUNTS = (0, 1, 4, 8)


@dataclass(frozen=True)
class Landmark:
    position: tuple
    jitter_applied: tuple = (0.0, 0.0, 0.0)

    @property
    def base_position(self):
        return tuple(p - j for p, j in zip(self.position, self.jitter_applied))


@dataclass(frozen=True)
class OriginLayout:
    corners: int

    def __post_init__(self):
        if self.corners not in SUPPORTED_CORNER_COUNTS:
            raise InvalidArgumentError(
                f"Unsupported origin layout with {self.corners!r} corners, "
                f"supported: {SUPPORTED_CORNER_COUNTS}"
            )

    @property
    def n(self):
        return 1 + self.corners

    @property
    def is_full(self):
        return self.corners == 8

    @classmethod
    def from_n_vectors(cls, n_vectors):
        return cls(n_vectors - 1)

    def __str__(self):
        if self.corners == 0:
            return "CENTER_ONLY"
        if self.is_full:
            return "CENTER_PLUS_CORNERS"
        return f"CENTER_PLUS_K_CORNERS({self.corners})"


CENTER_ONLY = OriginLayout(0)
CENTER_PLUS_CORNERS = OriginLayout(8)


def center_plus_k_corners(k):
    return OriginLayout(k)


@dataclass(frozen=True)
class OriginPointSet:
    # (n, 3) crop-local coordinates
    points: np.ndarray
    layout: OriginLayout

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class VPTargetSet:
    # (n, 3) of (r_norm, theta_norm, phi_norm)
    targets: np.ndarray
    R: float

    def __len__(self):
        return len(self.targets)

    def permute(self, permutation):
        return VPTargetSet(self.targets[permutation.mapping], self.R)


@dataclass(frozen=True)
class IndexPermutation:
    mapping: np.ndarray

    def __post_init__(self):
        mapping = np.asarray(self.mapping, dtype=np.int64)
        if sorted(mapping.tolist()) != list(range(len(mapping))):
            raise InvalidArgumentError(f"Not a permutation: {mapping.tolist()}")
        object.__setattr__(self, "mapping", mapping)

    def __call__(self, m):
        return int(self.mapping[m])

    def compose(self, other):
        """(self o other)(m) = self(other(m))"""
        return IndexPermutation(self.mapping[other.mapping])

    def cycles(self):
        seen = set()
        cycles = []
        for start in range(len(self.mapping)):
            if start in seen:
                continue
            cycle = [start]
            seen.add(start)
            nxt = int(self.mapping[start])
            while nxt != start:
                cycle.append(nxt)
                seen.add(nxt)
                nxt = int(self.mapping[nxt])
            cycles.append(tuple(cycle))
        return cycles

    def __eq__(self, other):
        if not isinstance(other, IndexPermutation):
            return NotImplemented
        return np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(self.mapping.tobytes())

    def __str__(self):
        return "".join(
            "(" + " ".join(str(x) for x in cycle) + ")"
            for cycle in self.cycles()
        )


def to_spherical(delta):
    """
    (x, y, z) -> (r, theta, phi), over the last axis of delta.

    theta is the polar angle from +z in [0, pi], phi is the quadrant-aware
    azimuth in [-pi, pi]. theta = 0 when r = 0 and phi = 0 when x = y = 0.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape[-1:] != (3,) or not np.all(np.isfinite(delta)):
        raise InvalidArgumentError(f"Invalid finite 3D vector: {delta!r}")

    # +0.0 turns negative zeros into positive ones: atan2(-0.0, -1) = -pi
    x, y, z = (delta[..., i] + 0.0 for i in range(3))
    rho = np.hypot(x, y)
    r = np.hypot(rho, z)
    # arccos(z / r) in a form that keeps precision near the poles
    theta = np.where(r > 0, np.arctan2(rho, z), 0.0)
    phi = np.where(rho > 0, np.arctan2(y, x), 0.0)
    return np.stack([r, theta, phi], axis=-1)


def from_spherical(spherical):
    spherical = np.asarray(spherical, dtype=np.float64)
    r, theta, phi = (spherical[..., i] for i in range(3))
    sin_theta = np.sin(theta)
    return np.stack(
        [
            r * sin_theta * np.cos(phi),
            r * sin_theta * np.sin(phi),
            r * np.cos(theta),
        ],
        axis=-1,
    )


def _check_extents(extents, name, minimum=1):
    extents = tuple(extents)
    if len(extents) != 3 or any(
        int(e) != e or e < minimum for e in extents
    ):
        raise InvalidArgumentError(
            f"Invalid {name}: {extents!r}, "
            f"expected 3 integer extents >= {minimum}"
        )
    return tuple(int(e) for e in extents)


def circumscribing_radius(volume_shape):
    """Half of the volume's space diagonal, in voxels"""
    volume_shape = _check_extents(volume_shape, "volume shape")
    return math.sqrt(sum(e * e for e in volume_shape)) / 2


def make_landmark(volume_shape, eta, rng, base_position=None):
    """
    Reference landmark: the volume's geometric center (or base_position)
    jittered uniformly by up to eta of the volume extent along each axis.
    """
    volume_shape = _check_extents(volume_shape, "volume shape")
    if not 0 <= eta < 0.5:
        raise InvalidArgumentError(f"eta should be in [0, 0.5), given: {eta!r}")

    if base_position is None:
        base = np.array([(e - 1) / 2 for e in volume_shape])
    else:
        base = np.asarray(base_position, dtype=np.float64)
        if base.shape != (3,) or not np.all(np.isfinite(base)):
            raise InvalidArgumentError(
                f"Invalid landmark base position: {base_position!r}"
            )

    bound = eta * np.asarray(volume_shape, dtype=np.float64)
    jitter = rng.uniform(-bound, bound)
    return Landmark(
        position=tuple(float(x) for x in base + jitter),
        jitter_applied=tuple(float(x) for x in jitter),
    )


def make_origin_points(crop_extents, layout):
    if not isinstance(layout, OriginLayout):
        raise InvalidArgumentError(f"Unsupported origin layout: {layout!r}")
    minimum = 2 if layout.corners else 1
    extents = _check_extents(crop_extents, "crop extents", minimum=minimum)

    points = [[(e - 1) / 2 for e in extents]]
    for m in range(1, layout.corners + 1):
        bits = m - 1
        points.append(
            [
                float((e - 1) * ((bits >> axis) & 1))
                for axis, e in enumerate(extents)
            ]
        )
    return OriginPointSet(np.array(points, dtype=np.float64), layout)


def normalize_spherical(spherical, R):
    r_norm = np.clip(spherical[..., 0] / R, 0.0, 1.0)
    return np.stack(
        [r_norm, spherical[..., 1] / math.pi, spherical[..., 2] / math.pi],
        axis=-1,
    )


def denormalize_targets(targets, R):
    """Normalized targets back to (r, theta, phi); clamped r stays clamped"""
    targets = np.asarray(targets, dtype=np.float64)
    return np.stack(
        [
            targets[..., 0] * R,
            targets[..., 1] * math.pi,
            targets[..., 2] * math.pi,
        ],
        axis=-1,
    )


def world_points(placement, transform, origins):
    """Volume coordinates of the origin points of a transformed crop"""
    transform = TransformRecord() if transform is None else transform
    grid = placement.grid_extents
    # resampled crops: grid corner voxels sit on the true corner voxels
    scale = np.array(
        [
            (true - 1) / (nominal - 1) if nominal > 1 else 1.0
            for true, nominal in zip(placement.extents, grid)
        ]
    )
    offset = np.asarray(placement.offset, dtype=np.float64)
    return np.array(
        [
            offset + invert_point(transform, point, grid) * scale
            for point in origins.points
        ]
    )


def vp_targets(placement, transform, origins, landmark, R):
    if R <= 0:
        raise InvalidArgumentError(f"R should be positive, given: {R!r}")
    world = world_points(placement, transform, origins)
    delta = np.asarray(landmark.position, dtype=np.float64) - world
    return VPTargetSet(normalize_spherical(to_spherical(delta), R), float(R))


def permutation_for(transform, layout):
    """
    Bijection p with: canonical point m of the transformed crop is the
    canonical point p(m) of the crop before transforming.
    """
    if not isinstance(layout, OriginLayout) or not layout.is_full:
        raise InvalidArgumentError(
            f"Permutations are defined for {CENTER_PLUS_CORNERS} only, "
            f"given: {layout}"
        )
    extents = (2, 2, 2)
    origins = make_origin_points(extents, layout)
    lookup = {tuple(p): m for m, p in enumerate(origins.points)}
    mapping = [
        lookup[tuple(invert_point(transform, point, extents))]
        for point in origins.points
    ]
    return IndexPermutation(np.array(mapping))

"""
Procedural phantoms: soft-edged ellipsoid "organs" inside a body envelope.

Organs sit at fixed offsets from the volume center plus gaussian positional
noise, so crops carry position, scale and orientation priors across
phantoms the way anatomy does across patients. Overlapping organs resolve by
the higher label winning.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.special import expit

from ..errors import InvalidArgumentError
from .seeding import seed_for
from .volume import Volume

__all__ = [
    "OrganSpec",
    "PhantomSpec",
    "default_phantom_spec",
    "generate_phantom",
    "generate_phantoms",
    "DEFAULT_ORGANS",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OrganSpec:
    label: int
    # voxels from the volume center
    offset: tuple
    # voxels
    radii: tuple
    intensity: float
    # std of the gaussian positional noise, voxels
    noise_scale: float = 0.0
    name: str = None


# offsets and radii as fractions of the volume shape
DEFAULT_ORGANS = (
    ("liver", (-0.18, 0.05, 0.10), (0.13, 0.11, 0.14), 0.55),
    ("spleen", (0.20, 0.00, 0.12), (0.09, 0.11, 0.09), 0.70),
    ("kidney", (0.00, -0.20, -0.05), (0.16, 0.07, 0.08), 0.85),
    ("aorta", (0.00, 0.17, -0.12), (0.06, 0.06, 0.17), 0.45),
    ("bladder", (-0.14, -0.10, -0.27), (0.07, 0.08, 0.06), 0.95),
    ("heart", (0.14, 0.16, 0.28), (0.09, 0.07, 0.08), 0.65),
)


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    shape: tuple
    organs: tuple = ()
    background: float = 0.02
    background_noise: float = 0.01
    body_radii: tuple = None
    body_intensity: float = 0.25
    texture_noise: float = 0.02
    # voxels over which organ edges blend into surroundings
    edge_width: float = 1.0
    # relative uniform jitter of organ radii
    radius_jitter: float = 0.0

    @property
    def organ_count(self):
        return len(self.organs)

    def validate(self):
        if len(self.shape) != 3 or any(e < 1 for e in self.shape):
            raise InvalidArgumentError(f"Invalid phantom shape: {self.shape!r}")
        labels = [organ.label for organ in self.organs]
        if any(label < 1 for label in labels) or len(set(labels)) != len(
            labels
        ):
            raise InvalidArgumentError(
                f"Organ labels should be distinct positive integers: {labels}"
            )
        if max(labels, default=0) > 255:
            raise InvalidArgumentError(
                f"Organ labels should fit uint8: {labels}"
            )
        center = (np.asarray(self.shape) - 1) / 2
        for organ in self.organs:
            low = center + np.asarray(organ.offset) - np.asarray(organ.radii)
            high = center + np.asarray(organ.offset) + np.asarray(organ.radii)
            if np.any(low < 0) or np.any(high > np.asarray(self.shape) - 1):
                raise InvalidArgumentError(
                    f"Organ {organ.label} doesn't fit the volume {self.shape}"
                )
            if min(organ.radii) <= 0:
                raise InvalidArgumentError(
                    f"Organ {organ.label} radii should be positive"
                )


def default_phantom_spec(seed, shape=(64, 64, 64), noise_fraction=0.02):
    shape = tuple(int(e) for e in shape)
    scale = np.asarray(shape, dtype=np.float64)
    noise = noise_fraction * float(np.mean(scale))
    organs = tuple(
        OrganSpec(
            label=label,
            offset=tuple(float(x) for x in np.asarray(offset) * scale),
            radii=tuple(float(x) for x in np.asarray(radii) * scale),
            intensity=intensity,
            noise_scale=noise,
            name=name,
        )
        for label, (name, offset, radii, intensity) in enumerate(
            DEFAULT_ORGANS, start=1
        )
    )
    return PhantomSpec(
        seed=seed,
        shape=shape,
        organs=organs,
        body_radii=tuple(float(x) for x in scale * (0.46, 0.40, 0.47)),
        radius_jitter=0.08,
    )


def _ellipsoid_distance(grid, center, radii):
    """Normalized ellipsoidal distance, 1 on the surface"""
    return np.sqrt(
        sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii))
    )


def _soft_weight(distance, radii, edge_width):
    # approximate signed distance in voxels, positive inside
    return expit((1.0 - distance) * min(radii) / edge_width)


def generate_phantom(spec):
    """Rendered (Volume, labels), bit-identical for identical specs"""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.shape)
    grid = np.ogrid[tuple(slice(0, e) for e in shape)]
    center = (np.asarray(shape, dtype=np.float64) - 1) / 2

    image = spec.background + rng.normal(0.0, spec.background_noise, shape)
    labels = np.zeros(shape, dtype=np.uint8)

    if spec.body_radii is not None:
        distance = _ellipsoid_distance(grid, center, spec.body_radii)
        weight = _soft_weight(distance, spec.body_radii, spec.edge_width)
        image = image * (1 - weight) + spec.body_intensity * weight

    for organ in sorted(spec.organs, key=lambda o: o.label):
        organ_center = (
            center
            + np.asarray(organ.offset, dtype=np.float64)
            + rng.normal(0.0, organ.noise_scale, 3)
        )
        radii = np.asarray(organ.radii, dtype=np.float64) * (
            1 + rng.uniform(-spec.radius_jitter, spec.radius_jitter, 3)
        )
        distance = _ellipsoid_distance(grid, organ_center, radii)
        weight = _soft_weight(distance, radii, spec.edge_width)
        image = image * (1 - weight) + organ.intensity * weight
        labels[distance <= 1.0] = organ.label

    image = image + rng.normal(0.0, spec.texture_noise, shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    volume = Volume(
        data=image, spacing=(1.0, 1.0, 1.0), name=f"phantom_{spec.seed}"
    )
    return volume, labels


def generate_phantoms(count, shape, seed, start=0):
    """Phantoms number start..start+count-1 of the family seeded by seed"""
    phantoms = []
    for index in range(start, start + count):
        spec = default_phantom_spec(seed_for(seed, index), shape)
        volume, labels = generate_phantom(spec)
        volume.name = f"phantom_{index:03d}"
        phantoms.append((volume, labels))
    logger.info("Generated %d phantoms of shape %s", count, tuple(shape))
    return phantoms

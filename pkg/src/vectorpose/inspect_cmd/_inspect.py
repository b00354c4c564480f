"""
Debugging views of the pretext targets: a table of origin points, their
volume coordinates, raw vectors and normalized targets for one crop, and
edge maps of volumes.
"""

from dataclasses import dataclass
from pathlib import Path
import csv
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..errors import ConfigError
from ..lib.augment import AXES, PLANES, Flip, Rot90, TransformRecord
from ..lib.augment import apply_spatial
from ..lib.boundary import boundary_target
from ..lib.geometry import (
    OriginLayout,
    circumscribing_radius,
    make_landmark,
    make_origin_points,
    vp_targets,
    world_points,
)
from ..lib.seeding import rng_for
from ..lib.volume import Volume, crop_at, save_volume

__all__ = [
    "TargetInspection",
    "TABLE_COLUMNS",
    "parse_crop_spec",
    "parse_transform",
    "inspect_targets",
    "write_targets_table",
    "plot_targets",
    "edge_map",
    "write_edges",
]

logger = logging.getLogger(__name__)

TABLE_COLUMNS = (
    "m",
    "origin_x",
    "origin_y",
    "origin_z",
    "world_x",
    "world_y",
    "world_z",
    "vector_x",
    "vector_y",
    "vector_z",
    "r_norm",
    "theta_norm",
    "phi_norm",
)


def parse_crop_spec(spec):
    """'ox,oy,oz:ex,ey,ez' into (offset, extents)"""
    try:
        offset, extents = (
            tuple(int(v) for v in part.split(",")) for part in spec.split(":")
        )
    except ValueError:
        raise ConfigError(
            "--crop", f"should be ox,oy,oz:ex,ey,ez, given: {spec!r}"
        ) from None
    if len(offset) != 3 or len(extents) != 3:
        raise ConfigError(
            "--crop", f"should have 3 offsets and 3 extents, given: {spec!r}"
        )
    return offset, extents


def parse_transform(flips=(), rotations=()):
    """Flips ('x', 'y', 'z') first, then rotations ('xy:1', 'yz:3', ...)"""
    ops = []
    for axis in flips:
        if axis not in AXES:
            raise ConfigError(
                "--flip", f"should be one of {list(AXES)}, given: {axis!r}"
            )
        ops.append(Flip(AXES.index(axis)))
    for rotation in rotations:
        plane, _, k = rotation.partition(":")
        if plane not in PLANES or k not in ("", "1", "2", "3"):
            raise ConfigError(
                "--rot", f"should be plane[:k], given: {rotation!r}"
            )
        ops.append(Rot90(plane, int(k or 1)))
    return TransformRecord(tuple(ops))


@dataclass
class TargetInspection:
    crop: np.ndarray
    placement: object
    transform: TransformRecord
    landmark: object
    R: float
    origins: np.ndarray
    world: np.ndarray
    vectors: np.ndarray
    targets: np.ndarray

    def rows(self):
        for m in range(len(self.origins)):
            yield [
                m,
                *self.origins[m],
                *self.world[m],
                *self.vectors[m],
                *self.targets[m],
            ]


def inspect_targets(
    volume,
    offset,
    extents,
    transform=None,
    *,
    eta=0.05,
    seed=0,
    n_vectors=9,
    base_position=None,
):
    """
    Targets of the crop at offset, after transform. The landmark jitter
    draws from the stream of seed.
    """
    transform = TransformRecord() if transform is None else transform
    landmark = make_landmark(volume.shape, eta, rng_for(seed), base_position)
    crop, placement = crop_at(volume, offset, extents)
    transformed = apply_spatial(crop, transform)

    layout = OriginLayout.from_n_vectors(n_vectors)
    origins = make_origin_points(transformed.shape, layout)
    R = circumscribing_radius(volume.shape)
    world = world_points(placement, transform, origins)
    targets = vp_targets(placement, transform, origins, landmark, R)
    return TargetInspection(
        crop=transformed,
        placement=placement,
        transform=transform,
        landmark=landmark,
        R=R,
        origins=origins.points,
        world=world,
        vectors=np.asarray(landmark.position) - world,
        targets=targets.targets,
    )


def write_targets_table(path, inspection):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        out = csv.writer(f)
        out.writerow(TABLE_COLUMNS)
        for row in inspection.rows():
            out.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    logger.info("Targets table: %s", path)
    return path


def _mid_slice(data):
    return data[:, :, data.shape[2] // 2].T


def plot_targets(path, volume, inspection):
    """Crop, its boundary target and the vectors over the volume slice"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    landmark = np.asarray(inspection.landmark.position)
    z = int(np.clip(round(landmark[2]), 0, volume.shape[2] - 1))

    fig, axes = plt.subplots(1, 3, figsize=(15, 5))
    axes[0].imshow(_mid_slice(inspection.crop), cmap="gray", origin="lower")
    axes[0].set_title(f"crop, {inspection.transform}")
    edges = boundary_target(inspection.crop).magnitude
    axes[1].imshow(_mid_slice(edges), cmap="magma", origin="lower")
    axes[1].set_title("boundary target")

    axes[2].imshow(volume.data[:, :, z].T, cmap="gray", origin="lower")
    x0, y0, _ = inspection.placement.offset
    ex, ey, _ = inspection.placement.extents
    axes[2].add_patch(
        plt.Rectangle((x0, y0), ex - 1, ey - 1, fill=False, color="yellow")
    )
    for start, vector in zip(inspection.world, inspection.vectors):
        axes[2].arrow(
            start[0],
            start[1],
            vector[0],
            vector[1],
            color="cyan",
            width=0.2,
            length_includes_head=True,
        )
    axes[2].plot(landmark[0], landmark[1], "r+", markersize=12)
    axes[2].set_title(f"vectors, z = {z}")
    for ax in axes:
        ax.set_xlabel("x")
        ax.set_ylabel("y")

    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    logger.info("Targets figure: %s", path)
    return path


def edge_map(volume, offset=None, extents=None):
    """Boundary target of the whole volume or of a crop of it"""
    data = volume.data
    if offset is not None:
        data, _ = crop_at(volume, offset, extents)
    return data, boundary_target(data).magnitude


def write_edges(
    out_dir, volume, data, edges, figures_dir=None, suffix=".nii.gz"
):
    out_dir = Path(out_dir)
    name = volume.name or "volume"
    path = save_volume(
        Volume(data=edges, spacing=volume.spacing, name=f"{name}_edges"),
        out_dir / f"{name}_edges{suffix}",
    )
    logger.info("Edge map: %s", path)
    if figures_dir is not None:
        figure_path = Path(figures_dir) / f"{name}_edges.png"
        figure_path.parent.mkdir(parents=True, exist_ok=True)
        fig, axes = plt.subplots(1, 2, figsize=(10, 5))
        axes[0].imshow(_mid_slice(data), cmap="gray", origin="lower")
        axes[0].set_title(name)
        axes[1].imshow(_mid_slice(edges), cmap="magma", origin="lower")
        axes[1].set_title("boundary target")
        fig.tight_layout()
        fig.savefig(figure_path, dpi=100)
        plt.close(fig)
        logger.info("Edge figure: %s", figure_path)
    return path

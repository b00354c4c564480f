"""
Ablation over the pretext components.

Cells, from the plain-reconstruction control up to the complete method:

    name        voxel rec.  boundary rec.  center vector  corner vectors
    voxel           x
    boundary        x            x
    center          x            x              x
    corners-1       x            x              x               1
    corners-4       x            x              x               4
    full            x            x              x               8

Every cell pretrains with the shared pretraining seed and fine-tunes over the
same run seeds, so cells differ by their pretext tasks only.
"""

from dataclasses import dataclass, replace
from pathlib import Path
import csv
import logging

from ..errors import InvalidArgumentError
from ..finetune_cmd import aggregate_runs, finetune
from ..lib.checkpoint import load_checkpoint
from ..lib.losses import RECONSTRUCTION_CRITERIA
from ..lib.metrics import MetricsWriter
from ..pretrain_cmd import pretrain

__all__ = [
    "AblationCell",
    "AblationRow",
    "DEFAULT_CELLS",
    "TABLE_NAME",
    "run_ablation",
    "write_ablation_table",
    "format_ablation_table",
]

logger = logging.getLogger(__name__)

TABLE_NAME = "ablation.csv"
TABLE_COLUMNS = (
    "cell",
    "voxel_rec",
    "boundary_rec",
    "center_vector",
    "corner_vectors",
    "mean_dice",
    "std_dice",
    "runs",
)


@dataclass(frozen=True)
class AblationCell:
    name: str
    boundary: bool
    n_vectors: int

    @property
    def center_vector(self):
        return self.n_vectors > 0

    @property
    def corner_vectors(self):
        return max(self.n_vectors - 1, 0)

    def apply(self, config, reconstruction="l1"):
        """config with this cell's pretext tasks"""
        pretrain = replace(config.pretrain, boundary=self.boundary)
        if not self.boundary and not self.n_vectors:
            pretrain = replace(pretrain, reconstruction=reconstruction)
        return replace(
            config,
            pretrain=pretrain,
            network=replace(config.network, n_vectors=self.n_vectors),
        )


DEFAULT_CELLS = (
    AblationCell("voxel", boundary=False, n_vectors=0),
    AblationCell("boundary", boundary=True, n_vectors=0),
    AblationCell("center", boundary=True, n_vectors=1),
    AblationCell("corners-1", boundary=True, n_vectors=2),
    AblationCell("corners-4", boundary=True, n_vectors=5),
    AblationCell("full", boundary=True, n_vectors=9),
)


@dataclass
class AblationRow:
    cell: AblationCell
    mean_dice: float
    std_dice: float
    runs: int

    def to_row(self):
        return [
            self.cell.name,
            "x",
            "x" if self.cell.boundary else "",
            "x" if self.cell.center_vector else "",
            self.cell.corner_vectors or "",
            repr(self.mean_dice),
            repr(self.std_dice),
            self.runs,
        ]


def _check_cells(cells):
    if not cells:
        raise InvalidArgumentError("Ablation grid is empty")
    names = [cell.name for cell in cells]
    if len(set(names)) != len(names):
        raise InvalidArgumentError(f"Ablation cell names repeat: {names}")


def run_ablation(
    config,
    dataset,
    out_dir,
    *,
    cells=DEFAULT_CELLS,
    reconstruction="l1",
    deterministic=False,
):
    """
    Pretrains and fine-tunes every cell in order. Each cell writes its runs
    into out_dir/<cell name>/. Returns AblationRows in cell order.
    """
    _check_cells(cells)
    if reconstruction not in RECONSTRUCTION_CRITERIA:
        raise InvalidArgumentError(
            f"Unknown reconstruction criterion: {reconstruction!r}"
        )
    out_dir = Path(out_dir)
    volumes = [case.volume for case in dataset.training]

    rows = []
    for index, cell in enumerate(cells, start=1):
        logger.info("Ablation cell %d/%d: %s", index, len(cells), cell.name)
        cell_config = cell.apply(config, reconstruction)
        cell_dir = out_dir / cell.name
        cell_config.save(cell_dir)

        result = pretrain(
            cell_config,
            volumes,
            cell_dir / "pretrain",
            deterministic=deterministic,
            config_hash=cell_config.config_hash,
        )
        pretrained = load_checkpoint(result.checkpoint)

        finetune_dir = cell_dir / "finetune"
        with MetricsWriter(
            finetune_dir / cell_config.output.metrics_file
        ) as writer:
            runs = [
                finetune(
                    pretrained,
                    cell_config,
                    dataset,
                    finetune_dir,
                    run=run,
                    deterministic=deterministic,
                    writer=writer,
                    config_hash=cell_config.config_hash,
                )
                for run in range(cell_config.finetune.runs)
            ]
        aggregate = aggregate_runs(runs)
        logger.info("Cell %s: mean Dice %s", cell.name, aggregate)
        rows.append(
            AblationRow(
                cell=cell,
                mean_dice=aggregate.mean,
                std_dice=aggregate.std,
                runs=aggregate.count,
            )
        )
    return rows


def write_ablation_table(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        out = csv.writer(f)
        out.writerow(TABLE_COLUMNS)
        for row in rows:
            out.writerow(row.to_row())
    logger.info("Ablation table: %s", path)
    return path


def format_ablation_table(rows):
    """Plain text rendering with one column per cell"""
    header = ["", *(row.cell.name for row in rows)]
    lines = [
        ["voxel rec."] + ["x" for _ in rows],
        ["boundary rec."] + ["x" if r.cell.boundary else "" for r in rows],
        ["center vector"] + ["x" if r.cell.center_vector else "" for r in rows],
        ["corner vectors"] + [str(r.cell.corner_vectors or "") for r in rows],
        ["mean Dice"]
        + [f"{r.mean_dice:.4f} ± {r.std_dice:.4f}" for r in rows],
    ]
    table = [header] + lines
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip()
        for line in table
    )

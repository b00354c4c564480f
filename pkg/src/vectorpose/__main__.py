"""
Pretraining features:
    - Vector Prediction and Boundary-Focused Reconstruction pretext tasks
    - procedural phantoms as a zero-data benchmark
    - deterministic, resumable runs

Outputs of a command go under --out:
    config.json, metrics.jsonl, checkpoints/, tables/*.csv, figures/*.png

Exit codes: 0 ok, 1 failure, 2 config or usage error, 3 diverged training,
4 incompatible checkpoint, 5 internal error.
"""

from pathlib import Path
import argparse
import json
import logging
import sys

from . import __version__ as project_version
from .ablation_cmd import (
    TABLE_NAME as ABLATION_TABLE,
    format_ablation_table,
    run_ablation,
    write_ablation_table,
)
from .codes import ExitCodes
from .config import load_config
from .errors import (
    ConfigError,
    DivergedTrainingError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
    VolumeIOError,
)
from .finetune_cmd import (
    aggregate_runs,
    evaluate_cases,
    finetune,
    load_segmentation_model,
    summarize_dice,
    write_dice_table,
    write_runs_table,
)
from .inspect_cmd import (
    edge_map,
    inspect_targets,
    parse_crop_spec,
    parse_transform,
    plot_targets,
    write_edges,
    write_targets_table,
)
from .lib.checkpoint import load_checkpoint
from .lib.dataset import PHANTOM_SOURCE, load_dataset
from .lib.metrics import MetricsWriter
from .lib.phantom import generate_phantoms
from .lib.volume import load_volume, normalize
from .phantoms_cmd import make_phantoms
from .pretrain_cmd import pretrain

logger = logging.getLogger(Path(__file__).parent.name)


def resolve_config(args, *overrides):
    """RunConfig of --config, CLI options and --set (in this order)"""
    cli_overrides = [o for o in overrides if o is not None]
    cli_overrides.extend(getattr(args, "overrides", None) or [])
    return load_config(args.config, cli_overrides)


def data_override(args):
    data = getattr(args, "data", None)
    if data is None:
        return None
    return f"data.source={json.dumps(data)}"


def seed_override(args, section):
    if getattr(args, "seed", None) is None:
        return None
    return f"{section}.seed={args.seed}"


def pretrain_command(args):
    config = resolve_config(
        args, data_override(args), seed_override(args, "pretrain")
    )
    config.save(args.out)
    resume = None if args.resume is None else load_checkpoint(args.resume)
    dataset = load_dataset(config.data)
    pretrain(
        config,
        [case.volume for case in dataset.training],
        args.out,
        deterministic=args.deterministic,
        config_hash=config.config_hash,
        resume=resume,
    )


def finetune_command(args):
    overrides = [data_override(args), seed_override(args, "finetune")]
    if args.fraction is not None:
        overrides.append(f"finetune.fraction={args.fraction}")
    if args.runs is not None:
        overrides.append(f"finetune.runs={args.runs}")
    if args.any_fraction:
        overrides.append("finetune.any_fraction=true")
    config = resolve_config(args, *overrides)
    config.save(args.out)

    pretrained = None
    if not args.from_scratch:
        pretrained = load_checkpoint(args.checkpoint)
        if pretrained.kind != "pretrain":
            raise IncompatibleCheckpointError(
                {"mismatched": [f"kind: {pretrained.kind!r} != 'pretrain'"]},
                reason=str(args.checkpoint),
            )
    init = "random_init" if pretrained is None else "pretrained"

    dataset = load_dataset(config.data)
    out = Path(args.out)
    with MetricsWriter(out / config.output.metrics_file) as writer:
        runs = [
            finetune(
                pretrained,
                config,
                dataset,
                out,
                run=run,
                deterministic=args.deterministic,
                writer=writer,
                config_hash=config.config_hash,
            )
            for run in range(config.finetune.runs)
        ]

    for r in runs:
        logger.info(
            "Run %d: best Dice %.4f at epoch %d",
            r.run,
            r.best_dice,
            r.best_epoch,
        )
    logger.info(
        "%s, fraction %s: mean best Dice %s",
        init,
        config.finetune.fraction,
        aggregate_runs(runs),
    )
    write_runs_table(
        out / config.output.tables_dir / "finetune_runs.csv", runs, init
    )


def evaluate_command(args):
    config = resolve_config(args, data_override(args))
    config.save(args.out)
    checkpoint = load_checkpoint(args.checkpoint)
    model = load_segmentation_model(checkpoint, config.network)

    dataset = load_dataset(config.data)
    labeled = [case for case in dataset.test if case.labels is not None]
    if not labeled:
        return RunnerResult(
            status=ExitCodes.FAILURE,
            message="no labeled test volumes to evaluate",
            log=logger.info,
        )
    results = evaluate_cases(
        model,
        labeled,
        config.network.num_classes,
        config.finetune.crop_extents,
    )
    per_class, mean = summarize_dice(results)
    for label, value in enumerate(per_class, start=1):
        logger.info(
            "Class %d (%s): %s",
            label,
            dataset.class_names.get(label, ""),
            "absent" if value is None else f"{value:.4f}",
        )
    logger.info("Mean foreground Dice: %.4f", mean)
    write_dice_table(
        Path(args.out) / config.output.tables_dir / "evaluate.csv",
        labeled,
        results,
        dataset.class_names,
    )
    return None


def ablation_command(args):
    config = resolve_config(
        args, data_override(args), seed_override(args, "pretrain")
    )
    config.save(args.out)
    dataset = load_dataset(config.data)
    rows = run_ablation(
        config,
        dataset,
        args.out,
        reconstruction=args.reconstruction,
        deterministic=args.deterministic,
    )
    write_ablation_table(
        Path(args.out) / config.output.tables_dir / ABLATION_TABLE, rows
    )
    sys.stdout.write(format_ablation_table(rows) + "\n")


def make_phantoms_command(args):
    overrides = []
    if args.count is not None:
        overrides.append(f"data.phantom_count={args.count}")
    if args.test_count is not None:
        overrides.append(f"data.phantom_test_count={args.test_count}")
    if args.shape is not None:
        overrides.append(f"data.phantom_shape={list(args.shape)}")
    if args.seed is not None:
        overrides.append(f"data.phantom_seed={args.seed}")
    config = resolve_config(args, *overrides)
    make_phantoms(config.data, args.out, suffix=args.suffix)


def read_volume(args, config):
    """Normalized --volume: a file or phantom number 0 of the config"""
    if args.volume == PHANTOM_SOURCE:
        volume, _ = generate_phantoms(
            1, config.data.phantom_shape, config.data.phantom_seed
        )[0]
    else:
        volume = load_volume(args.volume)
    return normalize(volume, config.data.clip_lo_pct, config.data.clip_hi_pct)


def inspect_targets_command(args):
    config = resolve_config(args)
    config.save(args.out)
    offset, extents = parse_crop_spec(args.crop)
    transform = parse_transform(args.flips, args.rotations)
    volume = read_volume(args, config)
    eta = config.pretrain.eta if args.eta is None else args.eta
    if not 0 <= eta < 0.5:
        raise ConfigError("--eta", f"should be in [0, 0.5), given: {eta!r}")

    try:
        inspection = inspect_targets(
            volume,
            offset,
            extents,
            transform,
            eta=eta,
            seed=0 if args.seed is None else args.seed,
            n_vectors=args.n_vectors,
            base_position=config.data.landmark_base,
        )
    except InvalidArgumentError as e:
        raise ConfigError("--crop", str(e)) from None

    out = Path(args.out)
    write_targets_table(
        out / config.output.tables_dir / "targets.csv", inspection
    )
    if config.output.save_figures and not args.no_figures:
        plot_targets(
            out / config.output.figures_dir / "targets.png", volume, inspection
        )


def edges_command(args):
    config = resolve_config(args)
    config.save(args.out)
    volume = read_volume(args, config)
    offset = extents = None
    if args.crop is not None:
        offset, extents = parse_crop_spec(args.crop)
    try:
        data, edges = edge_map(volume, offset, extents)
    except InvalidArgumentError as e:
        raise ConfigError("--crop", str(e)) from None

    out = Path(args.out)
    figures_dir = None
    if config.output.save_figures and not args.no_figures:
        figures_dir = out / config.output.figures_dir
    write_edges(out, volume, data, edges, figures_dir, suffix=args.suffix)


class RunnerResult:
    def __init__(
        self, status, message, log, *, exception=None, print_traceback=False
    ):
        self.status = status
        self.message = message
        self.log = log
        self.exception = exception
        self.print_traceback = print_traceback

    def report(self):
        status_msg = "Command's result: %(status)s"
        if self.message is not None:
            status_msg += " (%(message)s)"
        self.log(
            status_msg, {"status": self.status.name, "message": self.message}
        )

        if self.exception is not None:
            error_msg = "Command's error:"
            if self.print_traceback:
                self.log(error_msg, exc_info=self.exception)
            else:
                self.log(f"{error_msg} %s", str(self.exception))


# expected failures, most specific first
EXPECTED_ERRORS = (
    (ConfigError, ExitCodes.CONFIG_ERROR, "invalid config"),
    (InvalidArgumentError, ExitCodes.CONFIG_ERROR, "invalid argument"),
    (DivergedTrainingError, ExitCodes.DIVERGED, "training diverged"),
    (
        IncompatibleCheckpointError,
        ExitCodes.CHECKPOINT_ERROR,
        "incompatible checkpoint",
    ),
    (VolumeIOError, ExitCodes.FAILURE, "unreadable volume"),
)


def run(command):
    def wrapped(args, parser):
        try:
            result = command(args)
        except Exception as e:
            for error_type, status, message in EXPECTED_ERRORS:
                if isinstance(e, error_type):
                    result = RunnerResult(
                        status=status,
                        message=message,
                        log=logger.error,
                        exception=e,
                    )
                    break
            else:
                result = RunnerResult(
                    status=ExitCodes.INTERNAL_ERROR,
                    message="internal error happened",
                    log=logger.error,
                    exception=e,
                    print_traceback=True,
                )
        if result is None:
            result = RunnerResult(
                status=ExitCodes.OK,
                message=None,
                log=logger.info,
            )

        result.report()
        sys.exit(result.status)

    return wrapped


class MainArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        """Overrides default exit code(2) with our"""
        try:
            super().error(message)
        except SystemExit as e:
            e.code = ExitCodes.CONFIG_ERROR
            raise


def add_config_arguments(parser):
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="JSON run config (default: built-in defaults)",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help=(
            "override a config key, the value is parsed as JSON "
            "(may be repeated)"
        ),
    )


def add_run_arguments(parser, out_help):
    add_config_arguments(parser)
    parser.add_argument(
        "--data",
        type=str,
        default=None,
        help=(
            f"dataset directory or '{PHANTOM_SOURCE}' "
            "(default: data.source of the config)"
        ),
    )
    parser.add_argument("--out", type=Path, required=True, help=out_help)
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="seed of the run (default: seed of the config)",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="use deterministic algorithms only, omit wall time from metrics",
    )


def add_volume_arguments(parser):
    add_config_arguments(parser)
    parser.add_argument(
        "--volume",
        type=str,
        default=PHANTOM_SOURCE,
        help=(
            f"NIfTI or raw volume, or '{PHANTOM_SOURCE}' for the first "
            f"phantom of the config (default: {PHANTOM_SOURCE})"
        ),
    )
    parser.add_argument("--out", type=Path, required=True, help="output dir")
    parser.add_argument(
        "--no-figures",
        action="store_true",
        help="don't write PNG figures",
    )


def main_parser(prog):
    parser = MainArgumentParser(
        description=(
            "Self-supervised pretraining of 3D encoder-decoders with vector "
            "prediction and boundary-focused reconstruction, fine-tuning and "
            "evaluation on labeled volumes"
        ),
        prog=prog,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="verbose output",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=project_version,
    )

    subparsers = parser.add_subparsers(
        title="subcommands",
        help="--help for additional help",
        required=True,
    )

    # pretrain subcli
    parser_pretrain = subparsers.add_parser(
        "pretrain",
        description=(
            "Pretrain the encoder-decoder on unlabeled training volumes. "
            "Writes checkpoints every pretrain.checkpoint_every epochs and at "
            "the end, per-step metrics and the resolved config."
        ),
    )
    add_run_arguments(parser_pretrain, "output directory")
    parser_pretrain.add_argument(
        "--resume",
        type=Path,
        default=None,
        help="pretrain checkpoint to resume from (default: None)",
    )
    parser_pretrain.set_defaults(main=run(pretrain_command))

    # finetune subcli
    parser_finetune = subparsers.add_parser(
        "finetune",
        description=(
            "Fine-tune a segmentation network on a fraction of the labeled "
            "training volumes over several seeded runs and report the mean "
            "and standard deviation of the best test Dice."
        ),
    )
    add_run_arguments(parser_finetune, "output directory")
    init = parser_finetune.add_mutually_exclusive_group(required=True)
    init.add_argument(
        "--checkpoint",
        type=Path,
        help="pretrain checkpoint to transfer the encoder-decoder from",
    )
    init.add_argument(
        "--from-scratch",
        action="store_true",
        help="random initialization (baseline)",
    )
    parser_finetune.add_argument(
        "--fraction",
        type=float,
        default=None,
        help="fraction of labeled training volumes (default: from config)",
    )
    parser_finetune.add_argument(
        "--any-fraction",
        action="store_true",
        help="allow fractions other than 0.1, 0.25, 0.5 and 1.0",
    )
    parser_finetune.add_argument(
        "--runs",
        type=int,
        default=None,
        help="number of seeded runs (default: from config)",
    )
    parser_finetune.set_defaults(main=run(finetune_command))

    # evaluate subcli
    parser_evaluate = subparsers.add_parser(
        "evaluate",
        description="Test-split Dice of a fine-tuned checkpoint.",
    )
    add_config_arguments(parser_evaluate)
    parser_evaluate.add_argument(
        "--data", type=str, default=None, help="dataset directory or 'phantom'"
    )
    parser_evaluate.add_argument(
        "--out", type=Path, required=True, help="output directory"
    )
    parser_evaluate.add_argument(
        "--checkpoint",
        type=Path,
        required=True,
        help="fine-tuned checkpoint",
    )
    parser_evaluate.set_defaults(main=run(evaluate_command))

    # ablation subcli
    parser_ablation = subparsers.add_parser(
        "ablation",
        description=(
            "Pretrain and fine-tune over the pretext components: voxel "
            "reconstruction, boundary reconstruction, center vector and "
            "corner vectors."
        ),
    )
    add_run_arguments(parser_ablation, "output directory")
    parser_ablation.add_argument(
        "--reconstruction",
        choices=("l1", "l2"),
        default="l1",
        help="voxel criterion of the reconstruction-only cell",
    )
    parser_ablation.set_defaults(main=run(ablation_command))

    # make-phantoms subcli
    parser_phantoms = subparsers.add_parser(
        "make-phantoms",
        description=(
            "Write the phantom set of the config as a dataset directory "
            "(images/, labels/, dataset.json)."
        ),
    )
    add_config_arguments(parser_phantoms)
    parser_phantoms.add_argument(
        "--out", type=Path, required=True, help="dataset directory"
    )
    parser_phantoms.add_argument("--count", type=int, help="training phantoms")
    parser_phantoms.add_argument("--test-count", type=int, help="test phantoms")
    parser_phantoms.add_argument(
        "--shape", type=int, nargs=3, metavar=("X", "Y", "Z")
    )
    parser_phantoms.add_argument("--seed", type=int, help="phantom seed")
    parser_phantoms.add_argument(
        "--suffix",
        choices=(".nii.gz", ".nii", ".vpraw"),
        default=".nii.gz",
        help="volume format",
    )
    parser_phantoms.set_defaults(main=run(make_phantoms_command))

    # inspect-targets subcli
    parser_inspect = subparsers.add_parser(
        "inspect-targets",
        description=(
            "Write origin points, their volume coordinates, raw vectors and "
            "normalized targets of one crop as CSV, plus figures."
        ),
    )
    add_volume_arguments(parser_inspect)
    parser_inspect.add_argument(
        "--crop",
        required=True,
        help="crop as ox,oy,oz:ex,ey,ez",
    )
    parser_inspect.add_argument(
        "--seed", type=int, default=None, help="landmark jitter seed"
    )
    parser_inspect.add_argument(
        "--eta",
        type=float,
        default=None,
        help="landmark jitter (default: pretrain.eta)",
    )
    parser_inspect.add_argument(
        "--flip",
        dest="flips",
        action="append",
        choices=("x", "y", "z"),
        default=[],
        help="flip the crop along an axis (may be repeated)",
    )
    parser_inspect.add_argument(
        "--rot",
        dest="rotations",
        action="append",
        default=[],
        metavar="PLANE[:K]",
        help="quarter turns in xy, xz or yz, applied after flips",
    )
    parser_inspect.add_argument(
        "--n-vectors",
        type=int,
        choices=(1, 2, 5, 9),
        default=9,
        help="origin points: the center plus n - 1 corners",
    )
    parser_inspect.set_defaults(main=run(inspect_targets_command))

    # edges subcli
    parser_edges = subparsers.add_parser(
        "edges",
        description="Write the boundary target of a volume or crop.",
    )
    add_volume_arguments(parser_edges)
    parser_edges.add_argument(
        "--crop", default=None, help="crop as ox,oy,oz:ex,ey,ez"
    )
    parser_edges.add_argument(
        "--suffix",
        choices=(".nii.gz", ".nii", ".vpraw"),
        default=".nii.gz",
        help="edge map format",
    )
    parser_edges.set_defaults(main=run(edges_command))

    return parser


def emit_less_than_warning(record):
    # nonzero if record should be logged
    return record.levelno < logging.WARNING


def setup_logging(verbose=False):
    # emit WARNING, ERROR and CRITICAL to stderr
    stderr_handler = logging.StreamHandler(sys.stderr)
    stderr_handler.setLevel(logging.WARNING)

    # emit DEBUG and INFO to stdout
    stdout_handler = logging.StreamHandler(sys.stdout)
    stdout_handler.addFilter(emit_less_than_warning)

    if verbose:
        log_level = logging.DEBUG
        log_format = "%(levelname)-8s : %(name)s : %(message)s"
    else:
        log_level = logging.INFO
        log_format = "%(levelname)-8s : %(message)s"

    logging.basicConfig(
        format=log_format,
        handlers=(stdout_handler, stderr_handler),
        level=log_level,
    )


def main(cli_args, prog=f"python -m {__package__}"):
    parser = main_parser(prog)
    args = parser.parse_args(cli_args)
    setup_logging(args.verbose)

    args.main(args, parser)


def entry_point():
    main(sys.argv[1:], prog="vectorpose")


if __name__ == "__main__":
    main(sys.argv[1:])

"""The depthdecode command line."""
import argparse
import json
import logging
from pathlib import Path
import sys
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .__version__ import __version__
from .analysis import VdsiReport, compute_vdsi, roi_comparison
from .benchmark import build_benchmark
from .checkpoint import checkpoint_paths, load_checkpoint, save_checkpoint
from .config import Config, dump_config, load_config
from .const import (
    CHECKPOINT_SUFFIX,
    FMRI_DIR,
    PNG_SUFFIX,
    RASTER_SUFFIX,
    REGION_SET_ALL,
    REGION_SET_HVC,
    REGION_SET_LVC,
    SPLITS,
    VOXEL_TABLE,
)
from .dataset import load_dataset, normalize_splits
from .depth import (
    DepthEstimator,
    ingest_precomputed_depth,
    synthetic_rgbd,
    train_depth_estimator,
)
from .encdec import Decoder, Encoder
from .errors import (
    CheckpointError,
    ChannelModeError,
    ConfigError,
    ConsistencyError,
    DepthDecodeError,
    OutputExistsError,
    TrainingDivergedError,
)
from .evaluation import (
    evaluate_testset,
    indirect_depth_eval,
    read_report,
    summary_table,
    write_report,
)
from .fileio import read_voxel_table, write_png, write_raster
from .perceptual import FeatureExtractor, make_shape_dataset, pretrain_classifier
from .plotting import plot_ranks, plot_tradeoff, plot_vdsi_scatter
from .run import LOG_FORMAT, RunDirectory
from .sample import ChannelMode, VoxelMask, stack_stimuli
from .training import (
    DEPTH_LOSS_KINDS,
    train_decoder_phase2,
    train_encoder_phase1,
    train_rgb_only_with_depth_constraint,
)

_LOGGER = logging.getLogger(__name__)

MODES = tuple(mode.value for mode in ChannelMode)
EVAL_MODES = MODES + ("indirect",)
SUPERVISED_SUFFIX = "-supervised"


def _n_list(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value}") from err


def _stem(path: str) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix == CHECKPOINT_SUFFIX else path


def _model(stem: Path, model_class: type, device: str = "cpu"):
    weights = _checkpoint_input(stem)
    model, _ = load_checkpoint(stem, map_location=device)
    if not isinstance(model, model_class):
        raise CheckpointError(
            f"{weights} holds a {type(model).__name__}, expected a {model_class.__name__}"
        )
    return model


def _checkpoint_input(stem: Path) -> Path:
    weights, _ = checkpoint_paths(stem)
    if not weights.is_file():
        raise CheckpointError(f"Checkpoint not found: {weights}")
    return weights


def _save(stem: Path, run: RunDirectory, model, seed: int, metrics: Dict) -> None:
    weights, manifest = checkpoint_paths(stem)
    save_checkpoint(stem, model, seed=seed, **metrics)
    run.output(weights)
    run.output(manifest)


def _run(
    args: argparse.Namespace,
    config: Config,
    name: str,
    inputs: Sequence[Path] = (),
    default_root: Optional[Path] = None,
) -> RunDirectory:
    if args.run_dir:
        root = Path(args.run_dir)
    else:
        root = default_root or Path(config.paths.runs) / name
    return RunDirectory(
        root,
        args.command,
        config,
        inputs=inputs,
        argv=args.argv,
        resume=args.resume,
        force=args.force,
    )


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def gen_scenes(args: argparse.Namespace, config: Config) -> int:
    """Render seeded scenes as images/<id>.png plus depth/<id>.ddr."""
    out = Path(args.out)
    images, depths = out / "images", out / "depth"
    if not (args.force or args.resume) and any(d.is_dir() and any(d.iterdir()) for d in (images, depths)):
        raise OutputExistsError(f"{out} already holds scenes; pass --force")
    max_objects = args.max_objects or config.depth_estimator.max_objects
    with _run(args, config, "gen-scenes") as run:
        if run.skip:
            return 0
        images.mkdir(parents=True, exist_ok=True)
        depths.mkdir(parents=True, exist_ok=True)
        rasters = synthetic_rgbd(args.count, args.seed, config.data.resolution, max_objects)
        for idx, raster in enumerate(rasters):
            stem = f"scene_{idx:05d}"
            write_png(images / f"{stem}{PNG_SUFFIX}", raster[:3])
            write_raster(depths / f"{stem}{RASTER_SUFFIX}", raster[3:])
        run.output_root(out)
        _LOGGER.info("Wrote %s scenes to %s", len(rasters), out)
    return 0


def gen_benchmark(args: argparse.Namespace, config: Config) -> int:
    """Build the synthetic scene and simulated-brain benchmark."""
    out = Path(args.out or config.data.root)
    with _run(args, config, "gen-benchmark") as run:
        if run.skip:
            return 0
        manifest = build_benchmark(config, out, force=args.force)
        run.output_root(out)
        _emit({"benchmark": str(out), "manifest": str(manifest)})
    return 0


def pretrain_features(args: argparse.Namespace, config: Config) -> int:
    """Pretrain the recognition network of one channel mode."""
    mode = ChannelMode(args.mode)
    stem = config.paths.resolve("features", mode=mode.value)
    with _run(args, config, f"pretrain-features-{mode.value}", default_root=stem.parent) as run:
        if run.skip:
            return 0
        samples, labels = make_shape_dataset(
            config.features.samples, config.features.seed, config.data.resolution, mode
        )
        result = pretrain_classifier(
            samples, labels, config.features, config.training.device, run.progress
        )
        _save(stem, run, result.model, config.features.seed, result.metrics)
        _emit(result.metrics)
    return 0


def train_depth_est(args: argparse.Namespace, config: Config) -> int:
    """Train the RGB to depth estimator on precomputed or synthetic RGBD."""
    cfg = config.depth_estimator
    stem = config.paths.resolve("depth_estimator")
    inputs = [Path(cfg.data_dir)] if cfg.data_dir else []
    with _run(args, config, "train-depth-est", inputs, default_root=stem.parent) as run:
        if run.skip:
            return 0
        if cfg.data_dir:
            train = ingest_precomputed_depth(
                Path(cfg.data_dir) / "images", Path(cfg.data_dir) / "depth", config.data.resolution
            )
            validation = None
        else:
            train = synthetic_rgbd(cfg.scenes, cfg.seed, config.data.resolution, cfg.max_objects)
            validation = synthetic_rgbd(
                cfg.validation_scenes, cfg.seed + 1, config.data.resolution, cfg.max_objects
            )
        result = train_depth_estimator(
            train, cfg, validation, config.training.device, run.progress
        )
        _save(stem, run, result.model, cfg.seed, result.metrics)
        _emit(result.metrics)
    return 0


def train_enc(args: argparse.Namespace, config: Config) -> int:
    """Phase I: fit the encoder on paired data."""
    mode = ChannelMode(args.mode)
    config.model.channel_mode = mode
    extractor_stem = config.paths.resolve("features", mode=mode.value)
    stem = config.paths.resolve("encoder", mode=mode.value)
    inputs = [Path(config.data.root), _checkpoint_input(extractor_stem)]
    with _run(args, config, f"train-enc-{mode.value}", inputs, default_root=stem.parent) as run:
        if run.skip:
            return 0
        extractor = _model(extractor_stem, FeatureExtractor, config.training.device)
        splits, _ = normalize_splits(load_dataset(config.data.root, mode))
        result = train_encoder_phase1(
            splits.paired_train, extractor, config, run.progress, checkpoint_stem=stem
        )
        _save(stem, run, result.model, config.training.seed, result.metrics)
        _emit(result.metrics)
    return 0


def train_dec(args: argparse.Namespace, config: Config) -> int:
    """Phase II: fit the decoder with the frozen encoder."""
    mode = ChannelMode(args.mode)
    config.model.channel_mode = mode
    extractor_stem = config.paths.resolve("features", mode=mode.value)
    encoder_stem = config.paths.resolve("encoder", mode=mode.value)
    suffix = SUPERVISED_SUFFIX if args.no_unpaired else ""
    stem = config.paths.resolve("decoder", mode=mode.value + suffix)
    inputs = [
        Path(config.data.root),
        _checkpoint_input(extractor_stem),
        _checkpoint_input(encoder_stem),
    ]
    with _run(
        args, config, f"train-dec-{mode.value}{suffix}", inputs, default_root=stem.parent
    ) as run:
        if run.skip:
            return 0
        extractor = _model(extractor_stem, FeatureExtractor, config.training.device)
        encoder = _model(encoder_stem, Encoder, config.training.device)
        splits, _ = normalize_splits(load_dataset(config.data.root, mode))
        unpaired = () if args.no_unpaired else splits.unpaired
        result = train_decoder_phase2(
            splits.paired_train,
            unpaired,
            encoder,
            extractor,
            config,
            run.progress,
            checkpoint_stem=stem,
        )
        _save(stem, run, result.model, config.training.seed, result.metrics)
        _emit(result.metrics)
    return 0


def train_dec_rgb_constrained(args: argparse.Namespace, config: Config) -> int:
    """Fit an RGB decoder with a depth term through the frozen estimator."""
    config.model.channel_mode = ChannelMode.RGB
    rgb = ChannelMode.RGB.value
    extractor_stem = config.paths.resolve("features", mode=rgb)
    encoder_stem = config.paths.resolve("encoder", mode=rgb)
    estimator_stem = config.paths.resolve("depth_estimator")
    depth_stem = config.paths.resolve("features", mode=ChannelMode.DEPTH.value)
    stem = config.paths.resolve("constrained_decoder", loss=args.loss)
    stems = [extractor_stem, encoder_stem, estimator_stem]
    if args.loss == "perceptual":
        stems.append(depth_stem)
    inputs = [Path(config.data.root)] + [_checkpoint_input(s) for s in stems]
    with _run(
        args, config, f"train-dec-rgb-constrained-{args.loss}", inputs, default_root=stem.parent
    ) as run:
        if run.skip:
            return 0
        device = config.training.device
        depth_extractor = None
        if args.loss == "perceptual":
            depth_extractor = _model(depth_stem, FeatureExtractor, device)
        splits, _ = normalize_splits(load_dataset(config.data.root, ChannelMode.RGB))
        result = train_rgb_only_with_depth_constraint(
            splits.paired_train,
            splits.unpaired,
            _model(encoder_stem, Encoder, device),
            _model(extractor_stem, FeatureExtractor, device),
            _model(estimator_stem, DepthEstimator, device),
            config,
            args.loss,
            depth_extractor=depth_extractor,
            progress=run.progress,
            checkpoint_stem=stem,
        )
        _save(stem, run, result.model, config.training.seed, result.metrics)
        _emit(result.metrics)
    return 0


def evaluate(args: argparse.Namespace, config: Config) -> int:
    """Rank the test-set reconstructions of a decoder."""
    if args.n:
        try:
            config.evaluation.n_list = args.n
        except ValidationError as err:
            raise ConfigError(f"Invalid --n {args.n}: {err}") from err
    decoder_mode = ChannelMode.RGB.value if args.mode == "indirect" else args.mode
    stem = _stem(args.decoder) if args.decoder else config.paths.resolve(
        "decoder", mode=decoder_mode
    )
    depth_stem = config.paths.resolve("features", mode=ChannelMode.DEPTH.value)
    rgb_stem = config.paths.resolve("features", mode=ChannelMode.RGB.value)
    stems = [stem]
    if args.mode in (ChannelMode.DEPTH.value, ChannelMode.RGBD.value, "indirect"):
        stems.append(depth_stem)
    if args.mode in (ChannelMode.RGB.value, ChannelMode.RGBD.value):
        stems.append(rgb_stem)
    if args.mode == "indirect":
        stems.append(config.paths.resolve("depth_estimator"))
    inputs = [Path(config.data.root)] + [_checkpoint_input(s) for s in stems]

    with _run(args, config, f"eval-{args.label or args.mode}", inputs) as run:
        if run.skip:
            return 0
        device = config.training.device
        # indirect decodes RGB but ranks against the true depth
        data_mode = ChannelMode.RGBD if args.mode == "indirect" else ChannelMode(args.mode)
        splits, _ = normalize_splits(load_dataset(config.data.root, data_mode))
        decoder = _model(stem, Decoder, device)
        if decoder.mode.value != decoder_mode:
            raise ChannelModeError(
                f"{stem} decodes {decoder.mode.value} rasters, eval --mode {args.mode} "
                f"needs {decoder_mode}"
            )
        ranking = dict(
            n_list=config.evaluation.n_list,
            config=config.evaluation,
            cosine=config.features.cosine,
        )
        results = {}
        if args.mode == "indirect":
            results["depth"] = indirect_depth_eval(
                decoder,
                _model(config.paths.resolve("depth_estimator"), DepthEstimator, device),
                splits.paired_test,
                splits.unpaired,
                _model(depth_stem, FeatureExtractor, device),
                **ranking,
            )
        else:
            if args.mode in (ChannelMode.DEPTH.value, ChannelMode.RGBD.value):
                results["depth"] = evaluate_testset(
                    decoder,
                    splits.paired_test,
                    splits.unpaired,
                    _model(depth_stem, FeatureExtractor, device),
                    **ranking,
                )
            if args.mode in (ChannelMode.RGB.value, ChannelMode.RGBD.value):
                results["rgb"] = evaluate_testset(
                    decoder,
                    splits.paired_test,
                    splits.unpaired,
                    _model(rgb_stem, FeatureExtractor, device),
                    **ranking,
                )
        out = Path(args.out) if args.out else run.path("report.json")
        write_report(
            out,
            results,
            method=args.label or args.mode,
            mode=args.mode,
            decoder=str(stem),
            seed=config.evaluation.seed,
            version=__version__,
        )
        run.output(out)
        _emit(summary_table(results))
    return 0


def vdsi(args: argparse.Namespace, config: Config) -> int:
    """Compute the voxel depth sensitivity index of an RGBD encoder."""
    stem = _stem(args.enc) if args.enc else config.paths.resolve(
        "encoder", mode=ChannelMode.RGBD.value
    )
    data = Path(args.data or config.data.root)
    split = args.split or config.analysis.split
    inputs = [data, _checkpoint_input(stem)]
    with _run(args, config, f"vdsi-{split}", inputs) as run:
        if run.skip:
            return 0
        encoder = _model(stem, Encoder, config.training.device)
        splits = load_dataset(data, ChannelMode.RGBD)
        analysis = config.analysis
        report = compute_vdsi(
            encoder,
            stack_stimuli(getattr(splits, split)),
            mask=splits.mask,
            fill=analysis.fill,
            eps=analysis.eps,
            clip=analysis.clip,
            batch_size=config.evaluation.batch_size,
        )
        report.metadata.update({"split": split, "encoder": str(stem), "data": str(data)})
        out = Path(args.out) if args.out else run.path(f"vdsi-{split}.json")
        report.save(out)
        run.output(out)
        _emit(
            {
                region: {"voxels": len(values), "median": float(np.median(values))}
                for region, values in report.by_region.items()
            }
        )
    return 0


def vdsi_scatter(args: argparse.Namespace, config: Config) -> int:
    """Plot two VDSI reports against each other."""
    inputs = [Path(args.report_a), Path(args.report_b)]
    with _run(args, config, "vdsi-scatter", inputs) as run:
        if run.skip:
            return 0
        out = Path(args.out) if args.out else run.path("vdsi-scatter.png")
        labels = tuple(args.labels) if args.labels else (inputs[0].stem, inputs[1].stem)
        agreement = plot_vdsi_scatter(
            VdsiReport.load(inputs[0]), VdsiReport.load(inputs[1]), out, labels
        )
        run.output(out)
        run.output(out.with_suffix(".json"))
        _emit(
            {
                "correlation": agreement.correlation,
                "voxels": agreement.voxels,
                "excluded": agreement.excluded,
            }
        )
    return 0


def roi_compare(args: argparse.Namespace, config: Config) -> int:
    """Retrain per region set and compare the mean depth ranks."""
    mode = config.model.channel_mode
    if not mode.has_depth:
        raise ChannelModeError("ROI comparison ranks depth; set model.channel_mode to d or rgbd")
    mask_path = Path(args.mask) if args.mask else Path(config.data.root) / FMRI_DIR / VOXEL_TABLE
    extractor_stem = config.paths.resolve("features", mode=mode.value)
    depth_stem = config.paths.resolve("features", mode=ChannelMode.DEPTH.value)
    inputs = [Path(config.data.root), mask_path, _checkpoint_input(extractor_stem)]
    if mode is ChannelMode.RGBD:
        inputs.append(_checkpoint_input(depth_stem))
    with _run(args, config, "roi-compare", inputs) as run:
        if run.skip:
            return 0
        device = config.training.device
        _, regions = read_voxel_table(mask_path)
        depth_extractor = None
        if mode is ChannelMode.RGBD:
            depth_extractor = _model(depth_stem, FeatureExtractor, device)
        frame, results = roi_comparison(
            load_dataset(config.data.root, mode),
            VoxelMask(regions),
            args.regions or config.analysis.regions,
            _model(extractor_stem, FeatureExtractor, device),
            config,
            depth_extractor,
            run.progress,
        )
        table = run.output(run.path("roi.csv"))
        frame.to_csv(table, index=False, lineterminator="\n")
        run.output(write_report(run.path("roi.json"), results, mask=str(mask_path)))
        _emit(frame.to_dict(orient="records"))
    return 0


def plot_ranks_command(args: argparse.Namespace, config: Config) -> int:
    """Plot the mean ranks of one evaluation report."""
    report = Path(args.report)
    with _run(args, config, "plot-ranks", [report]) as run:
        if run.skip:
            return 0
        results, metadata = read_report(report)
        out = Path(args.out) if args.out else run.path("ranks.png")
        plot_ranks(results, out, title=str(metadata.get("method", report.stem)))
        run.output(out)
        run.output(out.with_suffix(".json"))
    return 0


def plot_tradeoff_command(args: argparse.Namespace, config: Config) -> int:
    """Plot depth rank against RGB rank across evaluation reports."""
    reports = [Path(p) for p in args.reports]
    with _run(args, config, "plot-tradeoff", reports) as run:
        if run.skip:
            return 0
        methods = {}
        for path in reports:
            results, metadata = read_report(path)
            label = str(metadata.get("method", path.stem))
            if label in methods:
                label = f"{label} ({path.stem})"
            methods[label] = results
        out = Path(args.out) if args.out else run.path("tradeoff.png")
        plot_tradeoff(methods, out, args.n)
        run.output(out)
        run.output(out.with_suffix(".json"))
    return 0


COMMANDS = {
    "gen-scenes": gen_scenes,
    "gen-benchmark": gen_benchmark,
    "pretrain-features": pretrain_features,
    "train-depth-est": train_depth_est,
    "train-enc": train_enc,
    "train-dec": train_dec,
    "train-dec-rgb-constrained": train_dec_rgb_constrained,
    "eval": evaluate,
    "vdsi": vdsi,
    "vdsi-scatter": vdsi_scatter,
    "roi-compare": roi_compare,
    "plot-ranks": plot_ranks_command,
    "plot-tradeoff": plot_tradeoff_command,
}  # type: Dict[str, Callable[[argparse.Namespace, Config], int]]


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", default=argparse.SUPPRESS, help="YAML configuration file")
    parent.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parent.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
    parent.add_argument("--run-dir", help="run directory (default: under paths.runs)")
    parent.add_argument(
        "--resume", action="store_true", help="skip a completed run with unchanged inputs"
    )
    parent.add_argument("--force", action="store_true", help="replace existing output")
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        prog="depthdecode",
        description="Decode depth and color from simulated or recorded fMRI responses.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="YAML configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug detail")
    parser.add_argument("-q", "--quiet", action="store_true", help="log warnings only")
    parser.add_argument(
        "--print-config", action="store_true", help="print the effective configuration and exit"
    )
    common = _common_options()
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    sub = commands.add_parser("gen-scenes", parents=[common], help="render RGB + depth scenes")
    sub.add_argument("--count", type=int, required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--max-objects", type=int, default=None)
    sub.add_argument("--out", required=True)

    sub = commands.add_parser("gen-benchmark", parents=[common], help="build the synthetic benchmark")
    sub.add_argument("--out", default=None, help="dataset root (default: data.root)")

    sub = commands.add_parser(
        "pretrain-features", parents=[common], help="pretrain a recognition network"
    )
    sub.add_argument("--mode", choices=MODES, default=ChannelMode.RGBD.value)

    commands.add_parser("train-depth-est", parents=[common], help="train the depth estimator")

    sub = commands.add_parser("train-enc", parents=[common], help="phase I encoder training")
    sub.add_argument("--mode", choices=MODES, default=ChannelMode.RGBD.value)

    sub = commands.add_parser("train-dec", parents=[common], help="phase II decoder training")
    sub.add_argument("--mode", choices=MODES, default=ChannelMode.RGBD.value)
    sub.add_argument(
        "--no-unpaired", action="store_true", help="train on paired data only"
    )

    sub = commands.add_parser(
        "train-dec-rgb-constrained",
        parents=[common],
        help="RGB decoder with a depth-estimator loss",
    )
    sub.add_argument("--loss", choices=DEPTH_LOSS_KINDS, default="perceptual")

    sub = commands.add_parser("eval", parents=[common], help="n-way rank identification")
    sub.add_argument("--decoder", default=None, help="decoder checkpoint stem")
    sub.add_argument("--mode", choices=EVAL_MODES, default=ChannelMode.RGBD.value)
    sub.add_argument("--n", type=_n_list, default=None, help="comma-separated n values")
    sub.add_argument("--label", default=None, help="method name stored in the report")
    sub.add_argument("--out", default=None)

    sub = commands.add_parser("vdsi", parents=[common], help="voxel depth sensitivity index")
    sub.add_argument("--enc", default=None, help="RGBD encoder checkpoint stem")
    sub.add_argument("--data", default=None, help="dataset root (default: data.root)")
    sub.add_argument("--split", choices=SPLITS, default=None)
    sub.add_argument("--out", default=None)

    sub = commands.add_parser("vdsi-scatter", parents=[common], help="compare two VDSI reports")
    sub.add_argument("report_a")
    sub.add_argument("report_b")
    sub.add_argument("--labels", nargs=2, default=None)
    sub.add_argument("--out", default=None)

    sub = commands.add_parser("roi-compare", parents=[common], help="LVC vs HVC depth decoding")
    sub.add_argument(
        "--mask", default=None, help=f"voxel table (default: <data.root>/{FMRI_DIR}/{VOXEL_TABLE})"
    )
    sub.add_argument(
        "--regions",
        nargs="+",
        choices=(REGION_SET_ALL, REGION_SET_LVC, REGION_SET_HVC),
        default=None,
    )

    sub = commands.add_parser("plot-ranks", parents=[common], help="bar chart of a rank report")
    sub.add_argument("report")
    sub.add_argument("--out", default=None)

    sub = commands.add_parser(
        "plot-tradeoff", parents=[common], help="depth rank against RGB rank"
    )
    sub.add_argument("reports", nargs="+")
    sub.add_argument("--n", type=int, default=50)
    sub.add_argument("--out", default=None)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def _error_record(err: DepthDecodeError) -> Dict:
    record = {"error": type(err).__name__, "message": str(err)}
    if isinstance(err, TrainingDivergedError):
        record["diagnostics"] = err.diagnostics
        record["checkpoint"] = err.checkpoint
    elif isinstance(err, ConsistencyError) and err.items:
        record["items"] = err.items
    return record


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code.

    0 on success, 1 when the command fails with a DepthDecodeError and 2
    on usage errors.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    args.argv = argv
    _configure_logging(args)

    try:
        config = load_config(args.config)
        if args.print_config:
            sys.stdout.write(dump_config(config))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        return COMMANDS[args.command](args, config)
    except DepthDecodeError as err:
        _LOGGER.error("%s failed: %s", args.command or "depthdecode", err)
        print(json.dumps(_error_record(err), default=str), file=sys.stderr)
        return 1


def main() -> None:
    """Console entry point."""
    sys.exit(dispatch())

"""Run an example script to quickly test."""
import logging
from pathlib import Path

from depthdecode import (
    Config,
    FeatureExtractor,
    build_benchmark,
    compute_vdsi,
    evaluate_testset,
    load_dataset,
    train_decoder_phase2,
    train_encoder_phase1,
)
from depthdecode.dataset import normalize_splits
from depthdecode.errors import DepthDecodeError
from depthdecode.evaluation import summary_table
from depthdecode.perceptual import make_shape_dataset, pretrain_classifier
from depthdecode.sample import ChannelMode, stack_stimuli

_LOGGER = logging.getLogger()

OUTPUT = Path("example-output")
RESOLUTION = [32, 32]
# LOGLEVEL = logging.DEBUG
LOGLEVEL = logging.INFO


def small_config() -> Config:
    """Return a configuration that runs in a few minutes on a CPU."""
    return Config.model_validate(
        {
            "data": {"root": str(OUTPUT / "benchmark"), "resolution": RESOLUTION},
            "features": {"widths": [8, 8, 16, 16, 16], "samples": 256, "epochs": 3},
            "model": {"pool_size": 2, "decoder_width": 16},
            "training": {"encoder_epochs": 10, "decoder_epochs": 10},
            "evaluation": {"n_list": [2, 5, 10]},
            "benchmark": {
                "paired_train": 64,
                "paired_test": 16,
                "unpaired": 128,
                "voxels": 96,
                "depth_voxels": 8,
                "color_voxels": 8,
                "grid": 8,
            },
        }
    )


def pretrain(config: Config, mode: ChannelMode) -> FeatureExtractor:
    """Pretrain the recognition network of one channel mode."""
    samples, labels = make_shape_dataset(
        config.features.samples, config.features.seed, config.data.resolution, mode
    )
    result = pretrain_classifier(samples, labels, config.features)
    print(f"  {mode.value} extractor accuracy: {result.metrics['validation_accuracy']:.3f}")
    return result.model


def print_ranks(label: str, results) -> None:
    """Print mean ranks with their confidence interval.

    Args:
        label (str): metric the ranks were computed with
        results (dict): n -> RankResult
    """
    print(f"  {label} identification")
    print("  ---------")
    for row in summary_table({label: results}):
        print(
            f"      {row['n']:>3}-way: mean rank {row['mean']:.2f} "
            f"[{row['ci_low']:.2f}, {row['ci_high']:.2f}], chance {row['chance']:.1f}"
        )
    print("  ------------------------------")


def main() -> None:
    """Build a tiny benchmark, train the RGBD pipeline and evaluate it."""
    logging.basicConfig(level=LOGLEVEL)
    config = small_config()
    try:
        build_benchmark(config, config.data.root, force=True)
        splits, _ = normalize_splits(load_dataset(config.data.root, ChannelMode.RGBD))
        print(f"Benchmark: {splits.sizes} (train, test, unpaired) items")

        rgbd_extractor = pretrain(config, ChannelMode.RGBD)
        depth_extractor = pretrain(config, ChannelMode.DEPTH)
        rgb_extractor = pretrain(config, ChannelMode.RGB)

        encoder = train_encoder_phase1(splits.paired_train, rgbd_extractor, config).model
        decoder = train_decoder_phase2(
            splits.paired_train, splits.unpaired, encoder, rgbd_extractor, config
        ).model

        for label, extractor in (("depth", depth_extractor), ("rgb", rgb_extractor)):
            results = evaluate_testset(
                decoder,
                splits.paired_test,
                splits.unpaired,
                extractor,
                config.evaluation.n_list,
                config.evaluation,
            )
            print_ranks(label, results)

        report = compute_vdsi(encoder, stack_stimuli(splits.unpaired), mask=splits.mask)
        for region, values in report.by_region.items():
            print(f"  VDSI {region}: median {sorted(values)[len(values) // 2]:.3f}")

    except DepthDecodeError as err:
        _LOGGER.error("There was an error: %s", err)


if __name__ == "__main__":
    main()

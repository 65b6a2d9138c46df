"""Define the sectioned YAML configuration."""
import logging
import os
from pathlib import Path
from typing import List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
import yaml

from .const import (
    ALPHA,
    BOOTSTRAP_ITERATIONS,
    MIN_BOOTSTRAP_ITERATIONS,
    CONFIDENCE_LEVEL,
    DECODER_WIDTH,
    DEFAULT_RESOLUTION,
    EARLY_STOPPING_PATIENCE,
    ENCODER_BACKBONE_BLOCKS,
    ENCODER_POOL_SIZE,
    ESTIMATOR_WIDTH,
    EXTRACTOR_WIDTHS,
    LEARNING_RATE,
    N_WAY_LIST,
    REGION_SET_ALL,
    REGION_SET_HVC,
    REGION_SET_LVC,
    SEED_ENV,
    TV_WEIGHT,
    VALIDATION_FRACTION,
    VDSI_CLIP,
    VDSI_EPS,
)
from .errors import ConfigError
from .sample import ChannelMode

_LOGGER = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataConfig(_Section):
    """Dataset root and raster geometry."""

    root: str = "benchmark"
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION

    @field_validator("resolution")
    @classmethod
    def _divisible(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if any(side < 16 or side % 16 for side in value):
            raise ValueError("resolution sides must be multiples of 16")
        return value


class FeatureConfig(_Section):
    """Recognition-network architecture and its classification pretraining."""

    widths: List[int] = Field(default_factory=lambda: list(EXTRACTOR_WIDTHS))
    activation: Literal["relu", "elu"] = "relu"
    pooling: Literal["max", "avg"] = "max"
    cosine: Literal["flattened", "per_position"] = "flattened"
    samples: int = Field(2000, ge=4)
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    validation_fraction: float = Field(0.1, gt=0, lt=1)
    seed: int = 0


class DepthEstimatorConfig(_Section):
    """Desk-scale RGB -> depth estimator training."""

    data_dir: Optional[str] = None
    scenes: int = Field(500, ge=1)
    validation_scenes: int = Field(50, ge=1)
    width: int = Field(ESTIMATOR_WIDTH, ge=1)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    max_objects: int = Field(4, ge=1)
    seed: int = 0


class ModelConfig(_Section):
    """Encoder/decoder architecture and image-loss weights."""

    channel_mode: ChannelMode = ChannelMode.RGBD
    alpha: float = Field(ALPHA, ge=0, le=1)
    tv_weight: float = Field(TV_WEIGHT, ge=0)
    backbone_blocks: int = Field(ENCODER_BACKBONE_BLOCKS, ge=1, le=5)
    freeze_backbone: bool = True
    pool_size: int = Field(ENCODER_POOL_SIZE, ge=1)
    decoder_width: int = Field(DECODER_WIDTH, ge=1)


class TrainingConfig(_Section):
    """Two-phase training schedule."""

    seed: int = 0
    paired_batch_size: int = Field(16, ge=1)
    unpaired_batch_size: int = Field(16, ge=1)
    encoder_epochs: int = Field(60, ge=1)
    decoder_epochs: int = Field(60, ge=1)
    learning_rate: float = Field(LEARNING_RATE, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    lr_decay: Literal["cosine", "none"] = "cosine"
    cycle_weight: float = Field(1.0, ge=0)
    depth_weight: float = Field(1.0, ge=0)
    validation_fraction: float = Field(VALIDATION_FRACTION, ge=0, lt=1)
    patience: int = Field(EARLY_STOPPING_PATIENCE, ge=1)
    checkpoint_every: int = Field(0, ge=0)
    check_bounds: bool = True
    device: str = "cpu"


class EvaluationConfig(_Section):
    """n-way rank identification."""

    n_list: List[int] = Field(default_factory=lambda: list(N_WAY_LIST))
    bootstrap_iterations: int = Field(BOOTSTRAP_ITERATIONS, ge=MIN_BOOTSTRAP_ITERATIONS)
    confidence_level: float = Field(CONFIDENCE_LEVEL, gt=0, lt=1)
    batch_size: int = Field(64, ge=1)
    seed: int = 0

    @field_validator("n_list")
    @classmethod
    def _at_least_two(cls, value: List[int]) -> List[int]:
        if not value or any(n < 2 for n in value):
            raise ValueError("every n must be >= 2")
        return sorted(set(value))


class AnalysisConfig(_Section):
    """Voxel depth sensitivity and ROI restriction."""

    fill: Literal["zero", "dataset_mean"] = "zero"
    eps: float = Field(VDSI_EPS, gt=0)
    clip: float = Field(VDSI_CLIP, gt=0)
    split: Literal["unpaired", "paired_test", "paired_train"] = "unpaired"
    regions: List[str] = Field(
        default_factory=lambda: [REGION_SET_ALL, REGION_SET_LVC, REGION_SET_HVC]
    )


class BenchmarkConfig(_Section):
    """Synthetic scene + simulated-brain benchmark."""

    paired_train: int = Field(200, ge=1)
    paired_test: int = Field(50, ge=1)
    unpaired: int = Field(5000, ge=0)
    voxels: int = Field(512, ge=1)
    sigma: float = Field(0.1, ge=0)
    depth_voxels: int = Field(32, ge=0)
    color_voxels: int = Field(32, ge=0)
    lvc_fraction: float = Field(0.5, ge=0, le=1)
    hvc_informative: bool = True
    grid: int = Field(14, ge=1)
    calibration_scenes: int = Field(64, ge=2)
    receptive_field: float = Field(1.5, gt=0)
    max_objects: int = Field(4, ge=1)
    scene_seed: int = 1
    brain_seed: int = 2
    noise_seed: int = 3


class PathsConfig(_Section):
    """Where commands find the artifacts of earlier commands."""

    runs: str = "runs"
    features: str = "runs/pretrain-features-{mode}/extractor"
    depth_estimator: str = "runs/train-depth-est/estimator"
    encoder: str = "runs/train-enc-{mode}/encoder"
    decoder: str = "runs/train-dec-{mode}/decoder"
    constrained_decoder: str = "runs/train-dec-rgb-constrained-{loss}/decoder"

    def resolve(self, name: str, **fields: str) -> Path:
        """Return the path template `name` with `fields` substituted."""
        return Path(getattr(self, name).format(**fields))


class Config(_Section):
    """Define the full configuration, one section per module."""

    data: DataConfig = Field(default_factory=DataConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    depth_estimator: DepthEstimatorConfig = Field(default_factory=DepthEstimatorConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @property
    def seeds(self) -> dict:
        """Return every named seed."""
        return {
            "features": self.features.seed,
            "depth_estimator": self.depth_estimator.seed,
            "training": self.training.seed,
            "evaluation": self.evaluation.seed,
            "scene": self.benchmark.scene_seed,
            "brain": self.benchmark.brain_seed,
            "noise": self.benchmark.noise_seed,
        }

    def with_seed(self, seed: int) -> "Config":
        """Return a copy whose every seed derives from `seed`."""
        config = self.model_copy(deep=True)
        config.features.seed = seed
        config.depth_estimator.seed = seed
        config.training.seed = seed
        config.evaluation.seed = seed
        config.benchmark.scene_seed = seed
        config.benchmark.brain_seed = seed + 1
        config.benchmark.noise_seed = seed + 2
        return config


def parse_config(
    text: str, environ: Optional[Mapping[str, str]] = None
) -> Config:
    """Parse a YAML document; `DEPTHDECODE_SEED` overrides every seed."""
    try:
        document = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError(f"Invalid YAML: {err}") from err
    if not isinstance(document, dict):
        raise ConfigError("Configuration must be a mapping of sections")
    try:
        config = Config.model_validate(document)
    except ValidationError as err:
        raise ConfigError(f"Invalid configuration: {err}") from err

    environ = os.environ if environ is None else environ
    override = environ.get(SEED_ENV)
    if override:
        try:
            seed = int(override)
        except ValueError as err:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {override}") from err
        _LOGGER.info("Seeds overridden by %s=%s", SEED_ENV, seed)
        config = config.with_seed(seed)
    return config


def load_config(
    path: Union[str, Path, None] = None, environ: Optional[Mapping[str, str]] = None
) -> Config:
    """Load the configuration file at `path`, or the defaults when None."""
    if path is None:
        return parse_config("", environ)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"Cannot read configuration {path}: {err}") from err
    return parse_config(text, environ)


def dump_config(config: Config) -> str:
    """Return the YAML form of `config`; `parse_config` reproduces it."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)

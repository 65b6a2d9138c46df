"""The depthdecode constants."""

RASTER_MAGIC = b"DDR1"
FMRI_MAGIC = b"DDF1"
RASTER_SUFFIX = ".ddr"
FMRI_SUFFIX = ".ddf"
PNG_SUFFIX = ".png"

SPLIT_PAIRED_TRAIN = "paired_train"
SPLIT_PAIRED_TEST = "paired_test"
SPLIT_UNPAIRED = "unpaired"
SPLITS = (SPLIT_PAIRED_TRAIN, SPLIT_PAIRED_TEST, SPLIT_UNPAIRED)
FMRI_DIR = "fmri"
VOXEL_TABLE = "voxels.csv"
VOXEL_TABLE_COLUMNS = ("voxel_id", "region")
BENCHMARK_MANIFEST = "benchmark.json"

DEFAULT_RESOLUTION = (112, 112)
MAX_CONCURRENT_READS = 16

REGION_V1 = "V1"
REGION_V2 = "V2"
REGION_V3 = "V3"
REGION_LOC = "LOC"
REGION_FFA = "FFA"
REGION_PPA = "PPA"
REGION_OTHER = "OTHER"
REGIONS = (
    REGION_V1,
    REGION_V2,
    REGION_V3,
    REGION_LOC,
    REGION_FFA,
    REGION_PPA,
    REGION_OTHER,
)
LVC_REGIONS = frozenset({REGION_V1, REGION_V2, REGION_V3})
HVC_REGIONS = frozenset({REGION_LOC, REGION_FFA, REGION_PPA})
REGION_SET_ALL = "ALL"
REGION_SET_LVC = "LVC"
REGION_SET_HVC = "HVC"

COLOR_CHANNELS = ("R", "G", "B")
DEPTH_CHANNEL = "D"

EXTRACTOR_WIDTHS = (16, 32, 64, 128, 128)
ENCODER_BACKBONE_BLOCKS = 3
ENCODER_POOL_SIZE = 7
DECODER_UPSAMPLE_STAGES = 4
DECODER_WIDTH = 64
ESTIMATOR_WIDTH = 16

ALPHA = 0.9
TV_WEIGHT = 0.1
COSINE_EPS = 1e-10
NORM_EPS = 1e-10
VDSI_EPS = 1e-8
VDSI_CLIP = 1e6

LEARNING_RATE = 1e-3
EARLY_STOPPING_PATIENCE = 10
VALIDATION_FRACTION = 0.1

N_WAY_LIST = (5, 10, 50, 100, 500, 1000)
BOOTSTRAP_ITERATIONS = 1000
MIN_BOOTSTRAP_ITERATIONS = 1000
CONFIDENCE_LEVEL = 0.95

PROGRESS_LOG = "progress.jsonl"
RUN_LOG = "run.log"
RUN_MANIFEST = "manifest.json"
CHECKPOINT_SUFFIX = ".pt"
CHECKPOINT_MANIFEST_SUFFIX = ".manifest"

SEED_ENV = "DEPTHDECODE_SEED"

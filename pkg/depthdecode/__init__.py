"""Define module-level imports."""
from .analysis import compute_vdsi, roi_comparison, vdsi_agreement  # noqa
from .benchmark import build_benchmark  # noqa
from .config import Config, load_config  # noqa
from .dataset import load_dataset, save_dataset  # noqa
from .encdec import Decoder, Encoder, decode, encode  # noqa
from .evaluation import evaluate_testset, rank_identify  # noqa
from .perceptual import FeatureExtractor, perceptual_loss  # noqa
from .training import train_decoder_phase2, train_encoder_phase1  # noqa

"""Tests for the two training phases and the depth-constrained variant."""
from dataclasses import replace

import pytest
import torch

from depthdecode.checkpoint import checkpoint_paths, load_checkpoint
from depthdecode.depth import DepthEstimator, freeze, synthetic_rgbd
from depthdecode.encdec import Decoder, Encoder, image_loss
from depthdecode.errors import ChannelModeError, ConsistencyError
from depthdecode.fitting import state_checksum
from depthdecode.sample import ChannelMode, FmriVector, PairedExample, RgbdSample, UnpairedExample
from depthdecode.training import (
    compute_phase2_losses,
    depth_constraint_loss,
    train_decoder_phase2,
    train_encoder_phase1,
    train_rgb_only_with_depth_constraint,
)

VOXELS = tuple(range(6))


def _paired(count, mode=ChannelMode.RGBD, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return tuple(
        PairedExample(
            stimulus=RgbdSample(torch.rand(mode.channels, 32, 32, generator=generator), mode),
            response=FmriVector(torch.randn(len(VOXELS), generator=generator), VOXELS),
            item_id=f"item_{idx}",
        )
        for idx in range(count)
    )


def _unpaired(count, mode=ChannelMode.RGBD, seed=1):
    generator = torch.Generator().manual_seed(seed)
    return tuple(
        UnpairedExample(
            RgbdSample(torch.rand(mode.channels, 32, 32, generator=generator), mode), f"u_{idx}"
        )
        for idx in range(count)
    )


def test_encoder_training_records_progress(small_config, make_extractor):
    extractor = make_extractor(4)
    result = train_encoder_phase1(_paired(8), extractor, small_config)
    assert isinstance(result.model, Encoder)
    assert result.model.voxel_ids == VOXELS
    assert {"validation_loss", "validation_cosine", "validation_mse"} <= set(result.metrics)
    phases = {record["phase"] for record in result.history}
    assert phases == {"encoder", "encoder_validation"}


def test_encoder_training_keeps_backbone_frozen(small_config, make_extractor):
    extractor = make_extractor(4)
    result = train_encoder_phase1(_paired(8), extractor, small_config)
    for trained, source in zip(result.model.backbone, extractor.blocks):
        for a, b in zip(trained.parameters(), source.parameters()):
            assert torch.equal(a, b)


def test_encoder_training_rejects_mode_mismatch(small_config, make_extractor):
    with pytest.raises(ChannelModeError):
        train_encoder_phase1(_paired(4), make_extractor(1), small_config)


def test_decoder_training_leaves_encoder_unchanged(small_config, make_extractor, tmp_path):
    extractor = make_extractor(4)
    encoder = Encoder.from_extractor(extractor, VOXELS, pool_size=2)
    before = state_checksum(encoder)
    small_config.training.checkpoint_every = 1
    stem = tmp_path / "decoder"
    result = train_decoder_phase2(
        _paired(8), _unpaired(6), encoder, extractor, small_config, checkpoint_stem=stem
    )
    assert state_checksum(encoder) == before
    assert result.metrics["encoder_checksum"] == before
    assert result.metrics["unpaired"] == 6
    assert isinstance(result.model, Decoder)
    assert all(path.is_file() for path in checkpoint_paths(stem))
    model, manifest = load_checkpoint(stem)
    assert isinstance(model, Decoder)
    assert manifest["step"] >= 1


def test_decoder_training_rejects_foreign_voxels(small_config, make_extractor):
    extractor = make_extractor(4)
    encoder = Encoder.from_extractor(extractor, (10, 11), pool_size=2)
    with pytest.raises(ConsistencyError):
        train_decoder_phase2(_paired(4), (), encoder, extractor, small_config)


def test_phase2_total_combines_branches(small_config, make_extractor):
    extractor = make_extractor(4)
    encoder = freeze(Encoder.from_extractor(extractor, VOXELS, pool_size=2))
    decoder = Decoder(VOXELS, ChannelMode.RGBD, (32, 32), width=8)
    paired = _paired(2)
    x = torch.stack([e.stimulus.raster for e in paired])
    r = torch.stack([e.response.values for e in paired])
    unpaired_x = torch.stack([e.stimulus.raster for e in _unpaired(3)])
    small_config.training.cycle_weight = 0.5

    terms = compute_phase2_losses(decoder, encoder, extractor, x, r, unpaired_x, small_config)
    assert float(terms["total"]) == pytest.approx(
        float(terms["dec"]) + 0.5 * float(terms["cyc"]), abs=1e-6
    )
    assert float(terms["dec"]) == pytest.approx(
        float(terms["dec_l1"] + terms["dec_perceptual"] + terms["dec_tv"]), abs=1e-6
    )
    with torch.no_grad():
        expected = image_loss(decoder(encoder(unpaired_x)), unpaired_x, extractor, 0.1)
    assert float(terms["cyc"]) == pytest.approx(float(expected), abs=1e-5)

    supervised = compute_phase2_losses(decoder, encoder, extractor, x, r, None, small_config)
    assert "cyc" not in supervised
    assert float(supervised["total"]) == pytest.approx(float(supervised["dec"]))


def test_l1_depth_constraint_matches_hand_computation():
    torch.manual_seed(0)
    estimator = freeze(DepthEstimator(width=4))
    a, b = torch.rand(2, 3, 32, 32), torch.rand(2, 3, 32, 32)
    loss = depth_constraint_loss(a, b, estimator, "l1")
    with torch.no_grad():
        expected = torch.mean(torch.abs(estimator(a) - estimator(b)))
    assert float(loss) == pytest.approx(float(expected), abs=1e-6)
    assert float(depth_constraint_loss(a, a, estimator, "l1")) == 0.0


def test_perceptual_depth_constraint_vanishes_on_equal_inputs(make_extractor):
    torch.manual_seed(0)
    estimator = freeze(DepthEstimator(width=4))
    depth_extractor = make_extractor(1)
    s = torch.rand(2, 3, 32, 32)
    same = depth_constraint_loss(s, s.clone(), estimator, "perceptual", depth_extractor)
    assert float(same) == pytest.approx(0.0, abs=1e-6)
    other = depth_constraint_loss(
        s, torch.rand(2, 3, 32, 32), estimator, "perceptual", depth_extractor
    )
    assert 0.0 < float(other) <= 2.0


def test_depth_constraint_validates_inputs(make_extractor):
    estimator = freeze(DepthEstimator(width=4))
    s = torch.rand(1, 3, 32, 32)
    with pytest.raises(ConsistencyError):
        depth_constraint_loss(s, s, estimator, "ssim")
    with pytest.raises(ConsistencyError):
        depth_constraint_loss(s, s, estimator, "perceptual")
    with pytest.raises(ChannelModeError):
        depth_constraint_loss(torch.rand(1, 4, 32, 32), s, estimator, "l1")


def test_constrained_decoder_logs_depth_term(small_config, make_extractor):
    rgb_extractor = make_extractor(3)
    encoder = Encoder.from_extractor(rgb_extractor, VOXELS, pool_size=2)
    torch.manual_seed(0)
    estimator = DepthEstimator(width=4)
    result = train_rgb_only_with_depth_constraint(
        _paired(8, ChannelMode.RGB),
        _unpaired(4, ChannelMode.RGB),
        encoder,
        rgb_extractor,
        estimator,
        small_config,
        "l1",
    )
    assert result.model.mode is ChannelMode.RGB
    assert result.metrics["depth_loss"] == "l1"
    steps = [r for r in result.history if r["phase"] == "decoder_rgb_l1"]
    assert steps and "dec_depth" in steps[0] and "cyc_depth" in steps[0]


@pytest.mark.slow
def test_encoder_overfits_one_item(small_config, make_extractor):
    small_config.training.encoder_epochs = 600
    small_config.training.patience = 600
    small_config.training.lr_decay = "none"
    small_config.training.weight_decay = 0.0
    small_config.model.freeze_backbone = False
    result = train_encoder_phase1(_paired(1), make_extractor(4), small_config)
    assert result.metrics["validation_loss"] == pytest.approx(-0.1, abs=0.02)


@pytest.mark.slow
def test_cycle_reconstruction_overfits_one_item(small_config, make_extractor):
    extractor = make_extractor(4)
    scene = synthetic_rgbd(1, seed=5, resolution=(32, 32))[0]
    paired = (replace(_paired(1)[0], stimulus=RgbdSample(scene, ChannelMode.RGBD)),)
    small_config.training.encoder_epochs = 600
    small_config.training.decoder_epochs = 600
    small_config.training.patience = 600
    small_config.model.freeze_backbone = False
    encoder = train_encoder_phase1(paired, extractor, small_config).model
    result = train_decoder_phase2(paired, (), encoder, extractor, small_config)
    assert result.metrics["validation_image_loss"] < 0.05

"""Run the two training phases and the depth-constrained RGB variant."""
import logging
import math
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import torch

from .checkpoint import save_checkpoint
from .dataset import cycle_batches, iterate_batches, split_validation
from .depth import DepthEstimator, freeze
from .encdec import Decoder, Encoder, encoder_loss_terms, image_loss, image_loss_terms
from .errors import (
    ChannelModeError,
    ConsistencyError,
    EncoderMutationError,
    TrainingDivergedError,
)
from .fitting import (
    EarlyStopping,
    FitResult,
    ProgressLog,
    as_floats,
    ensure_bounds,
    ensure_finite,
    make_optimizer,
    resolve_device,
    seed_everything,
    state_checksum,
)
from .perceptual import FeatureExtractor
from .sample import PairedExample, UnpairedExample, stack_responses, stack_stimuli

_LOGGER = logging.getLogger(__name__)

DEPTH_LOSS_KINDS = ("perceptual", "l1")

ENCODER_BOUNDS = {"mse": (0.0, math.inf), "cosine": (-1.0, 1.0)}

DepthTerm = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _phase2_bounds(terms: Dict[str, float]) -> Dict[str, tuple]:
    # The perceptual depth term sums two unit terms.
    limits = {"l1": 1.0, "perceptual": 1.0, "tv": 1.0, "depth": 2.0}
    return {
        name: (0.0, limits[name.rsplit("_", 1)[-1]])
        for name in terms
        if name.rsplit("_", 1)[-1] in limits
    }


def _checkpoint_on_error(err: TrainingDivergedError, stem: Optional[Path], saved: bool):
    if saved and stem is not None:
        err.checkpoint = str(stem)
    return err


def train_encoder_phase1(
    paired_train: Sequence[PairedExample],
    extractor: FeatureExtractor,
    config,
    progress: Optional[ProgressLog] = None,
    checkpoint_stem: Optional[Path] = None,
) -> FitResult:
    """Fit Enc on paired data with the fMRI loss.

    The epoch with the lowest validation loss on the held-out split is kept;
    training stops after `patience` epochs without improvement.

    Raises:
        TrainingDivergedError: a loss term became non-finite; `checkpoint`
            names the last periodic checkpoint when one was written.
    """
    if not paired_train:
        raise ConsistencyError("Phase I needs paired training items")
    stimulus_channels = paired_train[0].stimulus.channels
    if stimulus_channels != extractor.input_channels:
        raise ChannelModeError(
            f"Extractor reads {extractor.input_channels} channels, "
            f"stimuli have {stimulus_channels}"
        )
    model_cfg, train_cfg = config.model, config.training
    seed_everything(train_cfg.seed)
    target = resolve_device(train_cfg.device)
    progress = progress or ProgressLog()

    train, validation = split_validation(
        paired_train, train_cfg.validation_fraction, train_cfg.seed
    )
    encoder = Encoder.from_extractor(
        extractor,
        paired_train[0].response.voxel_ids,
        model_cfg.backbone_blocks,
        model_cfg.pool_size,
        model_cfg.freeze_backbone,
    ).to(target)
    steps = -(-len(train) // train_cfg.paired_batch_size) * train_cfg.encoder_epochs
    optimizer, scheduler = make_optimizer(
        encoder.parameters(),
        train_cfg.learning_rate,
        train_cfg.weight_decay,
        steps,
        train_cfg.lr_decay,
    )
    val_x = stack_stimuli(validation).to(target)
    val_r = stack_responses(validation).to(target)
    stopper = EarlyStopping(train_cfg.patience)
    step, last_good, saved = 0, None, False
    for epoch in range(train_cfg.encoder_epochs):
        encoder.train()
        for batch in iterate_batches(train, train_cfg.paired_batch_size, train_cfg.seed, epoch):
            x = stack_stimuli(batch).to(target)
            r = stack_responses(batch).to(target)
            terms = encoder_loss_terms(encoder(x), r, model_cfg.alpha)
            logged = as_floats(terms)
            try:
                ensure_finite(logged, step, last_good)
            except TrainingDivergedError as err:
                raise _checkpoint_on_error(err, checkpoint_stem, saved) from None
            if train_cfg.check_bounds:
                ensure_bounds(logged, ENCODER_BOUNDS)
            optimizer.zero_grad()
            terms["total"].backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            progress.record("encoder", epoch, step, **logged)
            last_good = logged
            step += 1
            if checkpoint_stem and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_stem, encoder, seed=train_cfg.seed, epoch=epoch, step=step)
                saved = True

        encoder.eval()
        with torch.no_grad():
            val_terms = as_floats(encoder_loss_terms(encoder(val_x), val_r, model_cfg.alpha))
        progress.record(
            "encoder_validation", epoch, step, loss=val_terms["total"], cosine=val_terms["cosine"]
        )
        _LOGGER.info(
            "Encoder epoch %s: validation loss %.4f, cosine %.4f",
            epoch,
            val_terms["total"],
            val_terms["cosine"],
        )
        if stopper.update(val_terms["total"], epoch, encoder):
            _LOGGER.info("Early stopping after epoch %s", epoch)
            break

    stopper.restore(encoder)
    encoder.eval()
    with torch.no_grad():
        final = as_floats(encoder_loss_terms(encoder(val_x), val_r, model_cfg.alpha))
    return FitResult(
        model=encoder,
        history=progress.records,
        metrics={
            "validation_loss": final["total"],
            "validation_cosine": final["cosine"],
            "validation_mse": final["mse"],
            "epoch": stopper.best_epoch,
        },
    )


def compute_phase2_losses(
    decoder: Decoder,
    encoder: Encoder,
    extractor: FeatureExtractor,
    paired_x: torch.Tensor,
    paired_r: torch.Tensor,
    unpaired_x: Optional[torch.Tensor],
    config,
    depth_term: Optional[DepthTerm] = None,
) -> Dict[str, torch.Tensor]:
    """Return every decoder loss term of one step.

    `dec` is the image loss of Dec(r) against the paired stimuli, `cyc` the
    image loss of Dec(Enc(s)) against the unpaired stimuli, and
    total = dec + cycle_weight * cyc. Without unpaired stimuli the cycle
    terms are absent and total = dec.
    """
    model_cfg, train_cfg = config.model, config.training
    cosine = config.features.cosine

    def branch(prefix: str, reconstruction: torch.Tensor, target: torch.Tensor):
        parts = image_loss_terms(reconstruction, target, extractor, model_cfg.tv_weight, cosine)
        terms = {f"{prefix}_{name}": parts[name] for name in ("l1", "perceptual", "tv")}
        loss = parts["total"]
        if depth_term is not None:
            terms[f"{prefix}_depth"] = depth_term(reconstruction, target)
            loss = loss + train_cfg.depth_weight * terms[f"{prefix}_depth"]
        terms[prefix] = loss
        return terms

    terms = branch("dec", decoder(paired_r), paired_x)
    total = terms["dec"]
    if unpaired_x is not None and len(unpaired_x):
        with torch.no_grad():
            predicted = encoder(unpaired_x)
        terms.update(branch("cyc", decoder(predicted), unpaired_x))
        total = total + train_cfg.cycle_weight * terms["cyc"]
    terms["total"] = total
    return terms


def _validation_loss(decoder, extractor, x, r, config) -> float:
    decoder.eval()
    with torch.no_grad():
        return float(
            image_loss(
                decoder(r), x, extractor, config.model.tv_weight, config.features.cosine
            )
        )


def train_decoder_phase2(
    paired_train: Sequence[PairedExample],
    unpaired: Sequence[UnpairedExample],
    encoder: Encoder,
    extractor: FeatureExtractor,
    config,
    progress: Optional[ProgressLog] = None,
    checkpoint_stem: Optional[Path] = None,
    depth_term: Optional[DepthTerm] = None,
    phase: str = "decoder",
) -> FitResult:
    """Fit Dec with the supervised and cycle-consistent image losses.

    Every step draws one paired and one unpaired batch. The encoder is
    frozen; its state checksum must be unchanged when training ends.

    Raises:
        EncoderMutationError: the encoder parameters changed.
        TrainingDivergedError: a loss term became non-finite.
        LossBoundsError: an image-loss term left [0, 1].
    """
    if not paired_train:
        raise ConsistencyError("Phase II needs paired training items")
    voxel_ids = paired_train[0].response.voxel_ids
    if tuple(voxel_ids) != encoder.voxel_ids:
        raise ConsistencyError("Encoder voxel ids differ from the paired responses")
    mode = paired_train[0].stimulus.mode
    if extractor.input_channels != mode.channels:
        raise ChannelModeError(
            f"Extractor reads {extractor.input_channels} channels, stimuli have {mode.channels}"
        )
    model_cfg, train_cfg = config.model, config.training
    seed_everything(train_cfg.seed)
    target = resolve_device(train_cfg.device)
    progress = progress or ProgressLog()

    encoder = freeze(encoder.to(target))
    extractor = freeze(extractor.to(target))
    before = state_checksum(encoder)

    train, validation = split_validation(
        paired_train, train_cfg.validation_fraction, train_cfg.seed
    )
    decoder = Decoder(
        voxel_ids,
        mode,
        paired_train[0].stimulus.resolution,
        width=model_cfg.decoder_width,
    ).to(target)
    steps = -(-len(train) // train_cfg.paired_batch_size) * train_cfg.decoder_epochs
    optimizer, scheduler = make_optimizer(
        decoder.parameters(),
        train_cfg.learning_rate,
        train_cfg.weight_decay,
        steps,
        train_cfg.lr_decay,
    )
    unpaired_batches = cycle_batches(
        list(unpaired), train_cfg.unpaired_batch_size, train_cfg.seed + 1
    )
    val_x = stack_stimuli(validation).to(target)
    val_r = stack_responses(validation).to(target)
    stopper = EarlyStopping(train_cfg.patience)
    step, last_good, saved = 0, None, False
    for epoch in range(train_cfg.decoder_epochs):
        decoder.train()
        for batch in iterate_batches(train, train_cfg.paired_batch_size, train_cfg.seed, epoch):
            x = stack_stimuli(batch).to(target)
            r = stack_responses(batch).to(target)
            unpaired_x = stack_stimuli(next(unpaired_batches)).to(target) if unpaired else None
            terms = compute_phase2_losses(
                decoder, encoder, extractor, x, r, unpaired_x, config, depth_term
            )
            logged = as_floats(terms)
            try:
                ensure_finite(logged, step, last_good)
            except TrainingDivergedError as err:
                raise _checkpoint_on_error(err, checkpoint_stem, saved) from None
            if train_cfg.check_bounds:
                ensure_bounds(logged, _phase2_bounds(logged))
            optimizer.zero_grad()
            terms["total"].backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            progress.record(phase, epoch, step, **logged)
            last_good = logged
            step += 1
            if checkpoint_stem and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_stem, decoder, seed=train_cfg.seed, epoch=epoch, step=step)
                saved = True

        val_loss = _validation_loss(decoder, extractor, val_x, val_r, config)
        progress.record(f"{phase}_validation", epoch, step, image_loss=val_loss)
        _LOGGER.info("Decoder epoch %s: validation image loss %.4f", epoch, val_loss)
        if stopper.update(val_loss, epoch, decoder):
            _LOGGER.info("Early stopping after epoch %s", epoch)
            break

    after = state_checksum(encoder)
    if after != before:
        raise EncoderMutationError(
            f"Encoder parameters changed during decoder training ({before[:12]} -> {after[:12]})"
        )
    stopper.restore(decoder)
    decoder.eval()
    return FitResult(
        model=decoder,
        history=progress.records,
        metrics={
            "validation_image_loss": stopper.best,
            "epoch": stopper.best_epoch,
            "encoder_checksum": after,
            "unpaired": len(unpaired),
        },
    )


def depth_constraint_loss(
    s_hat_rgb: torch.Tensor,
    s_rgb: torch.Tensor,
    depth_estimator: DepthEstimator,
    loss_kind: str,
    depth_extractor: Optional[FeatureExtractor] = None,
    cosine: str = "flattened",
) -> torch.Tensor:
    """Return the loss between M(s_hat) and M(s) through a frozen estimator.

    `l1` is the mean absolute difference of the two depth maps;
    `perceptual` adds the depth extractor's perceptual loss to it. Both are
    0 when s_hat equals s.
    """
    if loss_kind not in DEPTH_LOSS_KINDS:
        raise ConsistencyError(f"Unknown depth loss {loss_kind}, expected one of {DEPTH_LOSS_KINDS}")
    if s_hat_rgb.shape[1] != 3 or s_rgb.shape[1] != 3:
        raise ChannelModeError("The depth constraint reads 3-channel color rasters")
    estimated = depth_estimator(s_hat_rgb)
    with torch.no_grad():
        reference = depth_estimator(s_rgb)
    if loss_kind == "l1":
        return torch.mean(torch.abs(estimated - reference))
    if depth_extractor is None:
        raise ConsistencyError("The perceptual depth loss needs a depth extractor")
    return image_loss(estimated, reference, depth_extractor, 0.0, cosine)


def train_rgb_only_with_depth_constraint(
    paired_train: Sequence[PairedExample],
    unpaired: Sequence[UnpairedExample],
    encoder: Encoder,
    rgb_extractor: FeatureExtractor,
    depth_estimator: DepthEstimator,
    config,
    loss_kind: str,
    depth_extractor: Optional[FeatureExtractor] = None,
    progress: Optional[ProgressLog] = None,
    checkpoint_stem: Optional[Path] = None,
) -> FitResult:
    """Fit an RGB decoder whose loss adds a depth term through the estimator."""
    if paired_train and paired_train[0].stimulus.channels != 3:
        raise ChannelModeError("Depth-constrained decoding trains a 3-channel decoder")
    if loss_kind not in DEPTH_LOSS_KINDS:
        raise ConsistencyError(f"Unknown depth loss {loss_kind}, expected one of {DEPTH_LOSS_KINDS}")
    target = resolve_device(config.training.device)
    depth_estimator = freeze(depth_estimator.to(target))
    if depth_extractor is not None:
        depth_extractor = freeze(depth_extractor.to(target))

    def depth_term(reconstruction: torch.Tensor, stimulus: torch.Tensor) -> torch.Tensor:
        return depth_constraint_loss(
            reconstruction,
            stimulus,
            depth_estimator,
            loss_kind,
            depth_extractor,
            config.features.cosine,
        )

    result = train_decoder_phase2(
        paired_train,
        unpaired,
        encoder,
        rgb_extractor,
        config,
        progress=progress,
        checkpoint_stem=checkpoint_stem,
        depth_term=depth_term,
        phase=f"decoder_rgb_{loss_kind}",
    )
    result.metrics["depth_loss"] = loss_kind
    return result

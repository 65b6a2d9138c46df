"""Shared training-loop plumbing: seeding, optimizers, progress, stopping."""
import copy
from dataclasses import dataclass, field
import hashlib
import json
import logging
import math
from pathlib import Path
import random
import time
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from .errors import LossBoundsError, TrainingDivergedError

_LOGGER = logging.getLogger(__name__)


@dataclass
class FitResult:
    """Define a trained model with its loss history and final metrics."""

    model: nn.Module
    history: List[Dict[str, float]] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)
    checkpoint: Optional[Path] = None


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch; return a dedicated torch generator."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def resolve_device(name: str) -> torch.device:
    """Return the torch device for `name` ("auto" picks CUDA when present)."""
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def make_optimizer(
    parameters: Iterable[torch.nn.Parameter],
    learning_rate: float,
    weight_decay: float,
    total_steps: int,
    decay: str = "cosine",
) -> Tuple[torch.optim.Optimizer, Optional[torch.optim.lr_scheduler.LRScheduler]]:
    """Return Adam with an optional per-step cosine decay."""
    optimizer = torch.optim.Adam(
        [p for p in parameters if p.requires_grad],
        lr=learning_rate,
        weight_decay=weight_decay,
    )
    scheduler = None
    if decay == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(1, total_steps)
        )
    return optimizer, scheduler


def as_floats(terms: Mapping[str, Union[torch.Tensor, float]]) -> Dict[str, float]:
    """Return `terms` with tensors replaced by python floats."""
    return {
        name: float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        for name, value in terms.items()
    }


def ensure_finite(
    terms: Mapping[str, float], step: int, last_good: Optional[Mapping[str, float]] = None
) -> None:
    """Raise TrainingDivergedError when any loss term is not finite."""
    bad = [name for name, value in terms.items() if not math.isfinite(value)]
    if bad:
        diagnostics = {"step": step, "non_finite": bad, "terms": dict(terms)}
        if last_good is not None:
            diagnostics["last_good"] = dict(last_good)
        raise TrainingDivergedError(
            f"Loss terms {', '.join(bad)} became non-finite at step {step}",
            diagnostics=diagnostics,
        )


def ensure_bounds(
    terms: Mapping[str, float],
    bounds: Mapping[str, Tuple[float, float]],
    tolerance: float = 1e-5,
) -> None:
    """Raise LossBoundsError when a logged term leaves its range."""
    for name, (low, high) in bounds.items():
        value = terms.get(name)
        if value is not None and not low - tolerance <= value <= high + tolerance:
            raise LossBoundsError(f"Loss term {name}={value:.6g} outside [{low}, {high}]")


def state_checksum(model: nn.Module) -> str:
    """Return a sha256 over every parameter and buffer of `model`."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


class ProgressLog:
    """Record loss terms per step, optionally as line-delimited JSON."""

    def __init__(self, path: Optional[Path] = None) -> None:
        self._path = Path(path) if path is not None else None
        self._start = time.monotonic()
        self.records = []  # type: List[Dict]

    def record(self, phase: str, epoch: int, step: int, **terms: float) -> Dict:
        """Append one record and return it."""
        entry = {
            "phase": phase,
            "epoch": epoch,
            "step": step,
            **{name: float(value) for name, value in terms.items()},
            "wall_time": round(time.monotonic() - self._start, 3),
        }
        self.records.append(entry)
        if self._path is not None:
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry) + "\n")
        _LOGGER.debug("%s epoch %s step %s: %s", phase, epoch, step, terms)
        return entry


class EarlyStopping:
    """Track the best validation value and its model state."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self._best_state = None  # type: Optional[Dict[str, torch.Tensor]]
        self._stale = 0

    def update(self, value: float, epoch: int, model: nn.Module) -> bool:
        """Record `value`; return True when training should stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self._best_state = copy.deepcopy(model.state_dict())
            self._stale = 0
            return False
        self._stale += 1
        return self._stale >= self.patience

    def restore(self, model: nn.Module) -> None:
        """Load the best recorded state into `model`."""
        if self._best_state is not None:
            model.load_state_dict(self._best_state)

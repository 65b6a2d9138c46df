"""Render procedural scenes with exact per-pixel depth."""
from dataclasses import dataclass, field, replace
import logging
from typing import Tuple

import numpy as np
import torch

from .const import DEFAULT_RESOLUTION
from .errors import SceneSpecError

_LOGGER = logging.getLogger(__name__)

SHAPE_RECTANGLE = "rectangle"
SHAPE_ELLIPSE = "ellipse"
SHAPES = (SHAPE_RECTANGLE, SHAPE_ELLIPSE)

# Depth bands of the labelled shape task: (far, near).
DEPTH_BANDS = ((0.15, 0.45), (0.55, 0.95))


@dataclass(frozen=True)
class SceneObject:
    """Define one flat object; larger depth_plane means nearer."""

    shape: str
    color: Tuple[float, float, float]
    depth_plane: float
    top: float
    left: float
    height: float
    width: float


@dataclass(frozen=True)
class SceneSpec:
    """Define a scene: objects painted over a background at depth 0."""

    seed: int
    objects: Tuple[SceneObject, ...]
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION
    background: Tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        height, width = self.resolution
        if height < 1 or width < 1:
            raise SceneSpecError(f"Invalid resolution {self.resolution}")
        if not self.objects:
            raise SceneSpecError("A scene needs at least one object")
        if not all(0.0 <= c <= 1.0 for c in self.background):
            raise SceneSpecError("Background color must lie in [0, 1]")
        for idx, obj in enumerate(self.objects):
            if obj.shape not in SHAPES:
                raise SceneSpecError(f"Object {idx}: unknown shape {obj.shape}")
            if len(obj.color) != 3 or not all(0.0 <= c <= 1.0 for c in obj.color):
                raise SceneSpecError(f"Object {idx}: color must be RGB in [0, 1]")
            if not 0.0 <= obj.depth_plane <= 1.0:
                raise SceneSpecError(f"Object {idx}: depth_plane must lie in [0, 1]")
            if obj.height < 0 or obj.width < 0:
                raise SceneSpecError(f"Object {idx}: negative size")
            if (
                obj.top < 0
                or obj.left < 0
                or obj.top + obj.height > height + 1e-9
                or obj.left + obj.width > width + 1e-9
            ):
                raise SceneSpecError(f"Object {idx}: outside the {height}x{width} raster")

    @property
    def object_count(self) -> int:
        """Return the number of objects."""
        return len(self.objects)


def _coverage(obj: SceneObject, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if obj.height == 0 or obj.width == 0:
        return np.zeros(np.broadcast(rows, cols).shape, dtype=bool)
    if obj.shape == SHAPE_RECTANGLE:
        return (
            (rows >= obj.top)
            & (rows < obj.top + obj.height)
            & (cols >= obj.left)
            & (cols < obj.left + obj.width)
        )
    center_row = obj.top + obj.height / 2.0
    center_col = obj.left + obj.width / 2.0
    return (
        ((rows - center_row) / (obj.height / 2.0)) ** 2
        + ((cols - center_col) / (obj.width / 2.0)) ** 2
    ) <= 1.0


def render_scene(spec: SceneSpec) -> Tuple[torch.Tensor, torch.Tensor]:
    """Render (rgb 3 x H x W, depth 1 x H x W).

    The nearer object (larger depth_plane) occludes; equal planes are
    resolved in favor of the later object in the list.
    """
    height, width = spec.resolution
    rows = np.arange(height, dtype=np.float64)[:, None] + 0.5
    cols = np.arange(width, dtype=np.float64)[None, :] + 0.5

    rgb = np.empty((3, height, width), dtype=np.float32)
    rgb[:] = np.asarray(spec.background, dtype=np.float32)[:, None, None]
    depth = np.zeros((1, height, width), dtype=np.float32)

    planes = np.array([obj.depth_plane for obj in spec.objects])
    for idx in np.argsort(planes, kind="stable"):
        obj = spec.objects[idx]
        covered = _coverage(obj, rows, cols)
        rgb[:, covered] = np.asarray(obj.color, dtype=np.float32)[:, None]
        depth[0, covered] = np.float32(obj.depth_plane)
    return torch.from_numpy(rgb), torch.from_numpy(depth)


def render_rgbd(spec: SceneSpec) -> torch.Tensor:
    """Render the 4 x H x W RGBD stack, depth last."""
    rgb, depth = render_scene(spec)
    return torch.cat([rgb, depth], dim=0)


def _random_object(
    rng: np.random.Generator, resolution: Tuple[int, int], depth_plane: float
) -> SceneObject:
    height, width = resolution
    obj_height = float(rng.uniform(0.2, 0.6) * height)
    obj_width = float(rng.uniform(0.2, 0.6) * width)
    return SceneObject(
        shape=SHAPES[int(rng.integers(len(SHAPES)))],
        color=tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3)),
        depth_plane=depth_plane,
        top=float(rng.uniform(0.0, height - obj_height)),
        left=float(rng.uniform(0.0, width - obj_width)),
        height=obj_height,
        width=obj_width,
    )


def random_scene(
    seed: int,
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION,
    max_objects: int = 4,
) -> SceneSpec:
    """Return a seeded random scene with 1..max_objects objects."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, max_objects + 1))
    planes = rng.choice(np.linspace(0.1, 1.0, 19), size=count, replace=False)
    background = tuple(float(c) for c in rng.uniform(0.0, 0.3, size=3))
    return SceneSpec(
        seed=seed,
        objects=tuple(_random_object(rng, resolution, float(p)) for p in planes),
        resolution=resolution,
        background=background,
    )


def labelled_scene(
    seed: int, label: int, resolution: Tuple[int, int] = DEFAULT_RESOLUTION
) -> SceneSpec:
    """Return a one-object scene of class `label` = shape x depth band (4 classes)."""
    shape, band = SHAPES[label // 2], DEPTH_BANDS[label % 2]
    rng = np.random.default_rng([seed, label])
    obj = _random_object(rng, resolution, float(rng.uniform(*band)))
    return SceneSpec(
        seed=seed,
        objects=(replace(obj, shape=shape),),
        resolution=resolution,
    )

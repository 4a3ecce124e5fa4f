"""Reference human attention: blurred gaze fixations and gaze-network predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, NoFixationError, ParameterError
from .imaging import WORKING_SIZE, SaliencyMap, blur_array, normalize_map
from .netforward import Network

ORIGINAL_SIZE = (210, 160)  # (height, width) of an Atari frame


@dataclass(frozen=True)
class GazeRecord:
    """Gaze points ``(x, y)`` in original-resolution pixel coordinates.

    ``x`` runs along columns in ``[0, width)``, ``y`` along rows in ``[0, height)``.
    """

    frame_id: int
    points: tuple = ()
    frame_size: tuple = ORIGINAL_SIZE

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        h, w = self.frame_size
        for x, y in pts:
            if not (0 <= x < w and 0 <= y < h):
                raise DataError(f"frame {self.frame_id}: gaze point ({x}, {y}) outside {w}x{h} frame")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class GazeMapConfig:
    sigma_px: float = 2.0
    resolution: tuple = WORKING_SIZE

    def __post_init__(self):
        if not self.sigma_px > 0:
            raise ParameterError(f"sigma_px must be > 0, got {self.sigma_px}")


def fixation_pixels(rec: GazeRecord, resolution: tuple = WORKING_SIZE) -> np.ndarray:
    """Working-resolution ``(row, col)`` of each fixation, as an ``(n, 2)`` int array."""
    h, w = rec.frame_size
    th, tw = resolution
    pts = np.asarray(rec.points, dtype=np.float64).reshape(-1, 2)
    cols = np.minimum(np.floor(pts[:, 0] * tw / w), tw - 1).astype(int)
    rows = np.minimum(np.floor(pts[:, 1] * th / h), th - 1).astype(int)
    return np.stack([rows, cols], axis=1)


def gaze_to_map(rec: GazeRecord, cfg: GazeMapConfig = GazeMapConfig()) -> SaliencyMap:
    """Sum of equally weighted Gaussian blobs at the fixations, normalized."""
    if not rec.points:
        raise NoFixationError(f"frame {rec.frame_id}: no gaze points")
    impulses = np.zeros(cfg.resolution)
    for r, c in fixation_pixels(rec, cfg.resolution):
        impulses[r, c] += 1.0
    return normalize_map(np.maximum(blur_array(impulses, cfg.sigma_px, border="mass"), 0.0))


def predict_human_map(gaze_net, stack) -> SaliencyMap:
    """Predicted human saliency for the last frame of ``stack``.

    ``gaze_net`` is a :class:`Network` or a ``(spec, weights)`` pair whose
    output kind is ``spatial_distribution``.
    """
    if not isinstance(gaze_net, Network):
        gaze_net = Network(*gaze_net)
    if gaze_net.spec.output_kind != "spatial_distribution":
        raise ContractError(f"gaze network must output a spatial distribution, not {gaze_net.spec.output_kind}")
    if not gaze_net.spec.layers or gaze_net.spec.layers[-1].kind != "softmax_spatial":
        raise ContractError("gaze network must end with a spatial softmax")
    out = gaze_net(stack)
    return SaliencyMap(out.reshape(out.shape[-2:]), normalized=True)

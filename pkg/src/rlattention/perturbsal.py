"""Perturbation saliency: how much does blurring a spot change the network output?

For a pixel ``(i, j)`` every frame of the input stack is blended toward its
blurred copy under a Gaussian mask centred on ``(i, j)``::

    perturbed = I * (1 - M) + blur(I) * M

and the score is half the squared Euclidean distance between the network
outputs on the clean and perturbed stacks. Scores are computed on a strided
grid, bilinearly upsampled to full resolution, then normalized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError
from .imaging import FrameStack, SaliencyMap, blur_array, normalize_map
from .netforward import Network


@dataclass(frozen=True)
class PerturbationConfig:
    mask_sigma: float = 3.0
    blur_sigma: float = 3.0
    stride: int = 5
    upsample: bool = True
    frames: str = "all"  # "all" or "last": which frames of the stack are perturbed
    softmax_outputs: bool | None = None  # None: only for action_values networks

    def __post_init__(self):
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")
        if not (self.mask_sigma > 0 and self.blur_sigma > 0):
            raise ParameterError("mask_sigma and blur_sigma must be > 0")
        if self.frames not in ("all", "last"):
            raise ParameterError(f"frames must be 'all' or 'last', got {self.frames!r}")


def gaussian_mask(shape: tuple, i: int, j: int, sigma: float) -> np.ndarray:
    """Peak-1 Gaussian centred on ``(i, j)``, zero beyond distance ``3 sigma``."""
    rows = np.arange(shape[0], dtype=np.float64)[:, None] - i
    cols = np.arange(shape[1], dtype=np.float64)[None, :] - j
    d2 = rows * rows + cols * cols
    mask = np.exp(-d2 / (2.0 * sigma * sigma))
    mask[d2 > (3.0 * sigma) ** 2] = 0.0
    return mask


def _as_array(stack) -> np.ndarray:
    if isinstance(stack, FrameStack):
        return stack.to_array()
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"expected a stack of shape (frames, H, W), got {arr.shape}")
    return arr


def _blurred(stack: np.ndarray, cfg: PerturbationConfig) -> np.ndarray:
    return np.stack([blur_array(frame, cfg.blur_sigma, border="mean") for frame in stack])


def _perturb_array(stack, blurred, i, j, cfg):
    mask = gaussian_mask(stack.shape[1:], i, j, cfg.mask_sigma)
    if cfg.frames == "last":
        out = stack.copy()
        out[-1] = stack[-1] + mask * (blurred[-1] - stack[-1])
        return out
    return stack + mask[None] * (blurred - stack)


def perturb(stack, i: int, j: int, cfg: PerturbationConfig = PerturbationConfig()):
    """Blur the stack locally around pixel ``(i, j)``.

    Returns the same type as ``stack`` (:class:`FrameStack` or array).
    """
    arr = _as_array(stack)
    h, w = arr.shape[1:]
    if not (0 <= i < h and 0 <= j < w):
        raise ParameterError(f"pixel ({i}, {j}) outside frame {h}x{w}")
    out = _perturb_array(arr, _blurred(arr, cfg), i, j, cfg)
    if isinstance(stack, FrameStack):
        return FrameStack.from_array(np.clip(out, 0.0, 1.0))
    return out


def _output_vector(out) -> np.ndarray:
    if isinstance(out, SaliencyMap):
        return out.values.reshape(-1)
    return np.asarray(out, dtype=np.float64).reshape(-1)


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def score_outputs(clean, perturbed) -> float:
    """Half the squared Euclidean distance between two network outputs."""
    a, b = _output_vector(clean), _output_vector(perturbed)
    if a.shape != b.shape:
        raise ContractError(f"output shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return 0.5 * float(d @ d)


def _wants_softmax(net, cfg: PerturbationConfig) -> bool:
    if cfg.softmax_outputs is not None:
        return cfg.softmax_outputs
    return isinstance(net, Network) and net.spec.output_kind == "action_values"


def _evaluator(net, cfg):
    soft = _wants_softmax(net, cfg)

    def evaluate(x):
        v = _output_vector(net(x))
        return _softmax(v) if soft else v

    return evaluate


def saliency_score(net, stack, i: int, j: int, cfg: PerturbationConfig = PerturbationConfig()) -> float:
    """Score of a single pixel.

    ``net`` is any callable mapping a ``(frames, H, W)`` array to an output
    vector or map; a :class:`~rlattention.netforward.Network` qualifies.
    """
    arr = _as_array(stack)
    evaluate = _evaluator(net, cfg)
    return score_outputs(evaluate(arr), evaluate(perturb(arr, i, j, cfg)))


def grid_indices(n: int, stride: int) -> np.ndarray:
    return np.arange(0, n, stride)


def score_grid(net, stack, cfg: PerturbationConfig = PerturbationConfig()) -> np.ndarray:
    """Scores at every grid point ``(i, j)`` with ``i, j`` multiples of the stride."""
    arr = _as_array(stack)
    evaluate = _evaluator(net, cfg)
    blurred = _blurred(arr, cfg)
    clean = evaluate(arr)
    rows = grid_indices(arr.shape[1], cfg.stride)
    cols = grid_indices(arr.shape[2], cfg.stride)
    scores = np.zeros((len(rows), len(cols)))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            d = clean - evaluate(_perturb_array(arr, blurred, i, j, cfg))
            scores[a, b] = 0.5 * float(d @ d)
    return scores


def _grid_interp(n: int, stride: int) -> np.ndarray:
    # full-resolution pixel p sits at grid coordinate p / stride
    g = grid_indices(n, stride)
    pos = np.minimum(np.arange(n) / stride, len(g) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(g) - 1)
    frac = pos - lo
    mat = np.zeros((n, len(g)))
    np.add.at(mat, (np.arange(n), lo), 1.0 - frac)
    np.add.at(mat, (np.arange(n), hi), frac)
    return mat


def grid_to_full(scores: np.ndarray, shape: tuple, stride: int, upsample: bool = True) -> np.ndarray:
    """Place grid scores on the full pixel lattice.

    With ``upsample`` the grid is bilinearly interpolated (clamped past the
    last grid line); without it, off-grid pixels are zero.
    """
    if stride == 1:
        return scores.copy()
    if upsample:
        return _grid_interp(shape[0], stride) @ scores @ _grid_interp(shape[1], stride).T
    full = np.zeros(shape)
    full[::stride, ::stride] = scores
    return full


def extract_saliency(net, stack, cfg: PerturbationConfig = PerturbationConfig()) -> SaliencyMap:
    """Normalized perturbation saliency map at the stack's resolution.

    A network whose output never changes yields the uniform map with
    ``degenerate=True``.
    """
    arr = _as_array(stack)
    scores = score_grid(net, arr, cfg)
    full = grid_to_full(scores, arr.shape[1:], cfg.stride, cfg.upsample)
    return normalize_map(np.maximum(full, 0.0))

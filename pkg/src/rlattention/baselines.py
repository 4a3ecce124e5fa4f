"""Control attention models: Itti-Koch bottom-up saliency and optical-flow motion.

Both operate on original-resolution frames and resize their result to the
working resolution at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError, DataError, ParameterError
from .imaging import WORKING_SIZE, Frame, RawFrame, SaliencyMap, blur_array, normalize_map, resize_bilinear, to_grayscale

# ==========================================================================
# Itti-Koch


@dataclass(frozen=True)
class IttiKochConfig:
    levels: int = 9
    centers: tuple = (2, 3, 4)
    deltas: tuple = (3, 4)
    orientations: tuple = (0.0, 45.0, 90.0, 135.0)
    # intensity, color, orientation
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    map_level: int = 2  # pyramid level at which conspicuity maps are combined
    gabor_sigma: float = 2.0
    gabor_wavelength: float = 5.0
    # local maxima below this fraction of the global max are ignored by N(.)
    peak_floor: float = 0.01

    def __post_init__(self):
        if len(self.weights) != 3 or min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ParameterError(f"channel weights must be 3 nonnegative values summing to 1, got {self.weights}")
        if max(self.centers) + max(self.deltas) >= self.levels:
            raise ParameterError("every center + delta must be below the number of pyramid levels")
        if min(self.centers) < 0 or min(self.deltas) < 1:
            raise ParameterError("centers must be >= 0 and deltas >= 1")
        if not 0 <= self.map_level < self.levels:
            raise ParameterError(f"map_level must be a pyramid level, got {self.map_level}")

    @property
    def min_side(self) -> int:
        # the deepest level must cover at least half a pixel before rounding up
        return 2 ** max(self.levels - 2, 0)


def _pyr_down(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return resize_bilinear(blur_array(img, 1.0, border="mean"), ((h + 1) // 2, (w + 1) // 2))


def gaussian_pyramid(img: np.ndarray, levels: int) -> list:
    pyr = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        pyr.append(_pyr_down(pyr[-1]))
    return pyr


def max_normalize(m: np.ndarray, peak_floor: float = 0.01) -> np.ndarray:
    """The N(.) operator: scale to [0, 1], then weight by (1 - mean other peak)^2.

    Maps with one strong peak keep their weight; maps with many comparable
    peaks are suppressed. Maps with no meaningful contrast become zero.
    """
    m = np.maximum(m, 0.0)
    top = m.max()
    if top <= 1e-9:
        return np.zeros_like(m)
    m = m / top
    peaks = (m == ndimage.maximum_filter(m, size=3, mode="reflect")) & (m >= peak_floor)
    labels, n = ndimage.label(peaks, structure=np.ones((3, 3)))
    if n == 0:
        return m
    values = np.asarray(ndimage.maximum(m, labels, index=np.arange(1, n + 1)))
    # drop one instance of the global maximum, keep any ties as "other" peaks
    values = np.delete(values, int(np.argmax(values)))
    mean_other = values.mean() if values.size else 0.0
    return m * (1.0 - mean_other) ** 2


def _across_scale_diff(center: np.ndarray, surround: np.ndarray) -> np.ndarray:
    return np.abs(center - resize_bilinear(surround, center.shape))


def _center_surround(pyr: list, cfg: IttiKochConfig) -> list:
    return [_across_scale_diff(pyr[c], pyr[c + d]) for c in cfg.centers for d in cfg.deltas]


def _color_opponency(rgb: np.ndarray, intensity: np.ndarray):
    r, g, b = (rgb[..., k] for k in range(3))
    valid = intensity > 0.1 * intensity.max()
    safe = np.where(valid, intensity, 1.0)
    r, g, b = (np.where(valid, ch / safe, 0.0) for ch in (r, g, b))
    red = np.maximum(r - (g + b) / 2, 0.0)
    green = np.maximum(g - (r + b) / 2, 0.0)
    blue = np.maximum(b - (r + g) / 2, 0.0)
    yellow = np.maximum((r + g) / 2 - np.abs(r - g) / 2 - b, 0.0)
    return red, green, blue, yellow


def gabor_kernel(theta_deg: float, sigma: float, wavelength: float) -> np.ndarray:
    """Zero-mean even-phase Gabor kernel; ``theta`` is measured from the column axis."""
    radius = int(math.ceil(2 * sigma))
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1].astype(np.float64)
    t = math.radians(theta_deg)
    along = x * math.cos(t) + y * math.sin(t)
    across = -x * math.sin(t) + y * math.cos(t)
    k = np.exp(-(along**2 + across**2) / (2 * sigma**2)) * np.cos(2 * math.pi * along / wavelength)
    return k - k.mean()


def _combine(maps: list, shape: tuple, peak_floor: float) -> np.ndarray:
    total = np.zeros(shape)
    for m in maps:
        total += resize_bilinear(max_normalize(m, peak_floor), shape)
    return total


def itti_koch_raw(image: np.ndarray, cfg: IttiKochConfig = IttiKochConfig()) -> np.ndarray:
    """Unnormalized saliency at pyramid level ``cfg.map_level``.

    ``image`` is ``(H, W)`` gray or ``(H, W, 3)`` RGB, any positive scale.
    """
    image = np.asarray(image, dtype=np.float64)
    if min(image.shape[:2]) < cfg.min_side:
        raise ParameterError(
            f"image {image.shape[0]}x{image.shape[1]} too small for {cfg.levels} pyramid levels "
            f"(need a side of at least {cfg.min_side})"
        )
    is_rgb = image.ndim == 3
    intensity = image.mean(axis=2) if is_rgb else image
    int_pyr = gaussian_pyramid(intensity, cfg.levels)
    out_shape = int_pyr[cfg.map_level].shape
    floor = cfg.peak_floor

    conspicuity = [_combine(_center_surround(int_pyr, cfg), out_shape, floor)]
    weights = [cfg.weights[0]]

    if is_rgb:
        red, green, blue, yellow = (gaussian_pyramid(ch, cfg.levels) for ch in _color_opponency(image, intensity))
        color_maps = []
        for c in cfg.centers:
            for d in cfg.deltas:
                s = c + d
                rg = _across_scale_diff(red[c] - green[c], green[s] - red[s])
                by = _across_scale_diff(blue[c] - yellow[c], yellow[s] - blue[s])
                color_maps.append(resize_bilinear(max_normalize(rg, floor), out_shape)
                                  + resize_bilinear(max_normalize(by, floor), out_shape))
        conspicuity.append(sum(color_maps))
        weights.append(cfg.weights[1])

    orient_total = np.zeros(out_shape)
    for theta in cfg.orientations:
        kernel = gabor_kernel(theta, cfg.gabor_sigma, cfg.gabor_wavelength)
        o_pyr = [np.abs(ndimage.correlate(level, kernel, mode="reflect")) for level in int_pyr]
        orient_total += max_normalize(_combine(_center_surround(o_pyr, cfg), out_shape, floor), floor)
    conspicuity.append(orient_total)
    weights.append(cfg.weights[2])

    weights = np.asarray(weights)
    if weights.sum() <= 0:
        return np.zeros(out_shape)
    weights = weights / weights.sum()
    return sum(w * max_normalize(m, floor) for w, m in zip(weights, conspicuity))


def itti_koch(raw, cfg: IttiKochConfig = IttiKochConfig(), target: tuple = WORKING_SIZE) -> SaliencyMap:
    """Normalized Itti-Koch saliency of an original-resolution frame.

    Grayscale input skips the color channel; the remaining channel weights
    are rescaled to sum to one. A contrast-free image gives the uniform map
    flagged degenerate.
    """
    data = raw.data if isinstance(raw, RawFrame) else np.asarray(raw)
    sal = itti_koch_raw(np.asarray(data, dtype=np.float64) / 255.0 if data.dtype == np.uint8 else data, cfg)
    return normalize_map(np.maximum(resize_bilinear(sal, target), 0.0))


# ==========================================================================
# Farneback optical flow


@dataclass(frozen=True)
class FlowConfig:
    pyr_scale: float = 0.5
    levels: int = 3
    winsize: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not 0 < self.pyr_scale < 1:
            raise ParameterError(f"pyr_scale must be in (0, 1), got {self.pyr_scale}")
        if self.winsize < 3 or self.winsize % 2 == 0:
            raise ParameterError(f"winsize must be odd and >= 3, got {self.winsize}")
        if self.levels < 1 or self.iterations < 1 or self.poly_n < 1:
            raise ParameterError("levels, iterations and poly_n must be >= 1")
        if not self.poly_sigma > 0:
            raise ParameterError("poly_sigma must be > 0")

    @property
    def window_sigma(self) -> float:
        return 0.3 * ((self.winsize - 1) * 0.5 - 1) + 0.8


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement; ``dx`` along columns, ``dy`` along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape:
            raise ContractError("flow components differ in shape")
        if not (np.all(np.isfinite(self.dx)) and np.all(np.isfinite(self.dy))):
            raise DataError("flow field contains non-finite values")

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)


def _poly_basis(n: int, sigma: float):
    x = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    # (applicability * basis) correlation taps for powers 0, 1, 2 of one axis
    taps = [g, g * x, g * x * x]
    # Gram matrix of the weighted basis {1, x, y, x^2, y^2, xy}
    yy, xx = np.meshgrid(x, x, indexing="ij")
    w = np.outer(g, g).ravel()
    basis = np.stack([np.ones_like(xx).ravel(), xx.ravel(), yy.ravel(), (xx**2).ravel(), (yy**2).ravel(), (xx * yy).ravel()])
    gram = (basis * w) @ basis.T
    return taps, np.linalg.inv(gram)


def poly_expand(img: np.ndarray, n: int, sigma: float):
    """Per-pixel quadratic fit ``f(p) ~ p^T A p + b^T p + c`` with ``p = (x, y)``.

    Returns ``A`` as ``(H, W, 2, 2)`` and ``b`` as ``(H, W, 2)``.
    """
    taps, inv_gram = _poly_basis(n, sigma)

    def corr(px, py):
        # px: power of x (columns, axis 1); py: power of y (rows, axis 0)
        tmp = ndimage.correlate1d(img, taps[py], axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, taps[px], axis=1, mode="reflect")

    moments = np.stack([corr(0, 0), corr(1, 0), corr(0, 1), corr(2, 0), corr(0, 2), corr(1, 1)], axis=-1)
    r = moments @ inv_gram.T
    A = np.empty(img.shape + (2, 2))
    A[..., 0, 0] = r[..., 3]
    A[..., 1, 1] = r[..., 4]
    A[..., 0, 1] = A[..., 1, 0] = r[..., 5] / 2
    b = r[..., 1:3].copy()
    return A, b


def _warp(field: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    h, w = dx.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [rows + dy, cols + dx]
    flat = field.reshape(h, w, -1)
    out = np.stack(
        [ndimage.map_coordinates(flat[..., k], coords, order=1, mode="nearest") for k in range(flat.shape[-1])],
        axis=-1,
    )
    return out.reshape(field.shape)


def _refine(A1, b1, A2, b2, dx, dy, cfg: FlowConfig):
    for _ in range(cfg.iterations):
        A2w = _warp(A2, dx, dy)
        b2w = _warp(b2, dx, dy)
        A = (A1 + A2w) / 2
        d = np.stack([dx, dy], axis=-1)
        delta_b = -0.5 * (b2w - b1) + np.einsum("...ij,...j->...i", A, d)
        # normal equations, aggregated over a Gaussian window
        ata = np.einsum("...ki,...kj->...ij", A, A)
        atb = np.einsum("...ki,...k->...i", A, delta_b)
        s = cfg.window_sigma
        g11 = blur_array(ata[..., 0, 0], s, "mean")
        g12 = blur_array(ata[..., 0, 1], s, "mean")
        g22 = blur_array(ata[..., 1, 1], s, "mean")
        h1 = blur_array(atb[..., 0], s, "mean")
        h2 = blur_array(atb[..., 1], s, "mean")
        det = g11 * g22 - g12 * g12
        scale = np.maximum(g11 + g22, 1e-30)
        ok = det > 1e-9 * scale * scale
        safe = np.where(ok, det, 1.0)
        dx = np.where(ok, (g22 * h1 - g12 * h2) / safe, dx)
        dy = np.where(ok, (g11 * h2 - g12 * h1) / safe, dy)
    return dx, dy


def _as_gray(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.data
    if isinstance(frame, RawFrame):
        return to_grayscale(frame.data) / 255.0
    return np.asarray(frame, dtype=np.float64)


def farneback_flow(prev, next, cfg: FlowConfig = FlowConfig()) -> FlowField:
    """Dense flow from ``prev`` to ``next`` by polynomial expansion.

    The flow ``d`` at pixel ``p`` satisfies ``next(p + d) ~ prev(p)``.
    Estimation runs coarse to fine over ``cfg.levels`` pyramid levels.
    """
    a, b = _as_gray(prev), _as_gray(next)
    if a.shape != b.shape or a.ndim != 2:
        raise ContractError(f"frames must be 2-D with equal shape, got {a.shape} and {b.shape}")
    h, w = a.shape
    sizes = []
    for k in range(cfg.levels):
        scale = cfg.pyr_scale**k
        size = (max(int(round(h * scale)), 1), max(int(round(w * scale)), 1))
        if min(size) < 2 * cfg.poly_n + 1 and k > 0:
            break
        sizes.append((k, size))
    dx = dy = None
    for k, size in reversed(sizes):
        if k == 0:
            la, lb = a, b
        else:
            sigma = (1.0 / cfg.pyr_scale**k - 1.0) * 0.5
            la = resize_bilinear(blur_array(a, sigma, "mean"), size)
            lb = resize_bilinear(blur_array(b, sigma, "mean"), size)
        if dx is None:
            dx = np.zeros(size)
            dy = np.zeros(size)
        else:
            fy = size[0] / dx.shape[0]
            fx = size[1] / dx.shape[1]
            dx = resize_bilinear(dx, size) * fx
            dy = resize_bilinear(dy, size) * fy
        A1, b1 = poly_expand(la, cfg.poly_n, cfg.poly_sigma)
        A2, b2 = poly_expand(lb, cfg.poly_n, cfg.poly_sigma)
        dx, dy = _refine(A1, b1, A2, b2, dx, dy, cfg)
    return FlowField(dx, dy)


def flow_to_saliency(flow: FlowField, target: tuple | None = None) -> SaliencyMap:
    """Flow magnitude as a distribution, optionally resized to ``target``."""
    mag = flow.magnitude
    if target is not None and tuple(target) != mag.shape:
        mag = np.maximum(resize_bilinear(mag, target), 0.0)
    return normalize_map(mag)


def motion_saliency(prev, next, cfg: FlowConfig = FlowConfig(), target: tuple = WORKING_SIZE) -> SaliencyMap:
    """Motion control map for the transition ``prev -> next``."""
    return flow_to_saliency(farneback_flow(prev, next, cfg), target)

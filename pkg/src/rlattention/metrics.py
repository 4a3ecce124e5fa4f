"""Saliency similarity metrics and the small statistics toolkit used for reporting.

``cc`` and ``kl`` compare a predicted map ``p`` with a reference map ``q``;
``auc`` scores a predicted map against raw fixations. Undefined results
(constant maps, zero variance) are reported as ``nan`` rather than raised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, NoFixationError, ParameterError
from .gazeref import GazeRecord, fixation_pixels
from .imaging import NORMALIZED_ATOL, Rect, SaliencyMap, crop_region

KL_EPSILON = 2.2204e-16


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = KL_EPSILON
    auc_variant: str = "exact"  # "exact" (every threshold) or "judd" (fixation thresholds only)
    crop: Rect | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.auc_variant not in ("exact", "judd"):
            raise ParameterError(f"unknown AUC variant {self.auc_variant!r}")


DEFAULT_CONFIG = MetricConfig()


@dataclass
class MetricResult:
    frame_id: int
    cc: float
    kl: float
    auc: float = math.nan
    episode: str = ""
    flags: tuple = ()

    @property
    def cc_undefined(self) -> bool:
        return math.isnan(self.cc)


def _values(m, crop: Rect | None = None) -> np.ndarray:
    if isinstance(m, SaliencyMap):
        if crop is not None:
            m = crop_region(m, crop)
        return m.values
    arr = np.asarray(m, dtype=np.float64)
    if crop is not None:
        top, left, bottom, right = crop
        arr = arr[top:bottom, left:right]
        total = arr.sum()
        if total > 0:
            arr = arr / total
    return arr


def _pair(p, q, cfg: MetricConfig):
    a, b = _values(p, cfg.crop), _values(q, cfg.crop)
    if a.shape != b.shape:
        raise ContractError(f"map shapes differ: {a.shape} vs {b.shape}")
    return a.ravel(), b.ravel()


def cc(p, q, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Pearson correlation over pixels (population moments); ``nan`` if a map is constant."""
    a, b = _pair(p, q, cfg)
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da) / a.size)
    sb = math.sqrt(float(db @ db) / b.size)
    if sa == 0.0 or sb == 0.0:
        return math.nan
    r = float(da @ db) / a.size / (sa * sb)
    return min(1.0, max(-1.0, r))


def kl(p, q, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Regularized KL divergence of prediction ``p`` from ground truth ``q`` (natural log).

    ``sum q * log(eps + q / (eps + p))``; both maps must be distributions.
    """
    a, b = _pair(p, q, cfg)
    for name, v in (("p", a), ("q", b)):
        if v.min() < 0 or abs(v.sum() - 1.0) > NORMALIZED_ATOL:
            raise ContractError(f"kl: {name} is not a normalized distribution (sum {v.sum():.9g})")
    eps = cfg.epsilon
    return float(np.sum(b * np.log(eps + b / (eps + a))))


def _fixation_values(pred: np.ndarray, fixations) -> tuple:
    """Split prediction values into fixated (one per fixation) and non-fixated pixels."""
    if isinstance(fixations, GazeRecord):
        if not fixations.points:
            raise NoFixationError(f"frame {fixations.frame_id}: no fixations")
        pix = fixation_pixels(fixations, pred.shape)
    else:
        pix = np.asarray(fixations, dtype=int).reshape(-1, 2)
        if len(pix) == 0:
            raise NoFixationError("no fixations")
        h, w = pred.shape
        if np.any(pix < 0) or np.any(pix[:, 0] >= h) or np.any(pix[:, 1] >= w):
            raise ContractError("fixation outside the map")
    fixated = np.zeros(pred.shape, dtype=bool)
    fixated[pix[:, 0], pix[:, 1]] = True
    return pred[pix[:, 0], pix[:, 1]], pred[~fixated]


def auc(pred, fixations, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Area under the ROC curve separating fixated from non-fixated pixels.

    ``fixations`` is a :class:`GazeRecord` (original coordinates) or an
    ``(n, 2)`` array of ``(row, col)`` map pixels. Positives are the
    fixations, negatives every pixel never fixated.

    ``"exact"`` sweeps every distinct map value (ties count half, the
    Mann-Whitney form). ``"judd"`` only places thresholds at fixation values.
    """
    values = _values(pred)
    pos, neg = _fixation_values(values, fixations)
    if neg.size == 0:
        return math.nan
    neg_sorted = np.sort(neg)
    if cfg.auc_variant == "exact":
        below = np.searchsorted(neg_sorted, pos, side="left")
        ties = np.searchsorted(neg_sorted, pos, side="right") - below
        return float(np.mean((below + 0.5 * ties) / neg.size))
    thresholds = np.sort(np.unique(pos))[::-1]
    tp = [0.0]
    fp = [0.0]
    for t in thresholds:
        tp.append(np.count_nonzero(pos >= t) / pos.size)
        fp.append((neg.size - np.searchsorted(neg_sorted, t, side="left")) / neg.size)
    tp.append(1.0)
    fp.append(1.0)
    return float(np.trapezoid(tp, fp))


# --------------------------------------------------------------------------
# statistics


class PearsonResult(NamedTuple):
    r: float
    p: float
    df: int

    @property
    def undefined(self) -> bool:
        return math.isnan(self.r)


class WelchResult(NamedTuple):
    t: float
    p: float
    df: float

    @property
    def undefined(self) -> bool:
        return math.isnan(self.t)


def student_t_two_tailed(t: float, df: float) -> float:
    """Two-tailed p-value ``P(|T| >= |t|)`` for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def pearson_r_p(x: Sequence[float], y: Sequence[float]) -> PearsonResult:
    """Sample Pearson correlation with a two-tailed t-test p-value.

    Zero variance or non-finite input (for example scores normalized by a
    zero final score) gives an undefined result with ``r = p = nan``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterError(f"series must be 1-D and of equal length, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise ParameterError(f"need at least 3 pairs, got {n}")
    df = n - 2
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        return PearsonResult(math.nan, math.nan, df)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return PearsonResult(math.nan, math.nan, df)
    r = min(1.0, max(-1.0, float(dx @ dy) / math.sqrt(sxx * syy)))
    if abs(r) == 1.0:
        return PearsonResult(r, 0.0, df)
    t = r * math.sqrt(df / (1.0 - r * r))
    return PearsonResult(r, student_t_two_tailed(t, df), df)


def welch_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance two-sample t-test, two-tailed."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ParameterError("each sample needs at least 2 values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ParameterError("samples must be finite")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        return WelchResult(math.nan, math.nan, math.nan)
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    return WelchResult(float(t), student_t_two_tailed(t, df), float(df))


def sem(x: Sequence[float]) -> float:
    """Standard error of the mean (sample standard deviation / sqrt(n))."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ParameterError(f"sem needs at least 2 values, got {x.size}")
    return float(x.std(ddof=1) / math.sqrt(x.size))


def compare_maps(p, q, fixations=None, cfg: MetricConfig = DEFAULT_CONFIG, frame_id: int = 0, episode: str = "") -> MetricResult:
    """CC, KL and (when fixations are given) AUC of prediction ``p`` against reference ``q``."""
    flags = []
    for name, m in (("pred", p), ("ref", q)):
        if isinstance(m, SaliencyMap) and m.degenerate:
            flags.append(f"{name}_degenerate")
    c = cc(p, q, cfg)
    if math.isnan(c):
        flags.append("cc_undefined")
    a = math.nan
    if fixations is not None:
        a = auc(p, fixations, cfg) if cfg.crop is None else _auc_cropped(p, fixations, cfg)
    return MetricResult(frame_id, c, kl(p, q, cfg), a, episode, tuple(flags))


def _auc_cropped(p, fixations, cfg: MetricConfig) -> float:
    values = _values(p)
    if isinstance(fixations, GazeRecord):
        pix = fixation_pixels(fixations, values.shape)
    else:
        pix = np.asarray(fixations, dtype=int).reshape(-1, 2)
    top, left, bottom, right = cfg.crop
    inside = (pix[:, 0] >= top) & (pix[:, 0] < bottom) & (pix[:, 1] >= left) & (pix[:, 1] < right)
    pix = pix[inside] - np.array([top, left])
    if len(pix) == 0:
        raise NoFixationError("no fixations inside the crop rectangle")
    return auc(values[top:bottom, left:right], pix, cfg)

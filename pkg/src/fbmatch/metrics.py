"""Region similarity J, boundary F-measure, and the bootstrapped cross-entropy loss.

Boundary conventions: a boundary pixel is an object pixel with at least
one 4-neighbor outside the object (pixels beyond the frame count as
outside). A boundary pixel is matched when some pixel of the other
boundary lies within Euclidean distance ``tol``. The default tolerance is
0.8% of the image diagonal, rounded up, at least 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .core import as_mask
from .errors import BadRatio, DimensionMismatch, EmptyInput

DEFAULT_BOOTSTRAP_RATIO = 0.15


@dataclass(frozen=True)
class ScorePair:
    j: float
    f: float

    @property
    def jf(self) -> float:
        return (self.j + self.f) / 2


def _binary_pair(pred, gt, object_id: int):
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    return pred.labels == object_id, gt.labels == object_id


def jaccard(pred, gt, object_id: int) -> float:
    p, g = _binary_pair(pred, gt, object_id)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary_pixels(binary: np.ndarray) -> np.ndarray:
    """4-connected inner boundary of a boolean mask."""
    b = np.asarray(binary, dtype=bool)
    padded = np.pad(b, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return b & ~interior


def default_tolerance(height: int, width: int) -> int:
    return max(1, math.ceil(0.008 * math.hypot(height, width)))


def _matched_fraction(src: np.ndarray, dst: np.ndarray, tol: float) -> float:
    """Fraction of ``src`` pixels within ``tol`` of some ``dst`` pixel (``dst`` non-empty)."""
    _, (iy, ix) = ndimage.distance_transform_edt(~dst, return_indices=True)
    ys, xs = np.nonzero(src)
    d2 = (ys - iy[ys, xs]) ** 2 + (xs - ix[ys, xs]) ** 2
    return np.count_nonzero(d2 <= tol * tol) / ys.size


def boundary_f(pred, gt, object_id: int, tol: float | None = None) -> float:
    p, g = _binary_pair(pred, gt, object_id)
    if tol is None:
        tol = default_tolerance(*p.shape)
    bp, bg = boundary_pixels(p), boundary_pixels(g)
    has_p, has_g = bp.any(), bg.any()
    if not has_p and not has_g:
        return 1.0
    if not has_p or not has_g:
        return 0.0
    precision = _matched_fraction(bp, bg, tol)
    recall = _matched_fraction(bg, bp, tol)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def score(pred, gt, object_id: int, tol: float | None = None) -> ScorePair:
    return ScorePair(jaccard(pred, gt, object_id), boundary_f(pred, gt, object_id, tol))


def bootstrap_count(n: int, ratio: float) -> int:
    # decimal reading of the ratio: float(0.15) * 20 would round up to 4
    return math.ceil(Fraction(str(ratio)) * n)


def bootstrapped_ce(per_pixel_loss, ratio: float = DEFAULT_BOOTSTRAP_RATIO) -> float:
    """Mean of the ``ceil(ratio * n)`` largest per-pixel losses."""
    losses = np.asarray(per_pixel_loss, dtype=np.float64).ravel()
    if losses.size == 0:
        raise EmptyInput("loss map is empty")
    if not 0 < ratio <= 1:
        raise BadRatio(f"ratio must lie in (0, 1], got {ratio}")
    if (losses < 0).any():
        raise ValueError("losses must be non-negative")
    k = bootstrap_count(losses.size, ratio)
    top = np.sort(losses, kind="stable")[::-1][:k]
    return float(top.mean())


def cross_entropy(logits, labels) -> np.ndarray:
    """Per-pixel ``-log softmax(logits)[label]`` for ``(H, W, K)`` logits and ``(H, W)`` labels."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if z.shape[:-1] != y.shape:
        raise DimensionMismatch(f"logits {z.shape} vs labels {y.shape}")
    z = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    return log_norm - np.take_along_axis(z, y[..., None], axis=-1)[..., 0]

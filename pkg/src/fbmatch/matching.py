"""Global and multi-local foreground/background matching.

For every pixel ``p`` of the current frame and an object ``o``:

* global matching takes the minimum distance from ``p`` to the object's
  pixels (FG) or to everything else (relative BG) of the reference frame;
* multi-local matching does the same against the previous frame but only
  inside square neighborhoods ``|dx|, |dy| <= k`` for each ``k`` in a window
  set, falling back to 1.0 where a neighborhood holds no candidate.

Atrous matching thins the candidate set to a stride-``l`` grid: a fixed
grid anchored at ``origin`` for global matching, and offsets that are
multiples of ``l`` from the query pixel for local matching.

Distances are reduced as squared embedding distances first; the biased
tanh is monotone, so it is applied once to each minimum. Squared
distances accumulate in float64 in channel order, so the dense and atrous
kernels produce bitwise identical results at ``l = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .core import as_mask, as_tensor3
from .distance import MatchParams
from .errors import DimensionMismatch, EmptyWindowSet, InputTooLarge

ORACLE_MAX_PIXELS = 4096
_QUERY_BLOCK = 8


@dataclass(frozen=True)
class WindowSet:
    """Strictly increasing local window radii ``k_1 < ... < k_n``."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        if not sizes:
            raise EmptyWindowSet("window set is empty")
        if sizes[0] < 1 or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"window sizes must be positive and strictly increasing: {sizes}")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return len(self.sizes)

    def __iter__(self):
        return iter(self.sizes)

    @property
    def largest(self) -> int:
        return self.sizes[-1]


@dataclass(frozen=True)
class AtrousSpec:
    """Atrous factor ``l`` and the grid origin used for global matching.

    ``origin=0`` keeps row/column 0; ``origin=factor-1`` reproduces the
    1-indexed ``{l, 2l, ...}`` grid.
    """

    factor: int = 1
    origin: int = 0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError(f"atrous factor must be >= 1, got {self.factor}")
        if not 0 <= self.origin < self.factor:
            raise ValueError(f"atrous origin must lie in [0, {self.factor}), got {self.origin}")

    def grid(self, height: int, width: int) -> np.ndarray:
        """Boolean ``(H, W)`` mask of pixels kept by the global atrous grid."""
        ys = np.arange(height) % self.factor == self.origin
        xs = np.arange(width) % self.factor == self.origin
        return ys[:, None] & xs[None, :]


DENSE = AtrousSpec()


@dataclass
class MatchOutput:
    global_fg: np.ndarray  # (H, W) float32
    global_bg: np.ndarray
    local_fg: np.ndarray  # (n, H, W) float32, one map per window
    local_bg: np.ndarray
    windows: tuple[int, ...]
    referred_pixels: int = 0


def as_windows(windows) -> WindowSet:
    return windows if isinstance(windows, WindowSet) else WindowSet(tuple(windows))


# --------------------------------------------------------------------------
# kernels


@njit(parallel=True, cache=True)
def _global_min_sqdist(q, cand_t, cand_fg):
    """Per-query minimum squared distance to FG and BG candidates.

    q: (N, C) float64; cand_t: (C, M) float64; cand_fg: (M,) bool.
    """
    n, c = q.shape
    m = cand_t.shape[1]
    out_fg = np.full(n, np.inf)
    out_bg = np.full(n, np.inf)
    nblocks = (n + _QUERY_BLOCK - 1) // _QUERY_BLOCK
    for blk in prange(nblocks):
        i0 = blk * _QUERY_BLOCK
        nq = min(n, i0 + _QUERY_BLOCK) - i0
        acc = np.zeros((_QUERY_BLOCK, m))
        for k in range(c):
            row = cand_t[k]
            for t in range(nq):
                qk = q[i0 + t, k]
                a = acc[t]
                for j in range(m):
                    d = qk - row[j]
                    a[j] += d * d
        for t in range(nq):
            a = acc[t]
            bf = np.inf
            bb = np.inf
            for j in range(m):
                if cand_fg[j]:
                    if a[j] < bf:
                        bf = a[j]
                elif a[j] < bb:
                    bb = a[j]
            out_fg[i0 + t] = bf
            out_bg[i0 + t] = bb
    return out_fg, out_bg


@njit(parallel=True, cache=True)
def _global_min_sqdist_dense(q, ref_t, labels, object_id):
    """Dense reference path: every reference pixel, FG test on the label inline."""
    n, c = q.shape
    m = ref_t.shape[1]
    out_fg = np.full(n, np.inf)
    out_bg = np.full(n, np.inf)
    nblocks = (n + _QUERY_BLOCK - 1) // _QUERY_BLOCK
    for blk in prange(nblocks):
        i0 = blk * _QUERY_BLOCK
        nq = min(n, i0 + _QUERY_BLOCK) - i0
        acc = np.zeros((_QUERY_BLOCK, m))
        for k in range(c):
            row = ref_t[k]
            for t in range(nq):
                qk = q[i0 + t, k]
                a = acc[t]
                for j in range(m):
                    d = qk - row[j]
                    a[j] += d * d
        for t in range(nq):
            a = acc[t]
            bf = np.inf
            bb = np.inf
            for j in range(m):
                if labels[j] == object_id:
                    bf = min(bf, a[j])
                else:
                    bb = min(bb, a[j])
            out_fg[i0 + t] = bf
            out_bg[i0 + t] = bb
    return out_fg, out_bg


@njit(cache=True)
def _ring_slots(windows):
    """slot[r] = index of the smallest window containing Chebyshev radius r."""
    kmax = windows[-1]
    slot = np.empty(kmax + 1, np.int64)
    wi = 0
    for r in range(kmax + 1):
        while windows[wi] < r:
            wi += 1
        slot[r] = wi
    return slot


@njit(parallel=True, cache=True)
def _local_ring_min_sqdist(cur, prev, prev_fg, windows, step):
    """Ring-wise minima of squared distance inside the largest window.

    cur, prev: (C, H, W) float64; prev_fg: (H, W) bool. Offsets are the
    multiples of ``step`` within the largest radius. Each candidate is
    evaluated once and recorded in the smallest window containing it;
    callers take a cumulative min over windows afterwards.
    """
    c, h, w = cur.shape
    n = windows.shape[0]
    slot = _ring_slots(windows)
    reach = (windows[n - 1] // step) * step
    out_fg = np.full((n, h, w), np.inf)
    out_bg = np.full((n, h, w), np.inf)
    for y in prange(h):
        acc = np.empty(w)
        for dy in range(-reach, reach + 1, step):
            yy = y + dy
            if yy < 0 or yy >= h:
                continue
            for dx in range(-reach, reach + 1, step):
                x0 = max(0, -dx)
                x1 = min(w, w - dx)
                if x0 >= x1:
                    continue
                s = slot[max(abs(dy), abs(dx))]
                for x in range(x0, x1):
                    acc[x] = 0.0
                for k in range(c):
                    cr = cur[k, y]
                    pr = prev[k, yy]
                    for x in range(x0, x1):
                        d = cr[x] - pr[x + dx]
                        acc[x] += d * d
                fg_row = prev_fg[yy]
                for x in range(x0, x1):
                    v = acc[x]
                    if fg_row[x + dx]:
                        if v < out_fg[s, y, x]:
                            out_fg[s, y, x] = v
                    elif v < out_bg[s, y, x]:
                        out_bg[s, y, x] = v
    return out_fg, out_bg


@njit(parallel=True, cache=True)
def _local_ring_min_sqdist_dense(cur, prev, prev_fg, windows):
    c, h, w = cur.shape
    n = windows.shape[0]
    slot = _ring_slots(windows)
    kmax = windows[n - 1]
    out_fg = np.full((n, h, w), np.inf)
    out_bg = np.full((n, h, w), np.inf)
    for y in prange(h):
        acc = np.empty(w)
        for yy in range(max(0, y - kmax), min(h, y + kmax + 1)):
            dy = yy - y
            for dx in range(-kmax, kmax + 1):
                x0 = max(0, -dx)
                x1 = min(w, w - dx)
                if x0 >= x1:
                    continue
                s = slot[max(abs(dy), abs(dx))]
                acc[x0:x1] = 0.0
                for k in range(c):
                    for x in range(x0, x1):
                        d = cur[k, y, x] - prev[k, yy, x + dx]
                        acc[x] += d * d
                for x in range(x0, x1):
                    if prev_fg[yy, x + dx]:
                        out_fg[s, y, x] = min(out_fg[s, y, x], acc[x])
                    else:
                        out_bg[s, y, x] = min(out_bg[s, y, x], acc[x])
    return out_fg, out_bg


# --------------------------------------------------------------------------
# helpers


def _to_distance(min_sqdist: np.ndarray, bias: float) -> np.ndarray:
    out = np.ones(min_sqdist.shape, dtype=np.float32)
    hit = np.isfinite(min_sqdist)
    out[hit] = np.tanh((min_sqdist[hit] + bias) * 0.5)
    return out


def _check_global_inputs(cur, ref, ref_mask):
    cur, ref, ref_mask = as_tensor3(cur), as_tensor3(ref), as_mask(ref_mask)
    if cur.channels != ref.channels:
        raise DimensionMismatch(f"channel counts differ: cur {cur.channels} vs ref {ref.channels}")
    if ref_mask.shape != (ref.height, ref.width):
        raise DimensionMismatch(f"ref mask {ref_mask.shape} vs ref embedding {ref.shape[:2]}")
    return cur, ref, ref_mask


def _check_local_inputs(cur, prev, prev_mask):
    cur, prev, prev_mask = as_tensor3(cur), as_tensor3(prev), as_mask(prev_mask)
    if cur.shape != prev.shape:
        raise DimensionMismatch(f"cur {cur.shape} and prev {prev.shape} must match")
    if prev_mask.shape != (prev.height, prev.width):
        raise DimensionMismatch(f"prev mask {prev_mask.shape} vs prev embedding {prev.shape[:2]}")
    return cur, prev, prev_mask


def _axis_offsets_in_range(length: int, reach: int, step: int) -> int:
    """Sum over positions of the number of in-range offsets ``{-reach..reach} ∩ step·Z``."""
    if length == 0:
        return 0
    offs = np.arange(-reach, reach + 1, step)
    pos = np.arange(length)[:, None] + offs[None, :]
    return int(((pos >= 0) & (pos < length)).sum())


def local_referred_count(height: int, width: int, largest_window: int, factor: int = 1) -> int:
    """Distance evaluations made by multi-local matching on an ``H x W`` frame."""
    reach = (largest_window // factor) * factor
    return _axis_offsets_in_range(height, reach, factor) * _axis_offsets_in_range(width, reach, factor)


# --------------------------------------------------------------------------
# public operations


def global_match(cur, ref, ref_mask, object_id: int, params: MatchParams = MatchParams(),
                 atrous: AtrousSpec = DENSE):
    """Atrous global FG/BG matching of ``cur`` against the reference frame.

    Returns ``(global_fg, global_bg, referred)`` with (H, W) float32 maps.
    """
    cur, ref, ref_mask = _check_global_inputs(cur, ref, ref_mask)
    h, w, c = cur.shape
    keep = atrous.grid(ref.height, ref.width)
    cand = ref.data[keep].astype(np.float64)
    cand_fg = ref_mask.labels[keep] == object_id
    q = cur.data.reshape(h * w, c).astype(np.float64)
    fg, bg = _global_min_sqdist(q, np.ascontiguousarray(cand.T), cand_fg)
    referred = h * w * cand.shape[0]
    return (
        _to_distance(fg, params.bias_fg).reshape(h, w),
        _to_distance(bg, params.bias_bg).reshape(h, w),
        referred,
    )


def global_match_dense(cur, ref, ref_mask, object_id: int, params: MatchParams = MatchParams()):
    """Global matching over every reference pixel, without any candidate gathering."""
    cur, ref, ref_mask = _check_global_inputs(cur, ref, ref_mask)
    h, w, c = cur.shape
    q = cur.data.reshape(h * w, c).astype(np.float64)
    ref_t = np.ascontiguousarray(ref.data.reshape(-1, c).T.astype(np.float64))
    labels = ref_mask.labels.reshape(-1).astype(np.int64)
    fg, bg = _global_min_sqdist_dense(q, ref_t, labels, int(object_id))
    return (
        _to_distance(fg, params.bias_fg).reshape(h, w),
        _to_distance(bg, params.bias_bg).reshape(h, w),
        h * w * ref.height * ref.width,
    )


def multi_local_match(cur, prev, prev_mask, object_id: int, windows, params: MatchParams = MatchParams(),
                      atrous: AtrousSpec = DENSE):
    """Multi-local FG/BG matching of ``cur`` against the previous frame.

    Returns ``(local_fg, local_bg, referred)``; the maps have shape
    ``(n, H, W)`` with one slice per window in ascending order. Distances
    inside the largest window are computed once and shared by all windows.
    """
    windows = as_windows(windows)
    cur, prev, prev_mask = _check_local_inputs(cur, prev, prev_mask)
    h, w, _ = cur.shape
    step = atrous.factor
    fg, bg = _local_ring_min_sqdist(
        np.ascontiguousarray(cur.data.transpose(2, 0, 1), dtype=np.float64),
        np.ascontiguousarray(prev.data.transpose(2, 0, 1), dtype=np.float64),
        prev_mask.labels == object_id,
        np.asarray(windows.sizes, dtype=np.int64),
        step,
    )
    fg = np.minimum.accumulate(fg, axis=0)
    bg = np.minimum.accumulate(bg, axis=0)
    referred = local_referred_count(h, w, windows.largest, step)
    return _to_distance(fg, params.bias_fg), _to_distance(bg, params.bias_bg), referred


def multi_local_match_dense(cur, prev, prev_mask, object_id: int, windows,
                            params: MatchParams = MatchParams()):
    windows = as_windows(windows)
    cur, prev, prev_mask = _check_local_inputs(cur, prev, prev_mask)
    h, w, _ = cur.shape
    fg, bg = _local_ring_min_sqdist_dense(
        np.ascontiguousarray(cur.data.transpose(2, 0, 1), dtype=np.float64),
        np.ascontiguousarray(prev.data.transpose(2, 0, 1), dtype=np.float64),
        prev_mask.labels == object_id,
        np.asarray(windows.sizes, dtype=np.int64),
    )
    fg = np.minimum.accumulate(fg, axis=0)
    bg = np.minimum.accumulate(bg, axis=0)
    return (
        _to_distance(fg, params.bias_fg),
        _to_distance(bg, params.bias_bg),
        local_referred_count(h, w, windows.largest),
    )


def match_object(cur, ref, ref_mask, prev, prev_mask, object_id: int, windows,
                 params: MatchParams = MatchParams(), atrous: AtrousSpec = DENSE,
                 local_atrous: AtrousSpec | None = None) -> MatchOutput:
    """Global matching against ``ref`` plus multi-local matching against ``prev``.

    ``local_atrous`` defaults to ``atrous``; pass :data:`DENSE` to thin only
    the global candidates.
    """
    windows = as_windows(windows)
    gfg, gbg, n_global = global_match(cur, ref, ref_mask, object_id, params, atrous)
    lfg, lbg, n_local = multi_local_match(
        cur, prev, prev_mask, object_id, windows, params, local_atrous or atrous
    )
    return MatchOutput(gfg, gbg, lfg, lbg, windows.sizes, n_global + n_local)


def count_atrous_candidates(mask, object_id: int, atrous: AtrousSpec = DENSE) -> tuple[int, int]:
    """Sizes of the thinned FG set and of its relative-background counterpart."""
    labels = as_mask(mask).labels
    kept = labels[atrous.grid(*labels.shape)]
    fg = int((kept == object_id).sum())
    return fg, int(kept.size - fg)


def oracle_match(cur, ref, ref_mask, prev, prev_mask, object_id: int, windows,
                 params: MatchParams = MatchParams(), atrous: AtrousSpec = DENSE) -> MatchOutput:
    """Brute-force reference: literal candidate sets per query and window, exp-form distance in float64.

    Limited to frames of at most 4096 pixels.
    """
    windows = as_windows(windows)
    cur, ref, ref_mask = _check_global_inputs(cur, ref, ref_mask)
    cur, prev, prev_mask = _check_local_inputs(cur, prev, prev_mask)
    h, w, _ = cur.shape
    for name, t in (("cur", cur), ("ref", ref), ("prev", prev)):
        if t.height * t.width > ORACLE_MAX_PIXELS:
            raise InputTooLarge(f"{name} has {t.height * t.width} pixels > {ORACLE_MAX_PIXELS}")

    l = atrous.factor
    ref_e = ref.data.astype(np.float64)
    prev_e = prev.data.astype(np.float64)
    ref_is_fg = ref_mask.labels == object_id
    prev_is_fg = prev_mask.labels == object_id
    ry, rx = np.mgrid[0 : ref.height, 0 : ref.width]
    on_grid = (ry % l == atrous.origin) & (rx % l == atrous.origin)
    py, px = np.mgrid[0:h, 0:w]

    def min_dist(embed, sel, qv, bias):
        if not sel.any():
            return 1.0
        d2 = ((embed[sel] - qv) ** 2).sum(axis=1)
        with np.errstate(over="ignore"):
            d = 1.0 - 2.0 / (1.0 + np.exp(d2 + bias))
        return d.min()

    n = len(windows)
    out = MatchOutput(
        np.empty((h, w), np.float64), np.empty((h, w), np.float64),
        np.empty((n, h, w), np.float64), np.empty((n, h, w), np.float64),
        windows.sizes,
    )
    referred = 0
    for y in range(h):
        for x in range(w):
            qv = cur.data[y, x].astype(np.float64)
            out.global_fg[y, x] = min_dist(ref_e, on_grid & ref_is_fg, qv, params.bias_fg)
            out.global_bg[y, x] = min_dist(ref_e, on_grid & ~ref_is_fg, qv, params.bias_bg)
            referred += int(on_grid.sum())
            dy, dx = py - y, px - x
            lattice = (dy % l == 0) & (dx % l == 0)
            for i, k in enumerate(windows):
                hood = lattice & (np.abs(dy) <= k) & (np.abs(dx) <= k)
                out.local_fg[i, y, x] = min_dist(prev_e, hood & prev_is_fg, qv, params.bias_fg)
                out.local_bg[i, y, x] = min_dist(prev_e, hood & ~prev_is_fg, qv, params.bias_bg)
            referred += int(hood.sum())
    out.referred_pixels = referred
    return out

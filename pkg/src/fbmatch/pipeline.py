"""Per-object feature assembly, multi-scale matching, and a decoder-free propagation demo.

Assembled channel layout (C embedding channels, n windows)::

    [cur embed (C) | prev embed (C) | prev mask prob (1) |
     local_fg (n) | local_bg (n) | global_fg (1) | global_bg (1)]

The trained ensembler that would consume these features is not part of
this library; :func:`nn_propagate` labels pixels directly from the
matching maps instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ObjectMask,
    Tensor3,
    as_mask,
    as_tensor3,
    downsample_embedding,
    downsample_mask,
    resize_embedding,
)
from .distance import MatchParams
from .errors import DimensionMismatch
from .matching import (
    DENSE,
    AtrousSpec,
    MatchOutput,
    WindowSet,
    as_windows,
    global_match,
    match_object,
    multi_local_match,
)

VALID_STRIDES = (4, 8, 16)


@dataclass(frozen=True)
class ScaleSpec:
    stride: int
    channels: int
    windows: WindowSet
    atrous: AtrousSpec = DENSE

    def __post_init__(self):
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"stride must be one of {VALID_STRIDES}, got {self.stride}")
        if self.channels < 1:
            raise ValueError("channels must be positive")
        object.__setattr__(self, "windows", as_windows(self.windows))

    @property
    def output_channels(self) -> int:
        return feature_channel_count(self.channels, len(self.windows))


DEFAULT_SCALES = (
    ScaleSpec(4, 32, WindowSet((4, 8, 12, 16, 20, 24)), AtrousSpec(2)),
    ScaleSpec(8, 64, WindowSet((2, 4, 6, 8, 10, 12))),
    ScaleSpec(16, 128, WindowSet((4, 6, 8, 10))),
)


def feature_channel_count(channels: int, n_windows: int) -> int:
    return 2 * channels + 1 + 2 * n_windows + 2


@dataclass(frozen=True, eq=False)
class AssembledFeatures:
    data: np.ndarray  # (H, W, 2C + 1 + 2n + 2) float32
    embed_channels: int
    n_windows: int

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def slices(self) -> dict[str, slice]:
        c, n = self.embed_channels, self.n_windows
        bounds = [("cur", c), ("prev", c), ("prev_mask", 1), ("local_fg", n),
                  ("local_bg", n), ("global_fg", 1), ("global_bg", 1)]
        out, start = {}, 0
        for name, size in bounds:
            out[name] = slice(start, start + size)
            start += size
        return out

    def part(self, name: str) -> np.ndarray:
        return self.data[:, :, self.slices()[name]]


@dataclass(frozen=True)
class ScaleFrames:
    """Reference, previous and current frames at one scale.

    ``prev_probs`` optionally maps object id to a soft ``(H, W)`` mask
    probability; objects without one use the hard ``prev_mask``.
    """

    ref: Tensor3
    ref_mask: ObjectMask
    prev: Tensor3
    prev_mask: ObjectMask
    cur: Tensor3
    prev_probs: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("ref", "prev", "cur"):
            object.__setattr__(self, name, as_tensor3(getattr(self, name)))
        for name in ("ref_mask", "prev_mask"):
            object.__setattr__(self, name, as_mask(getattr(self, name)))

    @property
    def hw(self) -> tuple[int, int]:
        return self.cur.height, self.cur.width


def assemble_features(cur, prev, prev_mask_prob, match: MatchOutput) -> AssembledFeatures:
    cur, prev = as_tensor3(cur), as_tensor3(prev)
    prob = np.asarray(prev_mask_prob, dtype=np.float32)
    h, w = cur.height, cur.width
    shapes = {
        "prev": prev.shape[:2], "prev_mask_prob": prob.shape, "global_fg": match.global_fg.shape,
        "global_bg": match.global_bg.shape, "local_fg": match.local_fg.shape[1:],
        "local_bg": match.local_bg.shape[1:],
    }
    for name, s in shapes.items():
        if tuple(s) != (h, w):
            raise DimensionMismatch(f"{name} has spatial dims {tuple(s)}, expected {(h, w)}")
    if cur.channels != prev.channels:
        raise DimensionMismatch(f"cur has {cur.channels} channels, prev has {prev.channels}")
    if prob.size and (prob.min() < 0 or prob.max() > 1):
        raise ValueError("prev mask probability must lie in [0, 1]")
    n = match.local_fg.shape[0]
    data = np.concatenate(
        [
            cur.data,
            prev.data,
            prob[:, :, None],
            np.moveaxis(match.local_fg, 0, -1),
            np.moveaxis(match.local_bg, 0, -1),
            match.global_fg[:, :, None],
            match.global_bg[:, :, None],
        ],
        axis=2,
    ).astype(np.float32, copy=False)
    return AssembledFeatures(data, cur.channels, n)


def _resize_stack(maps: np.ndarray, h: int, w: int) -> np.ndarray:
    t = resize_embedding(np.moveaxis(maps, 0, -1), h, w)
    return np.ascontiguousarray(np.moveaxis(t.data, -1, 0))


def match_scale(spec: ScaleSpec, frames: ScaleFrames, object_id: int,
                params: MatchParams = MatchParams(), local_downsample: bool = False) -> MatchOutput:
    """Global + multi-local matching for one object at one scale.

    With ``local_downsample`` the local matching runs on half-size
    embeddings (bilinear) and its maps are resized back to full size.
    """
    if frames.cur.channels != spec.channels:
        raise DimensionMismatch(f"stride {spec.stride}: expected {spec.channels} channels, got {frames.cur.channels}")
    if not local_downsample:
        return match_object(frames.cur, frames.ref, frames.ref_mask, frames.prev, frames.prev_mask,
                            object_id, spec.windows, params, spec.atrous)
    h, w = frames.hw
    gfg, gbg, n_global = global_match(frames.cur, frames.ref, frames.ref_mask, object_id, params, spec.atrous)
    lfg, lbg, n_local = multi_local_match(
        downsample_embedding(frames.cur, 2), downsample_embedding(frames.prev, 2),
        downsample_mask(frames.prev_mask, 2), object_id, spec.windows, params, spec.atrous,
    )
    return MatchOutput(gfg, gbg, _resize_stack(lfg, h, w), _resize_stack(lbg, h, w),
                       spec.windows.sizes, n_global + n_local)


def run_scale(spec: ScaleSpec, frames: ScaleFrames, object_id: int,
              params: MatchParams = MatchParams(), local_downsample: bool = False) -> AssembledFeatures:
    match = match_scale(spec, frames, object_id, params, local_downsample)
    prob = frames.prev_probs.get(object_id)
    if prob is None:
        prob = (frames.prev_mask.labels == object_id).astype(np.float32)
    return assemble_features(frames.cur, frames.prev, prob, match)


def run_multiscale(specs: Sequence[ScaleSpec], pyramid: Mapping[int, ScaleFrames], objects: Sequence[int],
                   params: MatchParams | Mapping[int, MatchParams] = MatchParams(),
                   local_downsample: bool = False) -> dict[int, dict[int, AssembledFeatures]]:
    """Run every scale for every object.

    ``pyramid`` and a per-scale ``params`` mapping are keyed by stride.
    Returns ``{stride: {object_id: AssembledFeatures}}``.
    """
    strides = [s.stride for s in specs]
    if len(set(strides)) != len(strides):
        raise ValueError(f"duplicate strides in specs: {strides}")
    missing = [s for s in strides if s not in pyramid]
    if missing:
        raise DimensionMismatch(f"pyramid lacks scales with stride {missing}")
    base = min(strides)
    bh, bw = pyramid[base].hw
    for s in strides:
        expect = (math.ceil(bh * base / s), math.ceil(bw * base / s))
        if pyramid[s].hw != expect:
            raise DimensionMismatch(f"stride {s}: dims {pyramid[s].hw}, expected {expect}")
    out: dict[int, dict[int, AssembledFeatures]] = {}
    for spec in specs:
        p = params.get(spec.stride, MatchParams()) if isinstance(params, Mapping) else params
        frames = pyramid[spec.stride]
        out[spec.stride] = {o: run_scale(spec, frames, o, p, local_downsample) for o in objects}
    return out


def nn_propagate(ref, prev, cur, objects: Sequence[int], params: MatchParams = MatchParams(),
                 windows=(1,), atrous: AtrousSpec = DENSE) -> ObjectMask:
    """Label ``cur`` by nearest-embedding matching, without a decoder.

    Each object scores ``min(global_fg, local_fg...)``. The background
    score is the largest per-object relative-background score: a pixel
    counts as background only when it lies close to the background of
    every object. The label is the argmin over ``[background, *objects]``
    with ties going to background, then to the smallest id.
    """
    (ref_e, ref_m), (prev_e, prev_m) = ref, prev
    cur = as_tensor3(cur)
    ids = sorted(int(o) for o in objects)
    if not ids:
        return ObjectMask(np.zeros((cur.height, cur.width), np.uint16))
    fg_scores, bg_scores = [], []
    for o in ids:
        m = match_object(cur, ref_e, ref_m, prev_e, prev_m, o, windows, params, atrous)
        fg_scores.append(np.minimum(m.global_fg, m.local_fg.min(axis=0)))
        bg_scores.append(np.minimum(m.global_bg, m.local_bg.min(axis=0)))
    scores = np.stack([np.max(bg_scores, axis=0), *fg_scores])
    labels = np.asarray([0, *ids], dtype=np.uint16)
    return ObjectMask(labels[np.argmin(scores, axis=0)])


def propagate_sequence(ref_embed, ref_mask, embeds: Sequence, params: MatchParams = MatchParams(),
                       windows=(1,), atrous: AtrousSpec = DENSE) -> list[ObjectMask]:
    """Propagate ``ref_mask`` through ``embeds`` frame by frame.

    Each prediction becomes the previous mask of the next frame; the first
    frame uses the reference frame as its previous frame.
    """
    ref_embed, ref_mask = as_tensor3(ref_embed), as_mask(ref_mask)
    objects = ref_mask.object_ids()
    prev = (ref_embed, ref_mask)
    out = []
    for e in embeds:
        e = as_tensor3(e)
        pred = nn_propagate((ref_embed, ref_mask), prev, e, objects, params, windows, atrous)
        out.append(pred)
        prev = (e, pred)
    return out

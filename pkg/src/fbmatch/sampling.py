"""Balanced random-crop and sequential clip sampling.

Randomness comes from :class:`PCG32` (PCG-XSH-RR, 64-bit state, 32-bit
output, O'Neill's reference ``pcg32_srandom``/``pcg32_boundedrand``), so a
seed yields the same draws in any language that implements the same
generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FrameSequence, ObjectMask, Tensor3, resize_embedding, resize_mask
from .errors import MaxRetriesExceeded, VideoTooShort, WindowTooLarge

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
_PCG_MULT = 6364136223846793005
DEFAULT_STREAM = 54


class PCG32:
    def __init__(self, seed: int, stream: int = DEFAULT_STREAM):
        self.state = 0
        self.inc = ((stream << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def bounded(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` without modulo bias."""
        if not 0 < bound <= _MASK32 + 1:
            raise ValueError(f"bound must be in [1, 2**32], got {bound}")
        threshold = ((1 << 32) - bound) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def uniform(self) -> float:
        """Float in ``[0, 1)`` with 32 random bits."""
        return self.next_u32() / 4294967296.0


@dataclass(frozen=True)
class CropConfig:
    window: tuple[int, int] = (465, 465)
    min_fg_pixels: int | None = None  # None: 1% of the window area, rounded up
    max_retries: int = 50
    scale_range: tuple[float, float] = (1.0, 1.3)

    def __post_init__(self):
        h, w = self.window
        if h < 1 or w < 1:
            raise ValueError(f"crop window must be positive, got {self.window}")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")
        if self.min_fg_pixels is not None and self.min_fg_pixels < 0:
            raise ValueError("min_fg_pixels must be >= 0")

    @property
    def fg_threshold(self) -> int:
        if self.min_fg_pixels is not None:
            return self.min_fg_pixels
        return math.ceil(self.window[0] * self.window[1] / 100)


@dataclass(frozen=True)
class CropWindow:
    top: int
    left: int
    scale: float
    scaled_hw: tuple[int, int]


@dataclass(frozen=True)
class CropResult:
    frames: FrameSequence
    window: CropWindow
    retries: int


@dataclass(frozen=True)
class ClipSample:
    ref_index: int
    sequence: tuple[int, ...]


def _scaled_hw(h: int, w: int, scale: float) -> tuple[int, int]:
    return max(1, round(h * scale)), max(1, round(w * scale))


def _draw_window(rng: PCG32, h: int, w: int, cfg: CropConfig) -> CropWindow:
    lo, hi = cfg.scale_range
    scale = lo + (hi - lo) * rng.uniform()
    sh, sw = _scaled_hw(h, w, scale)
    wh, ww = cfg.window
    top = rng.bounded(sh - wh + 1)
    left = rng.bounded(sw - ww + 1)
    return CropWindow(top, left, scale, (sh, sw))


def _check_fits(h: int, w: int, cfg: CropConfig) -> None:
    sh, sw = _scaled_hw(h, w, cfg.scale_range[0])
    if cfg.window[0] > sh or cfg.window[1] > sw:
        raise WindowTooLarge(f"crop window {cfg.window} exceeds frame {(sh, sw)} at scale {cfg.scale_range[0]}")


def draw_windows(seed: int, frame_hw: tuple[int, int], cfg: CropConfig, count: int) -> list[CropWindow]:
    """The first ``count`` candidate windows the sampler would try for ``seed``."""
    _check_fits(*frame_hw, cfg)
    rng = PCG32(seed)
    return [_draw_window(rng, *frame_hw, cfg) for _ in range(count)]


def apply_window(frames: FrameSequence, win: CropWindow, size: tuple[int, int]) -> FrameSequence:
    """Scale every frame to ``win.scaled_hw`` and cut the same window out of each."""
    sh, sw = win.scaled_hw
    y0, x0 = win.top, win.left
    y1, x1 = y0 + size[0], x0 + size[1]
    out = []
    for e, m in frames:
        e = resize_embedding(e, sh, sw)
        m = resize_mask(m, sh, sw)
        out.append((Tensor3(e.data[y0:y1, x0:x1]), ObjectMask(m.labels[y0:y1, x0:x1])))
    return FrameSequence(tuple(out))


def balanced_random_crop(frames: FrameSequence, cfg: CropConfig = CropConfig(), seed: int = 0) -> CropResult:
    """Crop all frames with one window whose first-frame crop has enough foreground.

    Scale and position are redrawn together until the first frame's crop
    holds at least ``cfg.fg_threshold`` non-zero mask pixels, for at most
    ``cfg.max_retries`` draws.
    """
    if not isinstance(frames, FrameSequence):
        frames = FrameSequence(tuple(frames))
    if len(frames) == 0:
        raise ValueError("frame sequence is empty")
    first_mask = frames[0][1]
    h, w = first_mask.shape
    _check_fits(h, w, cfg)
    rng = PCG32(seed)
    need = cfg.fg_threshold
    wh, ww = cfg.window
    for attempt in range(cfg.max_retries):
        win = _draw_window(rng, h, w, cfg)
        m = resize_mask(first_mask, *win.scaled_hw).labels
        fg = int(np.count_nonzero(m[win.top : win.top + wh, win.left : win.left + ww]))
        if fg >= need:
            return CropResult(apply_window(frames, win, cfg.window), win, attempt)
    raise MaxRetriesExceeded(f"no crop with >= {need} foreground pixels in {cfg.max_retries} draws")


def hflip(frames: FrameSequence) -> FrameSequence:
    return FrameSequence(tuple(
        (Tensor3(e.data[:, ::-1]), ObjectMask(m.labels[:, ::-1])) for e, m in frames
    ))


def sample_clip(video_len: int, n: int = 3, seed: int = 0) -> ClipSample:
    """A uniform reference frame plus ``n + 1`` consecutive frames (previous + ``n`` current)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if video_len < n + 1:
        raise VideoTooShort(f"video of {video_len} frames cannot hold {n + 1} consecutive frames")
    rng = PCG32(seed)
    ref = rng.bounded(video_len)
    start = rng.bounded(video_len - n)
    return ClipSample(ref, tuple(range(start, start + n + 1)))

"""Instance-level guidance pooling and the channel-wise sigmoid gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import Tensor3, as_mask, as_tensor3, load_tensor
from .errors import DimensionMismatch

GUIDANCE_ORDER = ("first_fg", "first_bg", "prev_fg", "prev_bg")


@dataclass(frozen=True, eq=False)
class GuidanceVector:
    """Concatenated channel means ``[first-FG, first-BG, prev-FG, prev-BG]`` (length 4C)."""

    values: np.ndarray

    @property
    def channels(self) -> int:
        return self.values.size // 4

    def segment(self, name: str) -> np.ndarray:
        i = GUIDANCE_ORDER.index(name)
        c = self.channels
        return self.values[i * c : (i + 1) * c]


@dataclass(frozen=True, eq=False)
class GateParams:
    weight: np.ndarray  # (M, 4C)
    bias: np.ndarray  # (M,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape[0] != b.size:
            raise DimensionMismatch(f"gate weight {w.shape} and bias {b.shape} disagree")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ValueError("gate parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, gated_channels: int, guidance_len: int) -> "GateParams":
        return cls(np.zeros((gated_channels, guidance_len)), np.zeros(gated_channels))


def load_gate_params(weight_path, bias_path) -> GateParams:
    """Read gate weights from FBT files shaped ``M x 4C x 1`` and ``M x 1 x 1``."""
    w = load_tensor(weight_path)
    b = load_tensor(bias_path)
    if w.channels != 1 or b.shape[1:] != (1, 1):
        raise DimensionMismatch(f"gate tensors must be M x 4C x 1 and M x 1 x 1, got {w.shape}, {b.shape}")
    return GateParams(w.data[:, :, 0], b.data[:, 0, 0])


def _group_mean(embed: np.ndarray, sel: np.ndarray) -> np.ndarray:
    if not sel.any():
        return np.zeros(embed.shape[-1])
    return embed[sel].astype(np.float64).mean(axis=0)


def instance_pool(first, prev, object_id: int) -> GuidanceVector:
    """Channel-wise average pooling over the four FG/BG pixel groups.

    ``first`` and ``prev`` are ``(embedding, mask)`` pairs. A group with no
    pixels contributes zeros.
    """
    (fe, fm), (pe, pm) = first, prev
    fe, pe = as_tensor3(fe), as_tensor3(pe)
    fm, pm = as_mask(fm), as_mask(pm)
    if fe.channels != pe.channels:
        raise DimensionMismatch(f"channel counts differ: {fe.channels} vs {pe.channels}")
    for e, m in ((fe, fm), (pe, pm)):
        if m.shape != (e.height, e.width):
            raise DimensionMismatch(f"mask {m.shape} vs embedding {e.shape[:2]}")
    f_fg = fm.labels == object_id
    p_fg = pm.labels == object_id
    parts = [
        _group_mean(fe.data, f_fg),
        _group_mean(fe.data, ~f_fg),
        _group_mean(pe.data, p_fg),
        _group_mean(pe.data, ~p_fg),
    ]
    return GuidanceVector(np.concatenate(parts))


def gate_scales(g: GuidanceVector, params: GateParams) -> np.ndarray:
    """Per-channel gate ``sigmoid(W g + b)``."""
    if params.weight.shape[1] != g.values.size:
        raise DimensionMismatch(f"gate expects guidance of {params.weight.shape[1]}, got {g.values.size}")
    return expit(params.weight @ g.values + params.bias)


def gate_forward(g: GuidanceVector, params: GateParams, feature):
    """Scale each channel of ``feature`` by its gate value."""
    feature = as_tensor3(feature)
    s = gate_scales(g, params)
    if feature.channels != s.size:
        raise DimensionMismatch(f"feature has {feature.channels} channels, gate has {s.size}")
    return Tensor3((feature.data * s).astype(np.float32))

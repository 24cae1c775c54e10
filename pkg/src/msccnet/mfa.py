"""Multi-level feature aggregation: align three backbone levels and fuse them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

from . import tensor as T
from .exceptions import ConfigError, ContractError
from .tensor import Tensor


class AlignedFeatures(NamedTuple):
    f1p: Tensor
    f2p: Tensor
    f3p: Tensor


@dataclass
class MfaParams:
    align_weights: list[Tensor]  # each [C, C_i, 3, 3]
    align_biases: list[Tensor]
    fuse_weight: Tensor  # [C, n_levels * C, 1, 1]
    fuse_bias: Tensor


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return T.relu(x)
    if activation == "none":
        return x
    raise ConfigError(f"unknown activation {activation!r}")


def align(level, weight, bias, target_hw: tuple[int, int], activation: str = "relu") -> Tensor:
    """3x3 same-conv to C channels, then mean-pool down to ``target_hw``."""
    level = T.as_tensor(level)
    h_i, w_i = level.shape[-2:]
    h, w = target_hw
    if h_i < h or w_i < w:
        raise ContractError(f"cannot align {h_i}x{w_i} features down to {h}x{w}")
    if h_i % h or w_i % w or h_i // h != w_i // w:
        raise ConfigError(f"non-integer or anisotropic downsample ratio {h_i}x{w_i} -> {h}x{w}")
    kh = T.as_tensor(weight).shape[-1]
    out = T.conv2d(level, weight, bias, stride=1, pad=kh // 2)
    out = _activate(out, activation)
    return T.avg_pool2d(out, h_i // h)


def aggregate(aligned: Sequence[Tensor], weight, bias, activation: str = "relu") -> Tensor:
    """Channel concat of the aligned levels, then 1x1 conv back to C channels."""
    shapes = {t.shape for t in aligned}
    if len(shapes) != 1:
        raise ContractError(f"aligned feature shapes differ: {sorted(shapes)}")
    axis = aligned[0].ndim - 3
    stacked = T.concat(aligned, axis=axis)
    return _activate(T.conv2d(stacked, weight, bias), activation)


def mfa_forward(levels: Sequence[Tensor], params: MfaParams, target_hw, activation: str = "relu") -> Tensor:
    if len(levels) != len(params.align_weights):
        raise ContractError(f"expected {len(params.align_weights)} feature levels, got {len(levels)}")
    aligned = [
        align(f, w, b, target_hw, activation)
        for f, w, b in zip(levels, params.align_weights, params.align_biases)
    ]
    return aggregate(aligned, params.fuse_weight, params.fuse_bias, activation)

"""Multi-spectral class-center attention.

Pipeline for aggregated features ``F_A`` of shape ``[C, h, w]`` (optionally
with a leading batch axis):

1. decompose into N DCT bands and group into M spectra ``[M, C/M, h, w]``;
2. per-spectrum 1x1 classifier -> coarse class maps ``P_S [M, k, h, w]``;
3. pool one center per (spectrum, class) from the spectral features;
4. one graph-convolution layer over the M*k center nodes;
5. per-pixel attention over the k centers of each spectrum, using the
   matching channel block of ``F_A``, gives weighted features ``F'_A``;
6. fuse ``F_A`` and ``F'_A`` with a 1x1 conv.

The coarse maps are also fused by a 1x1 conv into auxiliary logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ContractError
from .spectral import SpectralBasis, group_spectra, spectral_transform
from .tensor import Tensor

CENTER_WEIGHTINGS = ("softmax_logits", "softmax_probs", "normalized", "raw")
GCN_GRAPHS = ("same_class", "complete", "none")
FUSIONS = ("concat", "add")


@dataclass(frozen=True)
class MsccConfig:
    M: int = 4
    k: int = 2
    spectral_mode: str = "modulate"
    use_gcn: bool = True
    gcn_graph: str = "same_class"
    fusion: str = "concat"
    center_weights: str = "softmax_logits"
    activation: str = "relu"
    spectral_gain: str = "unit_power"

    def validate(self) -> "MsccConfig":
        if self.k != 2:
            raise ConfigError("only k=2 classes (real, fake) are supported")
        if self.gcn_graph not in GCN_GRAPHS:
            raise ConfigError(f"gcn_graph must be one of {GCN_GRAPHS}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.spectral_gain not in ("unit_power", "none"):
            raise ConfigError("spectral_gain must be 'unit_power' or 'none'")
        if self.center_weights not in CENTER_WEIGHTINGS:
            raise ConfigError(f"center_weights must be one of {CENTER_WEIGHTINGS}")
        return self


@dataclass
class MsccParams:
    head_weight: Tensor  # [M, k, C/M]  per-spectrum coarse classifier
    head_bias: Tensor  # [M, k]
    gcn_weight: Tensor  # [C/M, C/M]
    adjacency: np.ndarray  # [M*k, M*k], normalized, constant
    fuse_weight: Tensor  # [C, 2C, 1, 1] (concat) or [C, C, 1, 1] (add)
    fuse_bias: Tensor
    coarse_weight: Tensor | None = None  # [k, M*k, 1, 1]
    coarse_bias: Tensor | None = None


class RefineOutput(NamedTuple):
    features: Tensor  # F_M
    attention: Tensor  # [..., M, hw, k]
    weighted: Tensor  # F'_A restacked to [..., C, h, w]


class MsccOutput(NamedTuple):
    features: Tensor
    spectra: Tensor  # [..., M, C/M, h, w]
    coarse_logits: Tensor
    coarse_probs: Tensor
    centers: Tensor
    refined_centers: Tensor
    attention: Tensor
    aux_logits: Tensor | None


def normalized_adjacency(M: int, k: int, graph: str = "same_class") -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 over the M*k center nodes, node index m*k + c.

    ``same_class`` links the centers of one class across all spectra,
    ``complete`` links every pair, ``none`` keeps only self-loops.
    """
    n = M * k
    cls = np.arange(n) % k
    if graph == "same_class":
        A = (cls[:, None] == cls[None, :]).astype(float)
    elif graph == "complete":
        A = np.ones((n, n))
    elif graph == "none":
        A = np.zeros((n, n))
    else:
        raise ConfigError(f"unknown gcn graph {graph!r}")
    np.fill_diagonal(A, 0.0)
    A_hat = A + np.eye(n)
    d = 1.0 / np.sqrt(A_hat.sum(axis=1))
    return d[:, None] * A_hat * d[None, :]


def coarse_predict(spectra, head_weight, head_bias) -> tuple[Tensor, Tensor]:
    """Per-spectrum 1x1 classifier; returns ``(probs, logits)`` of shape [..., M, k, h, w]."""
    spectra = T.as_tensor(spectra)
    *lead, M, c, h, w = spectra.shape
    head_weight, head_bias = T.as_tensor(head_weight), T.as_tensor(head_bias)
    if head_weight.shape[0] != M or head_weight.shape[2] != c:
        raise ContractError(f"coarse head {head_weight.shape} does not match spectra {spectra.shape}")
    k = head_weight.shape[1]
    flat = spectra.reshape(tuple(lead) + (M, c, h * w))
    logits = T.matmul(head_weight, flat) + head_bias.reshape((M, k, 1))
    logits = logits.reshape(tuple(lead) + (M, k, h, w))
    return T.softmax(logits, axis=-3), logits


def center_weight_maps(scores, weighting: str = "softmax") -> Tensor:
    """Turn per-class score maps [..., k, h, w] into pixel weights [..., k, hw]."""
    scores = T.as_tensor(scores)
    *lead, k, h, w = scores.shape
    flat = scores.reshape(tuple(lead) + (k, h * w))
    if weighting == "softmax":
        return T.softmax(flat, axis=-1)
    if weighting == "normalized":
        return flat / flat.sum(axis=-1, keepdims=True)
    if weighting == "raw":
        return flat
    raise ConfigError(f"unknown center weighting {weighting!r}")


def class_centers(scores, spectra, weighting: str = "softmax") -> Tensor:
    """Weighted pixel sums of each spectrum's features, one per class: [..., M, k, C/M]."""
    spectra = T.as_tensor(spectra)
    *lead, M, c, h, w = spectra.shape
    weights = center_weight_maps(scores, weighting)
    if weights.shape[-3:] != (M, weights.shape[-2], h * w):
        raise ContractError(f"score maps {T.as_tensor(scores).shape} do not match spectra {spectra.shape}")
    feats = spectra.reshape(tuple(lead) + (M, c, h * w))
    return T.matmul(weights, T.swapaxes_last(feats))


def graph_interact(centers, gcn_weight, adjacency: np.ndarray) -> Tensor:
    """ReLU(Â X W) with the M*k centers as graph nodes."""
    centers = T.as_tensor(centers)
    *lead, M, k, c = centers.shape
    if adjacency.shape != (M * k, M * k):
        raise ContractError(f"adjacency {adjacency.shape} does not cover {M * k} nodes")
    nodes = centers.reshape(tuple(lead) + (M * k, c))
    mixed = T.matmul(T.matmul(Tensor(adjacency), nodes), gcn_weight)
    return T.relu(mixed).reshape(tuple(lead) + (M, k, c))


def refine(features, centers, fuse_weight, fuse_bias, fusion: str = "concat", activation: str = "relu") -> RefineOutput:
    """Class-center attention on the M channel blocks of ``features`` and fusion."""
    features = T.as_tensor(features)
    centers = T.as_tensor(centers)
    *lead, C, h, w = features.shape
    lead = tuple(lead)
    M, k, c = centers.shape[-3:]
    if M * c != C:
        raise ContractError(f"centers {centers.shape} do not partition {C} channels")
    blocks = T.swapaxes_last(features.reshape(lead + (M, c, h * w)))  # [..., M, hw, c]
    attention = T.softmax(T.matmul(blocks, T.swapaxes_last(centers)), axis=-1)  # [..., M, hw, k]
    weighted = T.matmul(attention, centers)  # [..., M, hw, c]
    weighted = T.swapaxes_last(weighted).reshape(lead + (C, h, w))
    axis = len(lead)
    if fusion == "concat":
        fused_in = T.concat([features, weighted], axis=axis)
    elif fusion == "add":
        fused_in = features + weighted
    else:
        raise ConfigError(f"unknown fusion {fusion!r}")
    fused = T.conv2d(fused_in, fuse_weight, fuse_bias)
    if activation == "relu":
        fused = T.relu(fused)
    elif activation != "none":
        raise ConfigError(f"unknown activation {activation!r}")
    return RefineOutput(fused, attention, weighted)


def fuse_coarse(coarse_probs, weight, bias) -> Tensor:
    """1x1 conv over the M*k coarse maps -> auxiliary logits [..., k, h, w]."""
    coarse_probs = T.as_tensor(coarse_probs)
    *lead, M, k, h, w = coarse_probs.shape
    stacked = coarse_probs.reshape(tuple(lead) + (M * k, h, w))
    return T.conv2d(stacked, weight, bias)


def mscc_forward(features, params: MsccParams, cfg: MsccConfig, basis: SpectralBasis) -> MsccOutput:
    features = T.as_tensor(features)
    decomposed = spectral_transform(features, basis, cfg.spectral_mode)
    if cfg.spectral_mode != "identity" and cfg.spectral_gain == "unit_power":
        # orthonormal tiles carry 1/N of the power per pixel; restore unit scale
        decomposed = decomposed * float(np.sqrt(basis.N))
    spectra = group_spectra(decomposed, cfg.M)
    probs, logits = coarse_predict(spectra, params.head_weight, params.head_bias)
    if cfg.center_weights == "softmax_logits":
        centers = class_centers(logits, spectra, "softmax")
    elif cfg.center_weights == "softmax_probs":
        centers = class_centers(probs, spectra, "softmax")
    else:
        centers = class_centers(probs, spectra, cfg.center_weights)
    refined = graph_interact(centers, params.gcn_weight, params.adjacency) if cfg.use_gcn else centers
    out = refine(features, refined, params.fuse_weight, params.fuse_bias, cfg.fusion, cfg.activation)
    aux = None
    if params.coarse_weight is not None:
        aux = fuse_coarse(probs, params.coarse_weight, params.coarse_bias)
    return MsccOutput(out.features, spectra, logits, probs, centers, refined, out.attention, aux)

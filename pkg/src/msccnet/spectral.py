"""Orthonormal 2D-DCT bases and frequency-band decomposition of feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ContractError
from .tensor import Tensor

SPECTRAL_MODES = ("modulate", "block", "identity")


@dataclass(frozen=True)
class SpectralConfig:
    U: int = 8
    V: int = 8
    M: int = 4
    C: int = 64

    @property
    def N(self) -> int:
        return self.U * self.V

    def validate(self) -> "SpectralConfig":
        if min(self.U, self.V, self.M, self.C) < 1:
            raise ConfigError(f"spectral extents must be positive: {self}")
        if self.C % self.N:
            raise ConfigError(f"channel width C={self.C} not divisible by N={self.N}")
        if self.C % self.M:
            raise ConfigError(f"channel width C={self.C} not divisible by M={self.M}")
        if self.M > self.N:
            raise ConfigError(f"M={self.M} spectra exceeds N={self.N} bands")
        return self


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """``tiles[n]`` is the DCT-II basis function (u, v) = (n // V, n % V) on a U x V grid."""

    U: int
    V: int
    tiles: np.ndarray

    @property
    def N(self) -> int:
        return self.U * self.V

    def band(self, n: int) -> tuple[int, int]:
        return divmod(n, self.V)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row u holds alpha(u) cos(pi u (i + 1/2) / n)."""
    i = np.arange(n)
    u = i[:, None]
    mat = np.cos(np.pi * u * (i[None, :] + 0.5) / n)
    alpha = np.full(n, np.sqrt(2.0 / n))
    alpha[0] = np.sqrt(1.0 / n)
    return alpha[:, None] * mat


@lru_cache(maxsize=32)
def _tiles(U: int, V: int) -> np.ndarray:
    du, dv = dct_matrix(U), dct_matrix(V)
    tiles = np.einsum("ui,vj->uvij", du, dv).reshape(U * V, U, V)
    tiles.setflags(write=False)
    return tiles


def build_basis(U: int = 8, V: int = 8) -> SpectralBasis:
    if U < 1 or V < 1:
        raise ConfigError(f"basis extents must be >= 1, got {U}x{V}")
    return SpectralBasis(U, V, _tiles(U, V))


def modulation_map(basis: SpectralBasis, C: int, h: int, w: int) -> np.ndarray:
    """Per-channel spatial multiplier ``[C, h, w]``: channel block n carries tile n, tiled periodically."""
    if C % basis.N:
        raise ConfigError(f"C={C} not divisible by N={basis.N}")
    reps_h = -(-h // basis.U)
    reps_w = -(-w // basis.V)
    tiled = np.tile(basis.tiles, (1, reps_h, reps_w))[:, :h, :w]
    return np.repeat(tiled, C // basis.N, axis=0)


def spectral_transform(features, basis: SpectralBasis, mode: str = "modulate") -> Tensor:
    """Decompose ``features`` ([C,h,w] or [B,C,h,w]) into N frequency-band parts.

    ``modulate`` multiplies part n by the spatially tiled basis tile n.
    ``block`` replaces every U x V block of part n by its DCT coefficient (u, v),
    broadcast back over the block.  ``identity`` skips the decomposition.
    """
    features = T.as_tensor(features)
    if features.ndim not in (3, 4):
        raise ContractError(f"spectral_transform expects [C,h,w] or [B,C,h,w], got {features.shape}")
    C, h, w = features.shape[-3:]
    if C % basis.N:
        raise ConfigError(f"C={C} not divisible by N={basis.N}")
    if mode == "identity":
        return features
    modulation = Tensor(modulation_map(basis, C, h, w))
    if mode == "modulate":
        return features * modulation
    if mode == "block":
        if h % basis.U or w % basis.V:
            raise ConfigError(f"block mode needs {h}x{w} divisible by {basis.U}x{basis.V}")
        lead = features.shape[:-3]
        prod = (features * modulation).reshape(lead + (C, h // basis.U, basis.U, w // basis.V, basis.V))
        coeff = prod.sum(axis=(-3, -1), keepdims=True)
        spread = coeff * Tensor(np.ones((basis.U, 1, basis.V)))
        return spread.reshape(lead + (C, h, w))
    raise ConfigError(f"unknown spectral mode {mode!r}; expected one of {SPECTRAL_MODES}")


def group_spectra(features, M: int) -> Tensor:
    """Split the channel axis into M contiguous blocks: [..., C, h, w] -> [..., M, C/M, h, w]."""
    features = T.as_tensor(features)
    C, h, w = features.shape[-3:]
    if M < 1 or C % M:
        raise ConfigError(f"C={C} not divisible by M={M}")
    return features.reshape(features.shape[:-3] + (M, C // M, h, w))


def reconstruct(parts, basis: SpectralBasis) -> np.ndarray:
    """Inverse of ``modulate`` mode: sum over bands of tile_n * part_n.

    Works on raw arrays; returns ``[c, h, w]`` (or batched) where c = C / N.
    """
    data = parts.data if isinstance(parts, Tensor) else np.asarray(parts)
    C, h, w = data.shape[-3:]
    mod = modulation_map(basis, C, h, w)
    weighted = (data * mod).reshape(data.shape[:-3] + (basis.N, C // basis.N, h, w))
    return weighted.sum(axis=-4)

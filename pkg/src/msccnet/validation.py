"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError


def check_images(X, *, single_ok: bool = False) -> np.ndarray:
    """RGB image batch ``[n, 3, H, W]`` with values in 0..255, as float64.

    With ``single_ok`` a lone ``[3, H, W]`` image is promoted to a batch of one.
    """
    X = np.asarray(X)
    if single_ok and X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ContractError(f"expected images of shape [n, 3, H, W], got {X.shape}")
    if X.shape[0] == 0:
        raise ContractError("empty image batch")
    if not np.issubdtype(X.dtype, np.number):
        raise ContractError(f"images must be numeric, got dtype {X.dtype}")
    X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise ContractError("images contain NaN or infinite values")
    if X.min() < 0 or X.max() > 255:
        raise ContractError("image values must lie in [0, 255]")
    return X


def check_masks(y, X: np.ndarray) -> np.ndarray:
    """Binary masks ``[n, H, W]`` matching the image batch; 255 is read as 1."""
    y = np.asarray(y)
    if y.shape != X.shape[:1] + X.shape[2:]:
        raise ContractError(f"masks {y.shape} do not match images {X.shape}")
    if y.size and y.max() > 1:
        y = y > 127
    values = np.unique(y)
    if not np.all(np.isin(values, (0, 1))):
        raise ContractError(f"mask values must be binary, found {values[:5]}")
    return y.astype(np.intp)


def check_labels(labels, masks: np.ndarray) -> np.ndarray:
    """Image labels ``[n]`` in {0, 1}; when absent an image is fake iff its mask is non-empty."""
    if labels is None:
        return masks.reshape(len(masks), -1).any(axis=1).astype(np.intp)
    labels = np.asarray(labels)
    if labels.shape != (len(masks),):
        raise ContractError(f"labels {labels.shape} do not match {len(masks)} masks")
    if not np.all(np.isin(labels, (0, 1))):
        raise ContractError("labels must be 0 (real) or 1 (fake)")
    return labels.astype(np.intp)


def check_pairs(X) -> np.ndarray:
    """Aligned (real, fake) pairs ``[n, 2, 3, H, W]``."""
    X = np.asarray(X)
    if X.ndim == 4 and X.shape[0] == 2:
        X = X[None]
    if X.ndim != 5 or X.shape[1] != 2 or X.shape[2] != 3:
        raise ContractError(f"expected pairs of shape [n, 2, 3, H, W], got {X.shape}")
    if X.size and (X.min() < 0 or X.max() > 255):
        raise ContractError("pair values must lie in [0, 255]")
    return X

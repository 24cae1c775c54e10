"""Central finite differences, used as the independent oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(
    fn: Callable[[], Tensor | float],
    params: Sequence[Tensor],
    picks: Sequence[tuple[int, int]],
    eps: float = 1e-5,
) -> np.ndarray:
    """Estimate d fn / d params[p].flat[i] for every ``(p, i)`` in ``picks``.

    ``fn`` is re-evaluated with the parameter nudged in place; the original
    value is always restored.
    """
    out = np.empty(len(picks))
    with no_grad():
        for n, (p, i) in enumerate(picks):
            flat = params[p].data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            plus = _scalar(fn())
            flat[i] = orig - eps
            minus = _scalar(fn())
            flat[i] = orig
            out[n] = (plus - minus) / (2 * eps)
    return out


def analytic_grad(fn: Callable[[], Tensor], params: Sequence[Tensor], picks) -> np.ndarray:
    for p in params:
        p.grad = None
    fn().backward()
    return np.array([params[p].grad.reshape(-1)[i] if params[p].grad is not None else 0.0 for p, i in picks])


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def sample_picks(params: Sequence[Tensor], n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Draw ``n`` distinct (param, flat index) pairs, weighting tensors equally."""
    picks: set[tuple[int, int]] = set()
    total = sum(p.size for p in params)
    if n > total:
        raise ValueError(f"cannot sample {n} of {total} parameters")
    while len(picks) < n:
        p = int(rng.integers(len(params)))
        picks.add((p, int(rng.integers(params[p].size))))
    return sorted(picks)


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)

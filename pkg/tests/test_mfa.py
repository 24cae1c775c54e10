import numpy as np
import pytest

import oracles
from msccnet.exceptions import ConfigError, ContractError
from msccnet.mfa import MfaParams, aggregate, align, mfa_forward


def _identity_3x3(c):
    k = np.zeros((c, c, 3, 3))
    for i in range(c):
        k[i, i, 1, 1] = 1.0
    return k


def test_align_identity(rng):
    x = np.abs(rng.normal(size=(4, 5, 5)))  # non-negative so the ReLU is inert
    assert np.allclose(align(x, _identity_3x3(4), np.zeros(4), (5, 5)).data, x)


def test_align_constant_map(rng):
    x = np.full((3, 8, 8), 2.0)
    w = np.zeros((5, 3, 3, 3))
    w[:, :, 1, 1] = rng.uniform(0.1, 1.0, size=(5, 3))  # 1x1 support keeps the zero padding out
    out = align(x, w, np.zeros(5), (4, 4)).data
    assert np.allclose(out, out[:, :1, :1])


def test_align_matches_conv_then_mean_oracle(rng):
    x = rng.normal(size=(3, 8, 8))
    w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    expected = oracles.mean_pool_loop(oracles.relu(oracles.conv2d_loop(x, w, b, 1, 1)), 2)
    assert np.max(np.abs(align(x, w, b, (4, 4)).data - expected)) < 1e-10


def test_align_rejects_bad_ratios(rng):
    w = rng.normal(size=(2, 3, 3, 3))
    with pytest.raises(ConfigError):
        align(np.ones((3, 6, 6)), w, np.zeros(2), (4, 4))
    with pytest.raises(ContractError):
        align(np.ones((3, 2, 2)), w, np.zeros(2), (4, 4))


def test_aggregate_cases(rng):
    zeros = [np.zeros((4, 3, 3))] * 3
    assert not aggregate(zeros, rng.normal(size=(4, 12, 1, 1)), np.zeros(4)).data.any()
    levels = [np.abs(rng.normal(size=(4, 3, 3))) for _ in range(3)]
    select = np.zeros((4, 12, 1, 1))
    select[np.arange(4), np.arange(4)] = 1.0
    assert np.allclose(aggregate(levels, select, np.zeros(4)).data, levels[0])
    w, b = rng.normal(size=(4, 12, 1, 1)), rng.normal(size=4)
    expected = oracles.relu(oracles.conv1x1_loop(np.concatenate(levels), w, b))
    assert np.max(np.abs(aggregate(levels, w, b).data - expected)) < 1e-10


def test_aggregate_shape_mismatch():
    with pytest.raises(ContractError):
        aggregate([np.zeros((4, 3, 3)), np.zeros((4, 2, 2))], np.zeros((4, 8, 1, 1)), np.zeros(4))


def test_mfa_forward_shapes(rng):
    levels = [rng.normal(size=(2, c, s, s)) for c, s in ((3, 16), (5, 8), (6, 4))]
    params = MfaParams(
        [rng.normal(size=(4, c, 3, 3)) for c in (3, 5, 6)],
        [np.zeros(4)] * 3,
        rng.normal(size=(4, 12, 1, 1)),
        np.zeros(4),
    )
    assert mfa_forward(levels, params, (4, 4)).shape == (2, 4, 4, 4)

import numpy as np
import pytest

import oracles
from msccnet import tensor as T
from msccnet.exceptions import ConfigError, ContractError
from msccnet.gradcheck import analytic_grad, numerical_grad, relative_error, sample_picks
from msccnet.mscc import (
    MsccConfig,
    MsccParams,
    class_centers,
    coarse_predict,
    fuse_coarse,
    graph_interact,
    mscc_forward,
    normalized_adjacency,
    refine,
)
from msccnet.spectral import build_basis
from msccnet.tensor import Tensor


def test_zero_head_gives_half_probabilities():
    probs, _ = coarse_predict(np.zeros((4, 3, 5, 5)), np.zeros((4, 2, 3)), np.zeros((4, 2)))
    assert np.allclose(probs.data, 0.5)


def test_coarse_shift_invariance(rng):
    spectra = rng.normal(size=(2, 3, 4, 4))
    w, b = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2))
    p1, _ = coarse_predict(spectra, w, b)
    p2, _ = coarse_predict(spectra, w, b + 7.0)
    assert np.allclose(p1.data, p2.data)


def test_coarse_matches_oracle(rng):
    spectra = rng.normal(size=(4, 3, 5, 6))
    w, b = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 2))
    probs, logits = coarse_predict(spectra, w, b)
    p_ref, l_ref = oracles.coarse_loop(spectra, w, b)
    assert np.max(np.abs(probs.data - p_ref)) < 1e-12
    assert np.max(np.abs(logits.data - l_ref)) < 1e-12


def test_uniform_scores_give_spatial_means(rng):
    spectra = rng.normal(size=(3, 4, 5, 5))
    centers = class_centers(np.zeros((3, 2, 5, 5)), spectra).data
    assert np.allclose(centers, spectra.mean(axis=(2, 3))[:, None, :])


def test_peaked_scores_pick_one_pixel(rng):
    spectra = rng.normal(size=(2, 3, 4, 4))
    scores = np.zeros((2, 2, 4, 4))
    scores[:, :, 1, 2] = 1e4
    centers = class_centers(scores, spectra).data
    assert np.allclose(centers, spectra[:, None, :, 1, 2])


def test_centers_match_oracle(rng):
    spectra, scores = rng.normal(size=(4, 3, 5, 4)), rng.normal(size=(4, 2, 5, 4))
    assert np.max(np.abs(class_centers(scores, spectra).data - oracles.centers_loop(scores, spectra))) < 1e-10


def test_other_center_weightings(rng):
    spectra = rng.normal(size=(2, 3, 4, 4))
    probs = rng.uniform(0.1, 1.0, size=(2, 2, 4, 4))
    raw = class_centers(probs, spectra, "raw").data
    expected = np.einsum("mkp,mcp->mkc", probs.reshape(2, 2, 16), spectra.reshape(2, 3, 16))
    assert np.allclose(raw, expected)
    norm = class_centers(probs, spectra, "normalized").data
    assert np.allclose(norm, expected / probs.reshape(2, 2, 16).sum(-1, keepdims=True))
    with pytest.raises(ConfigError):
        class_centers(probs, spectra, "bogus")


def test_adjacency_matches_definition():
    for M in (1, 2, 4):
        assert np.allclose(normalized_adjacency(M, 2), oracles.adjacency_same_class(M, 2))
    assert np.allclose(normalized_adjacency(3, 2, "none"), np.eye(6))
    assert np.allclose(normalized_adjacency(2, 2, "complete"), np.full((4, 4), 0.25))


def test_gcn_degenerate_graph(rng):
    centers = rng.normal(size=(3, 2, 4))
    out = graph_interact(centers, np.eye(4), normalized_adjacency(3, 2, "none")).data
    assert np.allclose(out, np.maximum(centers, 0))


def test_gcn_matches_oracle_and_is_permutation_equivariant(rng):
    centers, W = rng.normal(size=(4, 2, 3)), rng.normal(size=(3, 3))
    A = normalized_adjacency(4, 2)
    out = graph_interact(centers, W, A).data
    assert np.max(np.abs(out - oracles.gcn_loop(centers, W, A))) < 1e-10
    # relabel the spectra: same-class edges are preserved, so outputs permute with the nodes
    perm = rng.permutation(4)
    assert np.allclose(graph_interact(centers[perm], W, A).data, out[perm])


def test_refine_with_identical_centers(rng):
    feats = rng.normal(size=(8, 3, 3))
    shared = rng.normal(size=(4, 1, 2))
    centers = np.repeat(shared, 2, axis=1)
    res = refine(feats, centers, rng.normal(size=(8, 16, 1, 1)), np.zeros(8))
    assert np.allclose(res.attention.data, 0.5)
    for m in range(4):
        assert np.allclose(res.weighted.data[2 * m : 2 * m + 2], shared[m, 0][:, None, None])


def test_refine_pass_through(rng):
    feats = np.abs(rng.normal(size=(8, 3, 3)))
    w = np.zeros((8, 16, 1, 1))
    w[np.arange(8), np.arange(8)] = 1.0
    out = refine(feats, rng.normal(size=(4, 2, 2)), w, np.zeros(8)).features.data
    assert np.allclose(out, feats)


def test_refine_matches_oracle(rng):
    feats, centers = rng.normal(size=(12, 4, 5)), rng.normal(size=(4, 2, 3))
    w, b = rng.normal(size=(12, 24, 1, 1)), rng.normal(size=12)
    res = refine(feats, centers, w, b)
    W = oracles.attention_loop(feats, centers)
    weighted = oracles.weighted_loop(W, centers, 4, 5)
    fused = oracles.relu(oracles.conv1x1_loop(np.concatenate([feats, weighted]), w, b))
    assert np.max(np.abs(res.attention.data - W)) < 1e-10
    assert np.max(np.abs(res.weighted.data - weighted)) < 1e-10
    assert np.max(np.abs(res.features.data - fused)) < 1e-10


def test_refine_add_fusion(rng):
    feats, centers = rng.normal(size=(4, 2, 2)), rng.normal(size=(2, 2, 2))
    w = rng.normal(size=(4, 4, 1, 1))
    res = refine(feats, centers, w, np.zeros(4), fusion="add", activation="none")
    assert np.allclose(res.features.data, oracles.conv1x1_loop(feats + res.weighted.data, w, np.zeros(4)))


def test_refine_rejects_bad_partition(rng):
    with pytest.raises(ContractError):
        refine(np.zeros((10, 2, 2)), np.zeros((4, 2, 2)), np.zeros((10, 20, 1, 1)), np.zeros(10))


def test_fuse_coarse_cases(rng):
    probs = rng.uniform(size=(4, 2, 3, 3))
    avg = np.zeros((2, 8, 1, 1))
    for c in range(2):
        avg[c, c::2] = 0.25
    assert np.allclose(fuse_coarse(probs, avg, np.zeros(2)).data, probs.mean(axis=0))
    assert not fuse_coarse(np.zeros((4, 2, 3, 3)), rng.normal(size=(2, 8, 1, 1)), np.zeros(2)).data.any()
    w, b = rng.normal(size=(2, 8, 1, 1)), rng.normal(size=2)
    assert np.max(np.abs(fuse_coarse(probs, w, b).data - oracles.conv1x1_loop(probs.reshape(8, 3, 3), w, b))) < 1e-12


def _module_params(rng, C=16, M=4, k=2):
    c = C // M
    t = lambda *s: Tensor(rng.normal(scale=0.5, size=s), requires_grad=True)
    return MsccParams(t(M, k, c), t(M, k), t(c, c), normalized_adjacency(M, k), t(C, 2 * C, 1, 1), t(C), t(k, M * k, 1, 1), t(k))


def test_module_output_shapes(rng):
    params = _module_params(rng)
    out = mscc_forward(rng.normal(size=(2, 16, 4, 4)), params, MsccConfig(), build_basis(4, 4))
    assert out.features.shape == (2, 16, 4, 4)
    assert out.spectra.shape == (2, 4, 4, 4, 4)
    assert out.attention.shape == (2, 4, 16, 2)
    assert out.aux_logits.shape == (2, 2, 4, 4)


def test_module_gradient(rng):
    params = _module_params(rng)
    feats = Tensor(rng.normal(size=(16, 4, 4)), requires_grad=True)
    target = rng.integers(0, 2, size=(1, 4, 4))
    trainable = [feats, params.head_weight, params.head_bias, params.gcn_weight, params.fuse_weight, params.fuse_bias, params.coarse_weight]

    def fn():
        out = mscc_forward(feats, params, MsccConfig(), build_basis(4, 4))
        return (out.features**2).mean() + T.cross_entropy(out.aux_logits.reshape((1, 2, 4, 4)), target)

    picks = sample_picks(trainable, 10, rng)
    err = relative_error(analytic_grad(fn, trainable, picks), numerical_grad(fn, trainable, picks))
    assert err.max() < 1e-4


def test_config_validation():
    MsccConfig().validate()
    for bad in (dict(k=3), dict(gcn_graph="x"), dict(fusion="x"), dict(center_weights="x"), dict(spectral_gain="x")):
        with pytest.raises(ConfigError):
            MsccConfig(**bad).validate()

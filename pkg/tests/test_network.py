import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from msccnet import network as net
from msccnet import tensor as T
from msccnet.exceptions import ConfigError, ContractError, NonFiniteLossError
from msccnet.gradcheck import analytic_grad, numerical_grad, relative_error, sample_picks
from msccnet.tensor import Tensor

TINY = net.NetworkConfig(widths=(4, 6, 8), channels=8, U=2, V=2, M=4)


def test_output_shapes_default_config(rng):
    params = net.init_params(net.NetworkConfig(), 0)
    out = net.forward(net.preprocess(rng.integers(0, 256, (3, 64, 64))), params, net.NetworkConfig())
    assert out.pixel_logits.shape == (2, 64, 64)
    assert out.image_logits.shape == (2,)
    assert out.aux_logits.shape == (2, 8, 8)


def test_duplicated_batch_items_agree(rng):
    params = net.init_params(TINY, 1)
    img = net.preprocess(rng.integers(0, 256, (3, 16, 16)))
    out = net.forward(np.stack([img, img]), params, TINY)
    assert np.array_equal(out.pixel_logits.data[0], out.pixel_logits.data[1])
    assert np.array_equal(out.image_logits.data[0], out.image_logits.data[1])


def test_forward_rejects_bad_shapes(rng):
    params = net.init_params(TINY, 0)
    with pytest.raises(ConfigError):
        net.forward(np.zeros((1, 3, 12, 12)), params, TINY)
    with pytest.raises(ContractError):
        net.forward(np.zeros((1, 4, 16, 16)), params, TINY)


def test_full_network_gradient_small(rng):
    params = net.init_params(TINY, 2)
    x = net.preprocess(rng.integers(0, 256, (1, 3, 8, 8)))
    masks = rng.integers(0, 2, (1, 8, 8))
    names = sorted(params)
    plist = [params[n] for n in names]
    fn = lambda: net.loss(net.forward(x, params, TINY), masks, np.array([1])).total
    picks = sample_picks(plist, 20, rng)
    assert relative_error(analytic_grad(fn, plist, picks), numerical_grad(fn, plist, picks)).max() < 1e-4


def _fake_output(pix, img, aux):
    return net.ForwardOutput(Tensor(pix), Tensor(img), Tensor(aux) if aux is not None else None)


def test_loss_saturated_and_uniform():
    masks = np.zeros((2, 16, 16), dtype=int)
    masks[:, 4:12, 4:12] = 1
    labels = np.array([1, 1])
    onehot = np.stack([1 - masks, masks], axis=1).astype(float)
    big = 50.0 * (2 * onehot - 1)
    aux = big[:, :, 4::8, 4::8]
    terms = net.loss(_fake_output(big, np.array([[-50.0, 50.0]] * 2), aux), masks, labels)
    assert max(terms.cls, terms.seg, terms.mscc) < 1e-3
    flat = net.loss(_fake_output(np.zeros((2, 2, 16, 16)), np.zeros((2, 2)), np.zeros((2, 2, 2, 2))), masks, labels)
    for v in (flat.cls, flat.seg, flat.mscc):
        assert abs(v - math.log(2)) < 1e-9


def test_loss_is_sum_of_oracle_terms(rng):
    pix, img, aux = rng.normal(size=(2, 2, 16, 16)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2, 2, 2))
    masks = rng.integers(0, 2, (2, 16, 16))
    labels = np.array([0, 1])
    terms = net.loss(_fake_output(pix, img, aux), masks, labels)
    expected = (
        oracles.cross_entropy_loop(pix, masks)
        + oracles.cross_entropy_loop(img, labels)
        + oracles.cross_entropy_loop(aux, masks[:, 4::8, 4::8])
    )
    assert abs(terms.total.item() - expected) < 1e-12


def test_loss_rejects_bad_masks():
    out = _fake_output(np.zeros((1, 2, 8, 8)), np.zeros((1, 2)), None)
    with pytest.raises(ContractError):
        net.loss(out, np.full((1, 8, 8), 2), np.array([0]))
    with pytest.raises(ContractError):
        net.loss(out, np.zeros((1, 4, 4)), np.array([0]))


def test_poly_schedule():
    assert net.poly_lr(0, 100) == 0.009
    assert net.poly_lr(100, 100) == 0.0
    assert net.poly_lr(50, 100) == pytest.approx(0.009 * 0.5**0.9)


def test_single_momentum_step_closed_form():
    # f(w) = (w - 3)^2, grad 2(w - 3); two steps with momentum and weight decay
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = net.SGD(momentum=0.9, weight_decay=0.1)
    lr = 0.05
    expected, v = 1.0, 0.0
    for _ in range(2):
        net.SGD.zero_grad({"w": w})
        ((w - 3.0) ** 2).sum().backward()
        opt.step({"w": w}, lr)
        g = 2 * (expected - 3.0) + 0.1 * expected
        v = 0.9 * v + g
        expected -= lr * v
    assert w.data[0] == pytest.approx(expected, abs=1e-15)


def test_ablation_parameter_counts_increase():
    counts = [net.count_params(net.init_params(net.ablation_config(row), 0)) for row in net.ABLATION_ROWS]
    assert all(a < b for a, b in zip(counts, counts[1:]))
    with pytest.raises(ConfigError):
        net.ablation_config("nope")


def test_init_params_seeded():
    a, b = net.init_params(TINY, 3), net.init_params(TINY, 3)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_decode_oracle_and_biased_logits(rng):
    pix = rng.normal(size=(3, 2, 8, 8))
    img = rng.normal(size=(3, 2))
    pred = net.decode(pix, img)
    assert np.array_equal(pred.masks, (pix[:, 1] > pix[:, 0]).astype(np.uint8))
    assert np.array_equal(pred.labels, (img[:, 1] > img[:, 0]).astype(np.uint8))
    assert set(np.unique(pred.masks)) <= {0, 1}
    biased = net.decode(np.stack([np.full((8, 8), 9.0), np.zeros((8, 8))])[None], np.array([[9.0, 0.0]]))
    assert not biased.masks.any() and biased.labels[0] == 0


def test_predict_matches_forward_argmax(rng):
    params = net.init_params(TINY, 0)
    images = rng.integers(0, 256, (2, 3, 16, 16))
    pred = net.predict(images, params, TINY)
    out = net.forward(net.preprocess(images), params, TINY)
    assert np.array_equal(pred.masks, out.pixel_logits.data.argmax(axis=1))


def test_fit_is_deterministic_and_decreases_loss(rng):
    images = rng.integers(0, 256, (8, 3, 16, 16))
    masks = np.zeros((8, 16, 16), dtype=int)
    masks[4:, 4:12, 4:12] = 1
    labels = np.array([0] * 4 + [1] * 4)
    cfg = net.TrainConfig(total_iters=15, batch_size=4, input_size=16, base_lr=0.02)
    _, t1 = net.fit(images, masks, labels, TINY, cfg)
    _, t2 = net.fit(images, masks, labels, TINY, cfg)
    assert [m.loss for m in t1] == [m.loss for m in t2]
    assert np.mean([m.loss for m in t1[-5:]]) < np.mean([m.loss for m in t1[:5]])


def test_train_step_reports_non_finite_loss(rng):
    cfg = net.ablation_config("baseline", TINY)
    params = net.init_params(cfg, 0)
    params["seg.weight"].data[:] = np.inf
    batch = (net.preprocess(rng.integers(0, 256, (2, 3, 16, 16))), np.zeros((2, 16, 16), int), np.array([0, 0]))
    with pytest.raises(NonFiniteLossError, match="seg"), np.errstate(all="ignore"):
        net.train_step(batch, params, net.SGD(), 0, cfg, net.TrainConfig(total_iters=1, input_size=16))


def test_config_validation():
    with pytest.raises(ConfigError):
        net.NetworkConfig(use_mscc=False, use_mscc_loss=True).validate()
    with pytest.raises(ConfigError):
        net.TrainConfig(input_size=60).validate()
    with pytest.raises(ConfigError):
        replace(net.NetworkConfig(), channels=48).validate()


def test_preprocess_standardizes(rng):
    x = net.preprocess(rng.integers(0, 256, (2, 3, 16, 16)))
    assert np.allclose(x.mean(axis=(2, 3)), 0, atol=1e-12)
    assert np.allclose(x.std(axis=(2, 3)), 1, atol=1e-2)
    assert np.all(np.isfinite(net.preprocess(np.full((3, 8, 8), 7))))


def test_softmax_guard_in_network():
    with pytest.raises(ContractError):
        T.softmax(np.array([np.inf, 0.0]))

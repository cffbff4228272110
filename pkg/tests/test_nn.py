import math

import numpy as np
import pytest
from helpers import drawn_deu_network, max_partial, network_grad_errors

from deu.kernel import DeuBank, DeuParams, KernelConfig, eval_batch
from deu.nn import (Activation, BatchNorm, DenseLayer, Network, ShapeError, StaleCacheError, backward,
                    batchnorm_backward, batchnorm_forward, forward, init_network, predict,
                    softmax_cross_entropy)
from deu.optim import Adam, OptimizerConfig

CFG = KernelConfig()


def deu_layer(W, params, bn=None):
    bank = DeuBank.from_params(params, CFG)
    return DenseLayer(np.asarray(W, float), np.zeros(len(params)), bn, Activation("deu", deu=bank))


def linear(W):
    W = np.asarray(W, float)
    return DenseLayer(W, np.zeros(W.shape[0]))


def blobs(n=64, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, 2)) * 0.4 + np.where(y[:, None] == 1, 1.5, -1.5)
    return x, y


# --- forward ----------------------------------------------------------------

def test_identity_relu_neurons():
    net = Network([deu_layer(np.eye(2), [DeuParams(0, 1, 0)] * 2), linear(np.eye(2))])
    logits, _ = forward(net, np.array([[3.0, -2.0]]))
    assert logits.tolist() == [[3.0, 0.0]]


def test_zero_weights_give_value_at_origin():
    p = DeuParams(1.0, 3.0, 2.0, c1=0.5, c2=-0.25)
    net = Network([deu_layer(np.zeros((1, 3)), [p]), linear([[1.0]])])
    logits, _ = forward(net, np.ones((2, 3)))
    expected = eval_batch(DeuBank.from_params([p], CFG), np.zeros((1, 1)), CFG).y[0, 0]
    assert np.all(logits == expected)
    # r1 = -1, r2 = -2: f1(0) + ... = c1 + c2
    assert expected == pytest.approx(0.25, abs=1e-15)


def test_logit_shape_and_input_check():
    net = init_network([5, 7, 10], "deu", seed=0)
    logits, _ = forward(net, np.zeros((4, 5)), "infer")
    assert logits.shape == (4, 10)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((4, 6)))
    with pytest.raises(ValueError):
        forward(net, np.zeros((4, 5)), "eval")


# --- softmax cross-entropy ---------------------------------------------------

def test_uniform_logits_loss_is_log_k():
    loss, grad = softmax_cross_entropy(np.zeros((3, 10)), [0, 4, 9])
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_saturated_logits_are_stable():
    logits = np.array([[1000.0, 0.0, -1000.0]])
    loss, grad = softmax_cross_entropy(logits, [0])
    assert loss < 1e-6 and np.all(np.isfinite(grad))


def test_label_errors():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ShapeError):
        softmax_cross_entropy(np.zeros((2, 3)), [0])


# --- batch norm -------------------------------------------------------------

def test_batchnorm_normalizes_in_train_mode():
    bn = BatchNorm.create(3)
    z = np.random.default_rng(0).normal(2.0, 3.0, size=(50, 3))
    out, _ = batchnorm_forward(bn, z, train=True)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-5)
    np.testing.assert_allclose(bn.running_mean, 0.1 * z.mean(axis=0))


def test_batchnorm_backward_matches_fd():
    rng = np.random.default_rng(1)
    bn = BatchNorm.create(3)
    bn.gamma[:] = rng.normal(size=3)
    bn.beta[:] = rng.normal(size=3)
    z = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))

    def f(zz):
        fresh = BatchNorm(bn.gamma, bn.beta, np.zeros(3), np.ones(3))
        return float((batchnorm_forward(fresh, zz, True)[0] * w).sum())

    _, cache = batchnorm_forward(bn, z, True)
    dz, _, _ = batchnorm_backward(bn, w, cache)
    h = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd = (f(zp) - f(zm)) / (2 * h)
        assert abs(dz[idx] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_batchnorm_needs_two_samples_to_train():
    net = init_network([2, 4, 2], "relu", seed=0)
    with pytest.raises(ValueError):
        forward(net, np.zeros((1, 2)), "train")
    forward(net, np.zeros((1, 2)), "infer")


def test_train_and_infer_agree_once_statistics_settle():
    net = init_network([2, 16, 2], "deu", seed=3)
    x = np.random.default_rng(0).normal(size=(5000, 2))
    for _ in range(80):
        train_out, _ = forward(net, x, "train")
    infer_out, _ = forward(net, x, "infer")
    assert np.max(np.abs(train_out - infer_out)) < 1e-2


# --- backward ---------------------------------------------------------------

@pytest.mark.parametrize("kind", ["deu", "relu", "prelu", "swish"])
@pytest.mark.parametrize("arch", [[2, 8, 2], [2, 8, 8, 2]])
def test_backward_matches_finite_differences(kind, arch):
    net = init_network(arch, kind, seed=7)
    x, y = blobs(16, seed=2)
    errors = network_grad_errors(net, x, y)
    assert max(errors.values()) < 1e-4, errors


@pytest.mark.parametrize("seed", [1, 2])
def test_backward_matches_fd_in_every_subspace(seed):
    net = drawn_deu_network([2, 8, 8, 2], seed=seed)
    cells = {str(b.subspace(i)) for b in net.deu_banks() for i in range(len(b))}
    assert len(cells) == 10
    x = np.random.default_rng(seed).normal(size=(8, 2))
    assert max_partial(net, x) < CFG.output_clamp
    errors = network_grad_errors(net, x, np.arange(8) % 2)
    assert max(errors.values()) < 1e-4, errors


def test_partials_are_clamped_like_outputs():
    # f2 = exp(-t b / a) is about 4e6 here; the reported partial stops at the clamp
    net = Network([deu_layer([[1.0]], [DeuParams(0.135, 0.96, 0.62)]), linear([[1.0]])])
    assert max_partial(net, np.array([[-2.4], [1.0]])) == CFG.output_clamp


def test_deu_gradient_for_c1_is_first_basis_function():
    p = DeuParams(1.0, 3.0, 2.0)
    net = Network([deu_layer([[1.0]], [p]), linear([[1.0]])])
    x = np.array([[0.7], [-0.4]])
    logits, cache = forward(net, x, "train")
    grads = backward(net, cache, np.ones_like(logits))
    # f1 = exp(r1 t) with r1 = -1
    assert grads["0.deu.c1"][0] == pytest.approx(math.exp(-0.7) + math.exp(0.4), rel=1e-14)


def test_frozen_mass_has_zero_gradient():
    net = Network([deu_layer(np.eye(2), [DeuParams(1e-5, 1, 1), DeuParams(1, 1, 1)]),
                   linear(np.eye(2))])
    assert net.layers[0].activation.deu.frozen[0].tolist() == [True, False]
    logits, cache = forward(net, np.array([[0.5, 1.0], [1.5, 2.0]]), "train")
    grads = backward(net, cache, np.ones_like(logits))
    assert grads["0.deu.a"][0] == 0.0 and grads["0.deu.a"][1] != 0.0


def test_backward_rejects_stale_or_infer_caches():
    net = init_network([2, 4, 2], "deu", seed=0)
    x, y = blobs(8)
    logits, cache = forward(net, x, "infer")
    with pytest.raises(StaleCacheError):
        backward(net, cache, np.zeros_like(logits))
    logits, cache = forward(net, x, "train")
    _, d = softmax_cross_entropy(logits, y)
    Adam().step(net, backward(net, cache, d))
    with pytest.raises(StaleCacheError):
        backward(net, cache, d)


# --- predict / init -----------------------------------------------------------

def test_predict_breaks_ties_toward_first_class():
    net = Network([deu_layer(np.eye(2), [DeuParams(0, 1, 0)] * 2), linear(np.zeros((3, 2)))])
    assert predict(net, np.ones((4, 2))).tolist() == [0, 0, 0, 0]


def test_init_is_deterministic_and_in_range():
    a = init_network([4, 6, 3], "deu", seed=11)
    b = init_network([4, 6, 3], "deu", seed=11)
    for (k, (pa, _, _)), (_, (pb, _, _)) in zip(a.parameters().items(), b.parameters().items()):
        assert np.array_equal(pa, pb), k
    bank = a.layers[0].activation.deu
    for coef in (bank.a, bank.b, bank.c):
        assert np.all((coef >= CFG.epsilon) & (coef <= 1.0))
    assert np.all(bank.c1 == 0) and np.all(bank.c2 == 0)
    assert np.all(np.abs(a.layers[0].W) <= math.sqrt(6 / 4))
    assert a.layers[-1].batch_norm is None and a.layers[-1].activation is None


def test_parameter_count_difference_is_five_per_deu_neuron():
    deu = init_network([2, 32, 32, 2], "deu", seed=0)
    relu = init_network([2, 32, 32, 2], "relu", seed=0)
    assert deu.num_parameters() - relu.num_parameters() == 5 * 64


@pytest.mark.parametrize("kind", ["deu", "relu", "prelu", "swish"])
def test_learns_separable_data(kind):
    net = init_network([2, 8, 2], kind, seed=0)
    x, y = blobs(200, seed=1)
    opt = Adam(OptimizerConfig(lr_weights=1e-2))
    for _ in range(200):
        logits, cache = forward(net, x, "train")
        _, d = softmax_cross_entropy(logits, y)
        opt.step(net, backward(net, cache, d))
    assert np.mean(predict(net, x) == y) >= 0.99


def test_relu_configured_deu_network_matches_relu_exactly():
    relu = init_network([3, 5, 4, 2], "relu", seed=4, batch_norm=False)
    deu = init_network([3, 5, 4, 2], "deu", seed=4, batch_norm=False)
    for ld, lr in zip(deu.layers, relu.layers):
        ld.W[...] = lr.W
        ld.bias[...] = lr.bias
        if ld.activation is not None:
            w = ld.width
            ld.activation.deu = DeuBank.from_params([DeuParams(0, 1, 0)] * w, CFG)
    x = np.random.default_rng(0).normal(size=(100, 3))
    assert np.array_equal(forward(deu, x)[0], forward(relu, x)[0])

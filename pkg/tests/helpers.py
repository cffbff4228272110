"""Shared test utilities: network gradient checks and projection monitoring."""

import numpy as np

from deu.kernel import DeuBank, DeuParams
from deu.nn import backward, forward, init_network, softmax_cross_entropy
from deu.verify import sample_draws


def loss_at(net, x, y):
    logits, _ = forward(net, x, "train")
    return softmax_cross_entropy(logits, y)[0]


def network_grad_errors(net, x, y, step=1e-5):
    """Per-parameter ``|analytic - fd| / max(1, |analytic|)``, worst entry.

    Frozen DEU entries are skipped; their analytic gradient is zero by
    contract and perturbing them would leave the subspace.
    """
    logits, cache = forward(net, x, "train")
    _, dlogits = softmax_cross_entropy(logits, y)
    grads = backward(net, cache, dlogits)
    worst = {}
    for name, (arr, _, mask) in net.parameters().items():
        err = 0.0
        for idx in np.ndindex(arr.shape):
            if mask is not None and mask[idx]:
                continue
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_at(net, x, y)
            arr[idx] = orig - step
            down = loss_at(net, x, y)
            arr[idx] = orig
            fd = (up - down) / (2 * step)
            an = grads[name][idx]
            err = max(err, abs(an - fd) / max(1.0, abs(an)))
        worst[name] = err
    return worst


def drawn_deu_network(arch, seed=0):
    """DEU network whose hidden neurons take coefficients from the verification sampler.

    The sampler cycles through every subspace cell and rejects coefficients
    that would engage the exponent or output clamp on [-3, 3]. Clamped
    partials are not derivatives, so a finite-difference check is only
    meaningful away from them.
    """
    net = init_network(arch, "deu", seed)
    hidden = [l for l in net.layers if l.activation is not None]
    draws = sample_draws(sum(l.width for l in hidden), seed=seed, cfg=net.cfg)
    start = 0
    for layer in hidden:
        params = [DeuParams(*(float(getattr(draws, f)[i]) for f in ("a", "b", "c", "c1", "c2")))
                  for i in range(start, start + layer.width)]
        layer.activation.deu = DeuBank.from_params(params, net.cfg)
        start += layer.width
    return net


def max_partial(net, x):
    """Largest |y| or |partial| any DEU layer reports on a train-mode pass over ``x``."""
    _, cache = forward(net, x, "train")
    out = 0.0
    for grid in cache.evals:
        if grid is None:
            continue
        for name in ("y", "dy_dt", "dy_da", "dy_db", "dy_dc", "dy_dc1", "dy_dc2"):
            out = max(out, float(np.abs(getattr(grid, name)).max()))
    return out


class ProjectionMonitor:
    """``on_step`` hook asserting the projection rules after every optimizer step.

    No unfrozen coefficient may sit in (0, eps), no neuron may have
    a = b = c = 0, and a frozen coefficient must stay frozen at exactly 0.
    """

    def __init__(self, eps):
        self.eps = eps
        self.frozen = None
        self.steps = 0
        self.ever_frozen = 0

    def __call__(self, net, step):
        banks = net.deu_banks()
        frozen = [b.frozen.copy() for b in banks]
        for i, bank in enumerate(banks):
            coef = np.stack([bank.a, bank.b, bank.c])
            mag = np.abs(coef)
            inside = (mag > 0) & (mag < self.eps) & ~bank.frozen
            assert not inside.any(), f"step {step}: unfrozen coefficient inside (0, eps)"
            assert not np.all(coef == 0, axis=0).any(), f"step {step}: neuron with a = b = c = 0"
            assert np.all(coef[bank.frozen] == 0.0), f"step {step}: frozen coefficient is nonzero"
            if self.frozen is not None:
                lost = self.frozen[i] & ~bank.frozen
                assert not lost.any(), f"step {step}: a frozen coefficient was unfrozen"
        self.frozen = frozen
        self.ever_frozen = sum(int(f.sum()) for f in frozen)
        self.steps = step

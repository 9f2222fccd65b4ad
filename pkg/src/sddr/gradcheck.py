"""Finite-difference gradient suite for every composite training loss."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import (
    EXEMPLAR,
    REAL,
    SDDR_MODES,
    SYNTHETIC,
    LucirParams,
    finetune_loss,
    icarl_loss,
    lucir_loss,
    mode_masks,
)
from .nn import Network, finite_diff_check


@dataclass
class GradcheckResult:
    name: str
    trials: int
    max_rel_error: float
    seconds: float

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


class _Quadratic:
    def __init__(self, theta):
        self.theta = theta

    def parameters(self):
        return {"theta": self.theta}


def quadratic_check(theta, h: float = 1e-6) -> float:
    """Checker on ``|theta|^2 / 2`` whose exact gradient is ``theta``."""
    q = _Quadratic(np.array(theta, dtype=np.float64))

    def loss_fn(m, _):
        return 0.5 * float(m.theta @ m.theta), {"theta": m.theta.copy()}

    return finite_diff_check(q, loss_fn, None, h)


def _random_batch(rng, in_dim, n_classes, old, batch_size):
    X = rng.normal(size=(batch_size, in_dim))
    y = rng.permutation(np.arange(batch_size) % n_classes)
    origin = rng.choice([REAL, EXEMPLAR, SYNTHETIC], size=batch_size)
    # exemplars exist only for old classes; synthetic may carry any seen class
    origin[(y >= old) & (origin == EXEMPLAR)] = REAL
    return X, y, origin


def _trial_net(rng, dims, n_classes, head):
    net = Network.build(dims[0], dims[1:], n_classes, head=head, seed=int(rng.integers(2**31)))
    # nonzero biases keep pre-activations off the relu kink
    for layer in net.layers:
        layer.bias[:] = rng.uniform(-0.1, 0.1, size=layer.bias.shape)
    if head == "linear":
        net.head.bias[:] = rng.uniform(-0.1, 0.1, size=net.head.bias.shape)
    return net


def trial_cases(
    trials: int = 100,
    seed: int = 0,
    dims: tuple[int, ...] = (4, 6, 5),
    old: int = 3,
    new: int = 2,
    batch_size: int = 10,
):
    """Yield ``(loss_name, net, loss_fn)`` for each loss of each trial.

    Each trial draws a batch mixing real / exemplar / synthetic origins, an
    ablation mode whose masks select the contributing samples, fresh networks
    and a frozen previous-step network with ``old`` classes.
    """
    rng = np.random.default_rng(seed)
    n_classes = old + new
    for _ in range(trials):
        X, y, origin = _random_batch(rng, dims[0], n_classes, old, batch_size)
        mode = SDDR_MODES[int(rng.integers(len(SDDR_MODES)))]
        cls, dist, margin = mode_masks(mode, origin, 1)

        def ft_loss(n, _, X=X, y=y, cls=cls):
            f = n.forward(X)
            lb = finetune_loss(f.logits, y, cls)
            return lb.total, n.backward(f, lb.grad_logits)

        yield "finetune", _trial_net(rng, dims, n_classes, "linear"), ft_loss

        net = _trial_net(rng, dims, n_classes, "linear")
        old_logits = _trial_net(rng, dims, old, "linear").forward(X).logits

        def ic_loss(n, _, X=X, y=y, cls=cls, dist=dist, old_logits=old_logits):
            f = n.forward(X)
            lb = icarl_loss(f.logits, old_logits, y, old, cls, dist)
            return lb.total, n.backward(f, lb.grad_logits)

        yield "icarl", net, ic_loss

        net = _trial_net(rng, dims, n_classes, "cosine")
        old_features = _trial_net(rng, dims, old, "cosine").forward(X).features
        params = LucirParams()

        def lu_loss(n, _, X=X, y=y, cls=cls, dist=dist, margin=margin, old_features=old_features):
            f = n.forward(X)
            lb = lucir_loss(
                f.features, old_features, f.cos, n.head.eta[0], y, cls, dist, margin, old, params
            )
            return lb.total, n.backward(f, lb.grad_logits, lb.grad_cos, lb.grad_features)

        yield "lucir", net, lu_loss


def gradient_pairs(net, loss_fn, h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Flattened analytic and central-difference gradients over all parameters."""
    _, grads = loss_fn(net, None)
    analytic, numeric = [], []
    for name, p in net.parameters().items():
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn(net, None)[0]
            flat[i] = orig - h
            lm = loss_fn(net, None)[0]
            flat[i] = orig
            numeric.append((lp - lm) / (2 * h))
        analytic.extend(np.asarray(grads[name]).reshape(-1).tolist())
    return np.array(analytic), np.array(numeric)


def run_suite(
    trials: int = 100,
    seed: int = 0,
    h: float = 1e-6,
    dims: tuple[int, ...] = (4, 6, 5),
    old: int = 3,
    new: int = 2,
    batch_size: int = 10,
) -> list[GradcheckResult]:
    """Max relative error per loss over ``trials`` randomised trials."""
    worst = {"finetune": 0.0, "icarl": 0.0, "lucir": 0.0}
    spent = dict.fromkeys(worst, 0.0)
    for name, net, loss_fn in trial_cases(trials, seed, dims, old, new, batch_size):
        t0 = time.perf_counter()
        worst[name] = max(worst[name], finite_diff_check(net, loss_fn, None, h))
        spent[name] += time.perf_counter() - t0
    return [GradcheckResult(name, trials, worst[name], spent[name]) for name in worst]

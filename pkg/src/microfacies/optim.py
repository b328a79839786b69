"""Loss, learning-rate schedule, SGD/RMSprop/Adam updates and gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, StateError
from .layers import log_softmax, softmax
from .network import Network, network_backward, network_forward
from .tensor import SeededRng, get_precision


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return max(loss, 0.0), grad


@dataclass(frozen=True)
class LrSchedule:
    """Staircase exponential decay; ``decay_step=None`` keeps the rate constant."""

    start_lr: float
    decay_step: int | None = None
    decay_rate: float = 1.0

    def __post_init__(self):
        if not self.start_lr > 0:
            raise ValueError(f"start_lr must be positive, got {self.start_lr}")
        if self.decay_step is not None and self.decay_step < 1:
            raise ValueError(f"decay_step must be a positive integer, got {self.decay_step}")
        if not 0 < self.decay_rate <= 1:
            raise ValueError(f"decay_rate must be in (0, 1], got {self.decay_rate}")


def lr_at(sched: LrSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if sched.decay_step is None:
        return sched.start_lr
    return sched.start_lr * sched.decay_rate ** (iteration // sched.decay_step)


OPTIMIZERS = ("sgd", "rmsprop", "adam")
DEFAULTS = {
    "sgd": {"momentum": 0.0},
    "rmsprop": {"decay": 0.9, "eps": 1e-10},
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
}


@dataclass
class OptimizerState:
    variant: str
    hyper: dict = field(default_factory=dict)
    step: int = 0
    moments: dict = field(default_factory=dict)  # "m/<param>", "v/<param>"

    def __post_init__(self):
        self.variant = {"rmsp": "rmsprop"}.get(self.variant.lower(), self.variant.lower())
        if self.variant not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.variant!r}; expected one of {OPTIMIZERS}")
        self.hyper = {**DEFAULTS[self.variant], **self.hyper}


def optimizer_step(params, grads, state: OptimizerState, lr, frozen=()):
    """Update ``params`` in place from ``grads`` and advance ``state``."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    missing = [n for n in grads if n not in params]
    if missing:
        raise StateError(f"gradients for unknown parameters: {missing[:5]}")
    state.step += 1
    t = state.step
    h = state.hyper
    for name, g in grads.items():
        if name in frozen:
            continue
        p = params[name]
        if g.shape != p.shape:
            raise StateError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if state.variant == "sgd":
            if h["momentum"]:
                v = state.moments.setdefault(f"v/{name}", np.zeros_like(p))
                v *= h["momentum"]
                v += g
                p -= lr * v
            else:
                p -= lr * g
        elif state.variant == "rmsprop":
            ms = state.moments.setdefault(f"v/{name}", np.zeros_like(p))
            ms *= h["decay"]
            ms += (1 - h["decay"]) * g * g
            p -= lr * g / np.sqrt(ms + h["eps"])
        else:
            m = state.moments.setdefault(f"m/{name}", np.zeros_like(p))
            v = state.moments.setdefault(f"v/{name}", np.zeros_like(p))
            m *= h["beta1"]
            m += (1 - h["beta1"]) * g
            v *= h["beta2"]
            v += (1 - h["beta2"]) * g * g
            m_hat = m / (1 - h["beta1"] ** t)
            v_hat = v / (1 - h["beta2"] ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + h["eps"])
    return params, state


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str | None
    checked: int
    refined: int = 0  # elements re-estimated with a smaller step


def relative_error(a, b, floor=1e-6):
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps gradients that are
    zero up to rounding (fp64 difference quotients carry ~1e-11 noise) from
    reporting huge relative errors."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def jitter_parameters(net: Network, scale=0.1, seed=0):
    """Add small noise to biases and batch-norm shifts.

    Freshly initialized networks have exactly-zero biases, which at tiny widths
    puts some ReLU inputs exactly on the kink; checking there is meaningless.
    """
    for name, p in net.params.items():
        if name.endswith(("bias", "beta")):
            p += np.asarray(SeededRng(seed, "jitter", name).normal(p.shape, 0.0, scale), dtype=p.dtype)
    return net


def gradient_check(net: Network, x, labels, epsilon=1e-5, max_per_param=None, seed=0,
                   mode="train", tol=1e-6) -> GradCheckResult:
    """Compare backprop gradients with central differences of the mean CE loss.

    Every element of every trainable parameter is perturbed unless
    ``max_per_param`` limits it to a seeded random sample per tensor.  Dropout
    masks are replayed identically for every evaluation.  An element whose
    estimate disagrees by more than ``tol`` is re-estimated with steps 10x and
    100x larger (suppress roundoff on gradients that are exactly zero, which
    batch norm over near-constant channels amplifies) and 10x and 100x
    smaller (move a ReLU/max-pool kink out of the stencil).  A wrong
    gradient disagrees at every step.
    """
    if get_precision() != "fp64" or net.dtype != np.float64:
        raise PreconditionError("gradient_check requires fp64 mode and a float64 network")
    saved = {k: v.copy() for k, v in net.buffers.items()}

    def loss_at(want_grads=False):
        logits, cache = network_forward(net, x, mode, SeededRng(seed, "gradcheck"), keep_cache=want_grads)
        loss, grad = cross_entropy_loss(logits, labels)
        if want_grads:
            return loss, network_backward(net, cache, grad)
        return loss

    def central(flat, i, eps):
        orig = flat[i]
        flat[i] = orig + eps
        lp = loss_at()
        flat[i] = orig - eps
        lm = loss_at()
        flat[i] = orig
        return (lp - lm) / (2 * eps)

    try:
        _, analytic = loss_at(want_grads=True)
        worst, worst_name, checked, refined = 0.0, None, 0, 0
        pick = SeededRng(seed, "gradcheck-sample")
        for name, g in analytic.items():
            flat = net.params[name].reshape(-1)
            gflat = g.reshape(-1)
            idx = np.arange(flat.size)
            if max_per_param is not None and flat.size > max_per_param:
                idx = np.sort(pick.generator.choice(flat.size, max_per_param, replace=False))
            for i in idx:
                err = float(relative_error(gflat[i], central(flat, i, epsilon)))
                for step in (epsilon * 10, epsilon * 100, epsilon / 10, epsilon / 100):
                    if err <= tol:
                        break
                    err = min(err, float(relative_error(gflat[i], central(flat, i, step))))
                    refined += 1
                if err > worst:
                    worst, worst_name = err, name
            checked += idx.size
        return GradCheckResult(worst, worst_name, checked, refined)
    finally:
        for k, v in saved.items():
            net.buffers[k][...] = v


def numeric_gradient(f, x, epsilon=1e-6):
    """Central-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = f()
        flat[i] = orig - epsilon
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * epsilon)
    return grad


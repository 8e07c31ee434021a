"""Loss, regularizer, and the two parameter-update rules used for training.

Adam follows the standard bias-corrected form with defaults alpha=1e-4,
beta1=0.9, beta2=0.999, eps=1e-8. The l2 penalty enters through the gradient
(it is added by the backward pass), not as a decoupled decay: the decay/l2
equivalence holds only for plain SGD, and `sgd_weight_decay_step` implements
that multiplicative-decay form for completeness.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def mse_loss(predictions, targets):
    """Mean squared error over two equal-length nonempty series."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise DataError("mse_loss: empty series")
    if p.size != t.size:
        raise DataError(f"mse_loss: length mismatch {p.size} vs {t.size}")
    d = p - t
    return float(d @ d / p.size)


def l2_penalty(params, lam):
    """(lam/2) * sum of squares over every learnable entry.

    `params` is anything exposing `.arrays()` (NetworkParams), or a plain
    iterable of numpy arrays.
    """
    if lam < 0:
        raise DataError(f"l2 coefficient must be >= 0, got {lam}")
    arrays = params.arrays() if hasattr(params, "arrays") else ((None, a) for a in params)
    total = 0.0
    for _, a in arrays:
        a = np.asarray(a, dtype=np.float64)
        total += float(a.ravel() @ a.ravel())
    return 0.5 * lam * total


@dataclass
class AdamState:
    """Per-run optimizer state; owned by exactly one training loop."""

    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyperparams(self):
        return {"alpha": self.alpha, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state, params, grads):
    """One in-place Adam update on `params` given matching `grads`.

    Both arguments expose `.arrays()` yielding (name, array) in the same
    fixed order; moment accumulators are kept per name in `state`.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for (name, w), (gname, g) in zip(params.arrays(), grads.arrays()):
        if w.shape != g.shape or name != gname:
            raise DataError(f"adam_step: mismatched parameter/gradient entry {name}/{gname}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        w -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def sgd_weight_decay_step(params, grads, alpha, lam):
    """In-place w <- w - lam*w - alpha*g (multiplicative weight decay)."""
    if alpha <= 0:
        raise DataError(f"learning rate must be > 0, got {alpha}")
    if not 0 <= lam < 1:
        raise DataError(f"decay factor must be in [0, 1), got {lam}")
    for (name, w), (gname, g) in zip(params.arrays(), grads.arrays()):
        if w.shape != g.shape:
            raise DataError(f"sgd step: shape mismatch for {name}")
        w -= lam * w + alpha * g
    return params


def clip_gradients(grads, max_norm):
    """Scale all gradient arrays so their joint l2 norm is at most max_norm.

    Off by default in training; provided as an opt-in for user datasets.
    Returns the (possibly rescaled) grads and the pre-clip norm.
    """
    sq = 0.0
    for _, g in grads.arrays():
        sq += float(g.ravel() @ g.ravel())
    norm = sq ** 0.5
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for _, g in grads.arrays():
            g *= scale
    return grads, norm

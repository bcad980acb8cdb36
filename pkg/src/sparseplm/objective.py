"""Objective pieces: LAD risk, bounded penalties, zero-norm count, surrogates.

Three composites are exposed.  The relaxed objective adds a smoothed
cardinality surrogate to the LAD risk and penalty; the exact objective is
LAD risk plus penalty restricted to the cardinality-constrained set; the
zero-norm objective replaces the surrogate with an exact per-layer nonzero
count (the limit object the surrogates approach as sigma drops to 0).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleError
from .network import _jacobian_batch, _layers, forward_batch, _forward_cache

CAP_SLACK = 1e-9

PENALTY_KINDS = ("jacobian_clip", "l1_clip", "zero")


@dataclass(frozen=True)
class PenaltySpec:
    """Bounded regularizer: kind, cap, and multiplier.

    The evaluated value always stays strictly below `cap` (a factor 1 - 1e-9
    keeps the bound strict when the raw value saturates).
    """

    kind: str = "zero"
    cap: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigError("unknown penalty kind %r (choose from %s)"
                              % (self.kind, ", ".join(PENALTY_KINDS)))
        if not self.cap > 0:
            raise ConfigError("penalty cap must be positive")
        if self.lam < 0:
            raise ConfigError("penalty weight must be nonnegative")

    @property
    def effective_cap(self):
        return self.cap * (1.0 - CAP_SLACK)

    def to_dict(self):
        return {"kind": self.kind, "cap": self.cap, "lam": self.lam}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class SurrogateSpec:
    """Smoothed cardinality surrogate f(y) = 1 - exp(-y) at scale sigma.

    Per layer k the term is layer_weights[k] * sum over entries of
    f(|w| / sigma).  Weights may be zero to switch a layer off.
    """

    sigma: float
    layer_weights: tuple
    family: str = "exp"

    def __post_init__(self):
        object.__setattr__(self, "layer_weights",
                           tuple(float(g) for g in self.layer_weights))
        if self.family != "exp":
            raise ConfigError("unknown surrogate family %r" % (self.family,))
        if not self.sigma > 0:
            raise ConfigError("surrogate scale must be positive")
        if any(g < 0 for g in self.layer_weights):
            raise ConfigError("layer weights must be nonnegative")

    def with_sigma(self, sigma):
        return SurrogateSpec(sigma, self.layer_weights, self.family)


def default_layer_weights(arch, gamma0):
    """Uniform per-layer weights gamma0 / (total entry count)."""
    if not gamma0 >= 0:
        raise ConfigError("gamma0 must be nonnegative")
    g = gamma0 / arch.param_count
    return tuple(g for _ in range(arch.depth))


def lad_risk(theta, data):
    """Mean absolute residual of (beta, W) on the data."""
    Y = np.asarray(data.Y, dtype=float)
    if Y.size == 0:
        raise ValueError("empty data")
    r = Y - data.X @ theta.beta - forward_batch(theta.weights, data.Z)
    return float(np.mean(np.abs(r)))


def l0_count(weights):
    """Exact number of nonzero entries across all layers (bit-exact zero test)."""
    return int(sum(np.count_nonzero(W) for W in weights.layers))


def _l1_raw(theta):
    return float(np.sum(np.abs(theta.beta))
                 + sum(np.sum(np.abs(W)) for W in theta.weights.layers))


def _jacobian_raw(weights, Z):
    J = _jacobian_batch(_layers(weights), np.asarray(Z, dtype=float))
    return float(np.mean(np.sum(np.abs(J), axis=1)))


def penalty_value(spec, theta, data):
    """Evaluated penalty, always in [0, cap)."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "l1_clip":
        raw = _l1_raw(theta)
    else:
        raw = _jacobian_raw(theta.weights, data.Z)
    return min(spec.effective_cap, raw)


def _zero_like(theta):
    return (np.zeros_like(theta.beta),
            [np.zeros_like(W) for W in theta.weights.layers])


def _jacobian_l1_grad(layers, Z):
    """Gradient of mean_i ||dg/dz(z_i)||_1 in the weights, masks held fixed.

    With the active-unit masks frozen (a valid Clarke selection away from
    kinks), the map from any one non-bias block to the Jacobian is linear, so
    the chain rule reduces to two mask-gated sweeps: an adjoint sweep from the
    output (u) and a forward sweep carrying sign(J) from the input (w).  Bias
    columns do not enter the Jacobian and get zero gradient.
    """
    n = Z.shape[0]
    L = len(layers)
    _, pres, _ = _forward_cache(layers, Z)
    masks = [(h >= 0.0).astype(float) for h in pres]

    us = [None] * L
    us[L - 1] = np.ones((n, 1))
    for j in range(L - 2, -1, -1):
        us[j] = (us[j + 1] @ layers[j + 1][:, :-1]) * masks[j]

    v = np.sign(us[0] @ layers[0][:, :-1])
    grads = []
    w = v
    for j in range(L):
        if j > 0:
            w = (w @ layers[j - 1][:, :-1].T) * masks[j - 1]
        G = np.zeros_like(layers[j])
        G[:, :-1] = (us[j].T @ w) / n
        grads.append(G)
    return grads


def penalty_subgradient(spec, theta, data):
    """A subgradient selection consistent with penalty_value.

    Saturated cap means the penalty is locally constant, so the selection is
    zero there; below the cap the unclipped branch is differentiated, with
    sign(0) = 0 as the absolute-value selection.
    """
    beta_g, weight_g = _zero_like(theta)
    if spec.kind == "zero":
        return beta_g, weight_g
    if spec.kind == "l1_clip":
        if _l1_raw(theta) >= spec.effective_cap:
            return beta_g, weight_g
        return np.sign(theta.beta), [np.sign(W) for W in theta.weights.layers]
    Z = np.asarray(data.Z, dtype=float)
    if _jacobian_raw(theta.weights, Z) >= spec.effective_cap:
        return beta_g, weight_g
    return beta_g, _jacobian_l1_grad(_layers(theta.weights), Z)


def surrogate_value(spec, weights):
    """Sum over layers of layer weight times smoothed nonzero count."""
    total = 0.0
    if len(spec.layer_weights) != weights.depth:
        raise ConfigError("surrogate has %d layer weights, stack has depth %d"
                          % (len(spec.layer_weights), weights.depth))
    for g, W in zip(spec.layer_weights, weights.layers):
        total += g * float(np.sum(-np.expm1(-np.abs(W) / spec.sigma)))
    return total


def surrogate_subgradient(spec, weights):
    """Entrywise derivative of the surrogate; the selection at 0 is 0."""
    if len(spec.layer_weights) != weights.depth:
        raise ConfigError("surrogate has %d layer weights, stack has depth %d"
                          % (len(spec.layer_weights), weights.depth))
    out = []
    for g, W in zip(spec.layer_weights, weights.layers):
        out.append((g / spec.sigma) * np.exp(-np.abs(W) / spec.sigma) * np.sign(W))
    return out


def relaxed_objective(theta, data, penalty, surrogate):
    """LAD risk + surrogate + weighted penalty on the box-feasible set."""
    if not theta.box_feasible():
        raise InfeasibleError("parameters outside the box feasible set")
    return (lad_risk(theta, data)
            + surrogate_value(surrogate, theta.weights)
            + penalty.lam * penalty_value(penalty, theta, data))


def exact_objective(theta, data, penalty, sparsity):
    """LAD risk + weighted penalty on the cardinality-constrained set."""
    if not theta.box_feasible():
        raise InfeasibleError("parameters outside the box feasible set")
    nnz = l0_count(theta.weights)
    if nnz > sparsity:
        raise InfeasibleError("weight stack has %d nonzeros, budget is %d"
                              % (nnz, sparsity))
    return lad_risk(theta, data) + penalty.lam * penalty_value(penalty, theta, data)


def l0_objective(theta, data, penalty, layer_weights):
    """LAD risk + per-layer weighted exact nonzero count + weighted penalty.

    This is the limit the relaxed objective approaches as sigma drops to 0.
    """
    if not theta.box_feasible():
        raise InfeasibleError("parameters outside the box feasible set")
    count_term = sum(g * np.count_nonzero(W)
                     for g, W in zip(layer_weights, theta.weights.layers))
    return (lad_risk(theta, data) + float(count_term)
            + penalty.lam * penalty_value(penalty, theta, data))

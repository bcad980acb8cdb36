"""Sparse bias-absorbed ReLU networks: architecture, forward pass, subgradients.

A network with widths (q0, ..., qL) is a chain of L weight matrices, where
layer k has shape (qk, q_{k-1} + 1): the bias vector is absorbed as the last
column, and a constant 1 is appended to the input and after every hidden
activation.  ReLU is applied in hidden layers only.  The derivative of ReLU
at exactly 0 is taken to be 1 (one fixed selection), and the signum used for
absolute-value subgradients is +1 at 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class WeightStack:
    """Weights of a bias-absorbed ReLU network, one dense matrix per layer.

    Dense storage is deliberate: sparsity at desk scale is small, and the
    nonzero count is tracked explicitly where it matters.
    """

    def __init__(self, layers):
        self.layers = [np.array(W, dtype=float, copy=True, ndmin=2) for W in layers]
        if not self.layers:
            raise ConfigError("a weight stack needs at least one layer")
        for k in range(1, len(self.layers)):
            need = self.layers[k - 1].shape[0] + 1
            if self.layers[k].shape[1] != need:
                raise ConfigError(
                    "layer %d expects input width %d (+1 bias), got shape %s"
                    % (k, need - 1, self.layers[k].shape)
                )

    @property
    def depth(self):
        return len(self.layers)

    @property
    def widths(self):
        return tuple([self.layers[0].shape[1] - 1] + [W.shape[0] for W in self.layers])

    @property
    def n_entries(self):
        return sum(W.size for W in self.layers)

    def max_abs(self):
        return max(float(np.max(np.abs(W))) for W in self.layers)

    def copy(self):
        return WeightStack([W.copy() for W in self.layers])

    def to_dict(self):
        """Flat JSON form: {"widths": [...], "layers": [[row-major entries], ...]}."""
        return {
            "widths": list(self.widths),
            "layers": [[float(v) for v in W.ravel()] for W in self.layers],
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            widths = [int(q) for q in obj["widths"]]
            flats = obj["layers"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("weight stack needs 'widths' and 'layers'") from exc
        if len(flats) != len(widths) - 1:
            raise ConfigError("widths and layer count disagree")
        layers = []
        for k, flat in enumerate(flats):
            shape = (widths[k + 1], widths[k] + 1)
            flat = np.asarray(flat, dtype=float)
            if flat.size != shape[0] * shape[1]:
                raise ConfigError("layer %d has %d entries, expected %d"
                                  % (k, flat.size, shape[0] * shape[1]))
            layers.append(flat.reshape(shape))
        return cls(layers)

    @classmethod
    def zeros(cls, widths):
        return cls([np.zeros((widths[k + 1], widths[k] + 1))
                    for k in range(len(widths) - 1)])


@dataclass(frozen=True)
class NetworkArch:
    """Architecture of the sparse network class: widths, nonzero budget, output bound.

    widths[0] is the input dimension and widths[-1] must be 1.  The entrywise
    weight bound is fixed at 1.  `sparsity` caps the total nonzero count across
    all layers; 0 disables the network entirely (every weight projected to 0),
    which is how a model without a nonparametric part is expressed.  The output
    bound is monitored on training inputs and reported, never enforced.
    """

    widths: tuple
    sparsity: int
    output_bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(q) for q in self.widths))
        if len(self.widths) < 3:
            raise ConfigError("need at least two weight layers")
        if any(q < 1 for q in self.widths):
            raise ConfigError("every width must be >= 1")
        if self.widths[-1] != 1:
            raise ConfigError("output width must be 1")
        if not (0 <= int(self.sparsity) <= self.param_count):
            raise ConfigError("sparsity budget %r outside [0, %d]"
                              % (self.sparsity, self.param_count))
        if not self.output_bound > 0:
            raise ConfigError("output bound must be positive")

    @property
    def depth(self):
        return len(self.widths) - 1

    @property
    def layer_shapes(self):
        return [(self.widths[k + 1], self.widths[k] + 1) for k in range(self.depth)]

    @property
    def param_count(self):
        return sum(r * c for r, c in self.layer_shapes)

    def worst_case_output(self):
        """Upper bound on |g| when all entries are in [-1, 1] and z in [0, 1]^q0."""
        out = 1.0
        for k in range(self.depth):
            out *= self.widths[k] + 1
        return out


class PlmParams:
    """Full parameter (beta, W) of the partial linear model, with the beta box bound."""

    def __init__(self, beta, weights, beta_bound):
        self.beta = np.asarray(beta, dtype=float).ravel().copy()
        self.weights = weights
        self.beta_bound = float(beta_bound)
        if not self.beta_bound > 0:
            raise ConfigError("beta bound must be positive")

    @property
    def d(self):
        return self.beta.size

    def copy(self):
        return PlmParams(self.beta, self.weights.copy(), self.beta_bound)

    def box_feasible(self):
        if self.beta.size and np.max(np.abs(self.beta)) > self.beta_bound:
            return False
        return self.weights.max_abs() <= 1.0


def _layers(weights):
    return weights.layers if isinstance(weights, WeightStack) else list(weights)


def _forward_cache(layers, Z):
    """Batched forward pass keeping what backprop needs.

    Returns (acts, pres, out): acts[k] is the augmented input fed to layer k
    (n, q_k + 1), pres[k] is the pre-activation of hidden layer k+1 (n, q_{k+1}),
    and out is the network output (n,).
    """
    n = Z.shape[0]
    a = np.empty((n, Z.shape[1] + 1))
    a[:, :-1] = Z
    a[:, -1] = 1.0
    acts, pres = [a], []
    for W in layers[:-1]:
        h = a @ W.T
        pres.append(h)
        a = np.empty((n, h.shape[1] + 1))
        a[:, :-1] = np.maximum(h, 0.0)
        a[:, -1] = 1.0
        acts.append(a)
    out = a @ layers[-1].T
    return acts, pres, out[:, 0]


def forward_batch(weights, Z):
    """Network output over the rows of Z; returns an (n,) vector."""
    layers = _layers(weights)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != layers[0].shape[1] - 1:
        raise ConfigError("input dimension %d does not match first layer width %d"
                          % (Z.shape[1], layers[0].shape[1] - 1))
    _, _, out = _forward_cache(layers, Z)
    return out


def forward(weights, z):
    """Evaluate the network at a single point z; ReLU hidden layers, linear output."""
    z = np.asarray(z, dtype=float).ravel()
    return float(forward_batch(weights, z[None, :])[0])


def predict(theta, x, z):
    """Model prediction beta.x + g(W; z) at one point."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != theta.beta.size:
        raise ConfigError("x has length %d, beta has length %d" % (x.size, theta.beta.size))
    return float(theta.beta @ x) + forward(theta.weights, z)


def _lad_backprop(beta, layers, X, Y, Z):
    """One Clarke subgradient of the mean absolute residual on (X, Y, Z).

    The outer subgradient is -sign(r) with sign(0) = +1; hidden ReLU units use
    derivative 1 at 0.  Returns (beta_grad, [per-layer arrays]).
    """
    acts, pres, g = _forward_cache(layers, Z)
    r = Y - X @ beta - g
    sgn = np.where(r >= 0.0, 1.0, -1.0)
    n = Y.size
    beta_grad = -(sgn @ X) / n
    u = (-sgn / n)[:, None]
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        grads[k] = u.T @ acts[k]
        if k > 0:
            u = (u @ layers[k][:, :-1]) * (pres[k - 1] >= 0.0)
    return beta_grad, grads


def param_subgradient(theta, batch):
    """Subgradient of the batch-mean absolute residual with respect to (beta, W).

    batch carries arrays X (n, d), Y (n,), Z (n, q0).  The returned weight part
    has the same shapes as the stack's layers.
    """
    n = len(batch.Y)
    if n == 0:
        raise ValueError("empty batch")
    layers = _layers(theta.weights)
    return _lad_backprop(theta.beta, layers, batch.X, batch.Y, batch.Z)


def _jacobian_batch(layers, Z):
    """d g / d z over the rows of Z; returns (n, q0).  ReLU derivative 1 at 0."""
    _, pres, _ = _forward_cache(layers, Z)
    n = Z.shape[0]
    u = np.ones((n, 1))
    for k in range(len(layers) - 1, 0, -1):
        u = (u @ layers[k][:, :-1]) * (pres[k - 1] >= 0.0)
    return u @ layers[0][:, :-1]


def input_jacobian(weights, z):
    """Gradient of the network output in its input at a single point z."""
    layers = _layers(weights)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != layers[0].shape[1] - 1:
        raise ConfigError("input dimension %d does not match first layer width %d"
                          % (z.size, layers[0].shape[1] - 1))
    return _jacobian_batch(layers, z[None, :])[0]


def output_bound_exceeded(weights, Z, bound):
    """True when sup |g| over the given inputs exceeds the monitored bound."""
    return bool(np.max(np.abs(forward_batch(weights, Z))) > bound)


def random_weights(arch, rng, exact=False):
    """Seeded starting stack: entries uniform on [-0.5, 0.5].

    Input-layer biases are then overridden to -w.u with u uniform in the
    cube, anchoring each first-layer kink at an interior point of the data
    range.  Left to raw uniform draws, most units start switched off (or
    affine) over the whole cube and never receive a gradient, which strands
    the fit.  With exact=True the result is hard-thresholded to the
    `sparsity` largest magnitudes so the start is feasible for the
    cardinality-constrained formulation (ties resolved by index order).
    """
    layers = [rng.uniform(-0.5, 0.5, size=shape) for shape in arch.layer_shapes]
    anchors = rng.random((arch.widths[1], arch.widths[0]))
    layers[0][:, -1] = np.clip(-np.sum(layers[0][:, :-1] * anchors, axis=1),
                               -1.0, 1.0)
    if exact:
        flat = np.concatenate([W.ravel() for W in layers])
        if arch.sparsity < flat.size:
            order = np.argsort(-np.abs(flat), kind="stable")
            keep = np.zeros(flat.size, dtype=bool)
            keep[order[:arch.sparsity]] = True
            flat[~keep] = 0.0
        out, pos = [], 0
        for shape in arch.layer_shapes:
            size = shape[0] * shape[1]
            out.append(flat[pos:pos + size].reshape(shape))
            pos += size
        layers = out
    return WeightStack(layers)

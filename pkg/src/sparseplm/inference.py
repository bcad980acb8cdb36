"""Post-fit statistics: residualized design, sandwich covariance, rates.

The linear-part covariance follows the median-regression sandwich: with
X residualized against Z, Sigma1 is its second moment, Sigma2 its
density-weighted version, and Cov(beta_hat) = (c/N) Sigma2^-1 Sigma1
Sigma2^-1.  The leading constant c is selectable: 'quarter' (c = 1/4, the
classical value, also implied by the delta-method algebra) or 'unit'
(c = 1); the Monte Carlo harness reports both so coverage adjudicates.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import (ConfigError, DegenerateDataError, IllConditionedError)
from .datagen import GenConfig, true_g_batch
from .network import forward_batch

COND_LIMIT = 1e8

Metrics = namedtuple("Metrics", ["beta_err", "g_err", "d_theta"])


def _robust_scale(v):
    iqr = float(np.subtract(*np.percentile(v, [75, 25])))
    sd = float(np.std(v))
    candidates = [c for c in (sd, iqr / 1.349) if c > 0]
    return min(candidates) if candidates else 0.0


def _silverman(Z):
    """Per-dimension multivariate rule-of-thumb bandwidths."""
    n, l = Z.shape
    factor = (4.0 / (l + 2.0)) ** (1.0 / (l + 4.0)) * n ** (-1.0 / (l + 4.0))
    h = np.empty(l)
    for j in range(l):
        scale = _robust_scale(Z[:, j])
        h[j] = scale * factor if scale > 0 else 1.0
    return h


class PhiStarFit:
    """Kernel regression of each X column on Z: fitted values and a predictor."""

    def __init__(self, Ztrain, Xtrain, bandwidths):
        self.Ztrain = Ztrain
        self.Xtrain = Xtrain
        self.bandwidths = bandwidths
        self.fitted = self.predict(Ztrain)

    def predict(self, Z, chunk=512):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.Ztrain.shape[1]:
            raise ConfigError("query has %d columns, training Z has %d"
                              % (Z.shape[1], self.Ztrain.shape[1]))
        out = np.empty((Z.shape[0], self.Xtrain.shape[1]))
        for lo in range(0, Z.shape[0], chunk):
            q = Z[lo:lo + chunk]
            d2 = np.zeros((q.shape[0], self.Ztrain.shape[0]))
            for j in range(q.shape[1]):
                d2 += ((q[:, j:j + 1] - self.Ztrain[:, j][None, :])
                       / self.bandwidths[j]) ** 2
            K = np.exp(-0.5 * d2)
            denom = np.maximum(K.sum(axis=1, keepdims=True), 1e-300)
            out[lo:lo + chunk] = (K @ self.Xtrain) / denom
        return out


def estimate_phi_star(data, bandwidth="auto"):
    """Nadaraya-Watson estimate of E[X | Z] with a Gaussian kernel.

    Under the default designs the density-weighted projection of X on
    functions of Z collapses to the plain conditional mean, which is what
    this estimates; bandwidths follow the multivariate rule of thumb unless
    a positive scalar override is given.
    """
    if data.n < 30:
        raise ConfigError("need at least 30 samples")
    if bandwidth == "auto":
        h = _silverman(data.Z)
    else:
        if not float(bandwidth) > 0:
            raise ConfigError("bandwidth must be positive")
        h = np.full(data.l, float(bandwidth))
    return PhiStarFit(data.Z, data.X, h)


def estimate_f0(residuals, bandwidth=None):
    """Gaussian kernel density of the residuals evaluated at 0.

    The default bandwidth is (robust scale) * n^(-1/3), deliberately tighter
    than the usual n^(-1/5) rule: median-regression residuals concentrate a
    density kink at 0, and the wider rule is visibly biased there.
    """
    r = np.asarray(residuals, dtype=float).ravel()
    if r.size < 30:
        raise ConfigError("need at least 30 residuals")
    scale = _robust_scale(r)
    if scale == 0.0:
        raise DegenerateDataError("residuals have no variation")
    if bandwidth is None:
        h = scale * r.size ** (-1.0 / 3.0)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ConfigError("bandwidth must be positive")
    return float(np.mean(np.exp(-0.5 * (r / h) ** 2))
                 / (h * math.sqrt(2.0 * math.pi)))


@dataclass
class InferenceReport:
    beta_hat: np.ndarray
    Sigma1_hat: np.ndarray
    Sigma2_hat: np.ndarray
    sandwich_cov: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    f0_hat: float
    level: float
    factor: str
    cond: float

    def to_dict(self):
        return {
            "beta_hat": [float(b) for b in self.beta_hat],
            "Sigma1_hat": self.Sigma1_hat.tolist(),
            "Sigma2_hat": self.Sigma2_hat.tolist(),
            "sandwich_cov": self.sandwich_cov.tolist(),
            "ci_lower": [float(v) for v in self.ci_lower],
            "ci_upper": [float(v) for v in self.ci_upper],
            "f0_hat": self.f0_hat,
            "level": self.level,
            "factor": self.factor,
            "cond": self.cond,
        }


def sandwich_covariance(data, theta_hat, phi_fitted, f0_hat,
                        level=0.95, factor="quarter"):
    """Sandwich covariance and normal confidence intervals for the linear part.

    phi_fitted holds the per-sample conditional-mean estimates of X given Z;
    f0_hat is either a scalar residual density at 0 or a per-sample vector of
    conditional densities (the general hook).
    """
    if factor not in ("quarter", "unit"):
        raise ConfigError("factor must be 'quarter' or 'unit'")
    if not (0.0 < level < 1.0):
        raise ConfigError("level must lie in (0, 1)")
    n = data.n
    Xt = data.X - np.asarray(phi_fitted, dtype=float)
    S1 = Xt.T @ Xt / n
    S1 = (S1 + S1.T) / 2.0
    f = np.asarray(f0_hat, dtype=float)
    if f.ndim == 0:
        S2 = float(f) * S1
    else:
        if f.shape != (n,):
            raise ConfigError("per-sample density vector has wrong length")
        S2 = (Xt * f[:, None]).T @ Xt / n
        S2 = (S2 + S2.T) / 2.0
    cond = float(np.linalg.cond(S2))
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise IllConditionedError("density-weighted moment matrix has condition "
                                  "number %.3g" % cond, cond=cond)
    S2inv = np.linalg.inv(S2)
    coef = 0.25 if factor == "quarter" else 1.0
    cov = (coef / n) * (S2inv @ S1 @ S2inv)
    cov = (cov + cov.T) / 2.0
    z = float(ndtri(0.5 + level / 2.0))
    half = z * np.sqrt(np.diag(cov))
    beta = np.asarray(theta_hat.beta, dtype=float)
    return InferenceReport(beta, S1, S2, cov, beta - half, beta + half,
                           float(np.mean(f)), level, factor, cond)


@dataclass(frozen=True)
class SmoothnessSpec:
    """Composition smoothness profile: exponents and intrinsic dimensions."""

    gamma: tuple
    dbar: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "dbar", tuple(int(d) for d in self.dbar))
        if len(self.gamma) != len(self.dbar) or not self.gamma:
            raise ConfigError("gamma and dbar must be equal-length, nonempty")
        if any(g <= 0 for g in self.gamma) or any(d < 1 for d in self.dbar):
            raise ConfigError("smoothness entries must be positive")

    def effective(self):
        J = len(self.gamma)
        out = []
        for k in range(J):
            prod = 1.0
            for i in range(k + 1, J):
                prod *= min(self.gamma[i], 1.0)
            out.append(self.gamma[k] * prod)
        return tuple(out)


def theoretical_rate(spec, n):
    """Rate exponent and the rate itself for a sample of size n."""
    eff = spec.effective()
    zeta = min(g / (2.0 * g + d) for g, d in zip(eff, spec.dbar))
    return zeta, float(n) ** -zeta


def covering_bound(epsilon, s, depth, widths):
    """Metric-entropy bound (s+1) log(2 H^2 (L+1) / eps) for the network class."""
    widths = tuple(int(q) for q in widths)
    if len(widths) != depth + 1:
        raise ConfigError("widths must have depth + 1 entries")
    H = 1.0
    for q in widths:
        H *= q + 1
    limit = 2.0 * H * H * (depth + 1)
    if not (0.0 < epsilon < limit):
        raise ConfigError("epsilon must lie in (0, %g)" % limit)
    return (s + 1) * math.log(limit / epsilon)


def estimation_metrics(theta_hat, config, eval_seed, grid_size=10000):
    """Errors against the generating truth on fresh Monte Carlo draws.

    Returns the sup-norm error of the linear part, the root mean square error
    of the network against the true function over fresh Z draws, and the RMS
    full-prediction distance over fresh (X, Z) draws.
    """
    if not isinstance(config, GenConfig):
        raise ConfigError("metrics need a generating config with known truth")
    rng = np.random.default_rng(eval_seed)
    Zg = rng.random((grid_size, config.l))
    if config.dependent:
        V = rng.random((grid_size, config.d))
        Xg = (V + Zg[:, :1]) / 2.0
    else:
        Xg = rng.random((grid_size, config.d))
    beta0 = np.asarray(config.beta0)
    dbeta = np.asarray(theta_hat.beta) - beta0
    gap = forward_batch(theta_hat.weights, Zg) - true_g_batch(config, Zg)
    beta_err = float(np.max(np.abs(dbeta))) if dbeta.size else 0.0
    g_err = float(np.sqrt(np.mean(gap ** 2)))
    d_theta = float(np.sqrt(np.mean((Xg @ dbeta + gap) ** 2)))
    return Metrics(beta_err, g_err, d_theta)

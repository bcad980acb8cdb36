"""Synthetic data for the partial linear model Y = beta0.X + g0(Z) + noise.

Covariates live on [0,1]^(d+l).  Every built-in noise law is symmetric about
0, so the conditional median assumption holds exactly.  Generation is a pure
function of the config (including its seed); the draw order Z, then X (or its
latent V), then the noise, is fixed and part of the reproducibility contract.
"""

import csv
import dataclasses
import json
import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

G0_KINDS = ("sine", "additive_smooth", "composite")
ERROR_LAWS = ("laplace", "student_t", "contaminated_normal")

Batch = namedtuple("Batch", ["X", "Y", "Z"])


@dataclass(frozen=True)
class GenConfig:
    """Sampling plan: sizes, linear coefficients, true function, noise law.

    error_params by law: laplace (scale b,), student_t (dof nu,),
    contaminated_normal (mix weight rho, inflation kappa).  g0_coeffs feeds
    additive_smooth only (cosine coefficients, defaults to ones).
    dependent=True couples X to Z via X_j = (V_j + Z_1) / 2, which keeps the
    support in [0,1] and makes E[X|Z] affine in Z_1.
    """

    n: int
    d: int
    l: int
    beta0: tuple
    g0: str = "sine"
    g0_coeffs: tuple = None
    error: str = "laplace"
    error_params: tuple = (1.0,)
    dependent: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        object.__setattr__(self, "error_params",
                           tuple(float(p) for p in self.error_params))
        if self.g0_coeffs is not None:
            object.__setattr__(self, "g0_coeffs",
                               tuple(float(a) for a in self.g0_coeffs))
        if self.n < 1:
            raise ConfigError("need n >= 1")
        if self.d < 1 or self.l < 1:
            raise ConfigError("need d >= 1 and l >= 1")
        if len(self.beta0) != self.d:
            raise ConfigError("beta0 has length %d, d is %d"
                              % (len(self.beta0), self.d))
        if self.g0 not in G0_KINDS:
            raise ConfigError("unknown g0 %r (choose from %s)"
                              % (self.g0, ", ".join(G0_KINDS)))
        if self.g0_coeffs is not None and len(self.g0_coeffs) != self.l:
            raise ConfigError("g0_coeffs has length %d, l is %d"
                              % (len(self.g0_coeffs), self.l))
        _check_error_law(self.error, self.error_params)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["beta0"] = list(self.beta0)
        out["error_params"] = list(self.error_params)
        if self.g0_coeffs is not None:
            out["g0_coeffs"] = list(self.g0_coeffs)
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        for key in ("beta0", "error_params", "g0_coeffs"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)


def _check_error_law(law, params):
    if law == "laplace":
        if len(params) != 1 or not params[0] > 0:
            raise ConfigError("laplace needs one positive scale parameter")
    elif law == "student_t":
        if len(params) != 1 or not params[0] > 0:
            raise ConfigError("student_t needs one positive dof parameter")
    elif law == "contaminated_normal":
        if len(params) != 2:
            raise ConfigError("contaminated_normal needs (rho, kappa)")
        rho, kappa = params
        if not (0.0 <= rho <= 1.0) or not kappa > 0:
            raise ConfigError("contaminated_normal needs rho in [0,1], kappa > 0")
    else:
        raise ConfigError("unknown error law %r (choose from %s)"
                          % (law, ", ".join(ERROR_LAWS)))


class Dataset:
    """Observations (X, Y, Z) with X and Z confined to the unit cube."""

    def __init__(self, X, Y, Z, provenance="external"):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.Y = np.asarray(Y, dtype=float).ravel()
        self.Z = np.atleast_2d(np.asarray(Z, dtype=float))
        self.provenance = provenance
        n = self.Y.size
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise ConfigError("row counts disagree: X %d, Y %d, Z %d"
                              % (self.X.shape[0], n, self.Z.shape[0]))
        for name, arr in (("X", self.X), ("Z", self.Z)):
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ConfigError("%s entries must lie in [0,1]" % name)

    @property
    def n(self):
        return self.Y.size

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def l(self):
        return self.Z.shape[1]

    def take(self, idx):
        return Batch(self.X[idx], self.Y[idx], self.Z[idx])

    def to_csv(self, path):
        """Write rows as x1..xd, z1..zl, y; config echo goes to <path>.json."""
        path = str(path)
        header = (["x%d" % (j + 1) for j in range(self.d)]
                  + ["z%d" % (j + 1) for j in range(self.l)] + ["y"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.X[i]]
                row += [repr(float(v)) for v in self.Z[i]]
                row.append(repr(float(self.Y[i])))
                w.writerow(row)
        sidecar = ("external" if not isinstance(self.provenance, GenConfig)
                   else self.provenance.to_dict())
        with open(path + ".json", "w") as fh:
            json.dump({"provenance": sidecar}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path):
        """Load a dataset written by to_csv; column counts come from the header."""
        with open(str(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ConfigError("empty dataset file %s" % path)
        header = rows[0]
        d = sum(1 for h in header if h.startswith("x"))
        l = sum(1 for h in header if h.startswith("z"))
        if d < 1 or l < 1 or header[-1] != "y" or len(header) != d + l + 1:
            raise ConfigError("unrecognized dataset header %r" % (header,))
        body = np.array([[float(v) for v in row] for row in rows[1:]])
        if body.ndim != 2 or body.shape[1] != d + l + 1:
            raise ConfigError("malformed dataset rows in %s" % path)
        return cls(body[:, :d], body[:, -1], body[:, d:d + l])


def true_g_batch(config, Z):
    """True nonparametric part evaluated over the rows of Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != config.l:
        raise ConfigError("Z has %d columns, config has l=%d"
                          % (Z.shape[1], config.l))
    if config.g0 == "sine":
        return np.sin(2.0 * np.pi * Z[:, 0])
    if config.g0 == "additive_smooth":
        coeffs = config.g0_coeffs
        if coeffs is None:
            coeffs = (1.0,) * config.l
        return np.cos(np.pi * Z) @ np.asarray(coeffs)
    return np.exp(-np.sum((Z - 0.5) ** 2, axis=1)) * np.sin(2.0 * np.pi * Z[:, 0])


def true_g(config, z):
    return float(true_g_batch(config, np.asarray(z, dtype=float)[None, :])[0])


def _draw_errors(rng, law, params, n):
    if law == "laplace":
        return rng.laplace(0.0, params[0], size=n)
    if law == "student_t":
        return rng.standard_t(params[0], size=n)
    rho, kappa = params
    inflate = rng.random(n) < rho
    return rng.standard_normal(n) * np.where(inflate, kappa, 1.0)


def generate(config):
    """Draw a dataset from the model; pure in (config, config.seed)."""
    rng = np.random.default_rng(config.seed)
    Z = rng.random((config.n, config.l))
    if config.dependent:
        V = rng.random((config.n, config.d))
        X = (V + Z[:, :1]) / 2.0
    else:
        X = rng.random((config.n, config.d))
    eps = _draw_errors(rng, config.error, config.error_params, config.n)
    Y = X @ np.asarray(config.beta0) + true_g_batch(config, Z) + eps
    return Dataset(X, Y, Z, provenance=config)


def error_density_at_zero(config):
    """Analytic noise density at 0 for the configured law."""
    params = config.error_params
    if config.error == "laplace":
        return 1.0 / (2.0 * params[0])
    if config.error == "student_t":
        nu = params[0]
        return math.exp(math.lgamma((nu + 1.0) / 2.0)
                        - math.lgamma(nu / 2.0)) / math.sqrt(nu * math.pi)
    rho, kappa = params
    return (1.0 - rho + rho / kappa) / math.sqrt(2.0 * math.pi)

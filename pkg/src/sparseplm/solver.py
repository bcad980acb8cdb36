"""Projected stochastic subgradient solvers for both formulations.

Each iteration samples a minibatch LAD subgradient, adds the exact surrogate
and penalty parts, steps with a Robbins-Monro schedule, and projects back
onto the feasible set: the plain box for the relaxed problem, box plus
cardinality cap for the exact one.  The relaxed path runs a continuation
plan, shrinking the surrogate scale sigma across stages and warm-starting
each stage at the previous iterate; the step index keeps running across
stages so the schedule never restarts.
"""

import csv
import time
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DivergenceError, InfeasibleError
from .network import (PlmParams, WeightStack, _lad_backprop, _layers,
                      forward_batch, param_subgradient, random_weights)
from .objective import (SurrogateSpec, default_layer_weights, l0_count,
                        lad_risk, penalty_subgradient, penalty_value,
                        surrogate_subgradient, surrogate_value)
from .projection import (project_box_beta, project_sparse_box,
                         sparse_box_project)

_INDEX_BLOCK = 512

DEFAULT_SIGMA_PLAN = tuple(2.0 ** -k for k in range(8))


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step sizes alpha0 * k^(-p), square summable but not summable."""

    alpha0: float = 0.1
    exponent: float = 1.0
    kind: str = "power"

    def __post_init__(self):
        if self.kind != "power":
            raise ConfigError("unknown schedule kind %r" % (self.kind,))
        if not self.alpha0 > 0:
            raise ConfigError("alpha0 must be positive")
        if not (0.5 < self.exponent <= 1.0):
            raise ConfigError("schedule exponent must lie in (0.5, 1]")

    def at(self, k):
        return self.alpha0 * float(k) ** -self.exponent

    def to_dict(self):
        return {"alpha0": self.alpha0, "exponent": self.exponent, "kind": self.kind}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration plan: schedule, batching, mode, continuation, trace density."""

    schedule: StepSchedule
    batch_size: int = 32
    max_iters: int = 20000
    seed: int = 0
    mode: str = "relaxed"
    sigma_plan: tuple = DEFAULT_SIGMA_PLAN
    gamma0: float = 0.1
    record_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "sigma_plan",
                           tuple(float(s) for s in self.sigma_plan))
        if self.mode not in ("relaxed", "exact"):
            raise ConfigError("mode must be 'relaxed' or 'exact'")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if not self.gamma0 >= 0:
            raise ConfigError("gamma0 must be nonnegative")
        if self.mode == "relaxed":
            plan = self.sigma_plan
            if not plan or any(s <= 0 for s in plan):
                raise ConfigError("sigma_plan must be positive")
            if any(nxt >= prv for prv, nxt in zip(plan, plan[1:])):
                raise ConfigError("sigma_plan must be strictly decreasing")

    def to_dict(self):
        return {"schedule": self.schedule.to_dict(), "batch_size": self.batch_size,
                "max_iters": self.max_iters, "seed": self.seed, "mode": self.mode,
                "sigma_plan": list(self.sigma_plan), "gamma0": self.gamma0,
                "record_every": self.record_every}

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        obj["schedule"] = StepSchedule.from_dict(obj["schedule"])
        if "sigma_plan" in obj:
            obj["sigma_plan"] = tuple(obj["sigma_plan"])
        return cls(**obj)


TraceRecord = namedtuple(
    "TraceRecord",
    ["iteration", "objective", "alpha", "sparsity", "stationarity", "sigma"])


class FitTrace:
    """Recorded iterations plus the final and best-objective iterates.

    In continuation runs the best iterate is chosen by re-scoring candidates
    at the plan's final sigma, so early stages (whose looser surrogate reads
    systematically lower) cannot shadow later ones.  Wall time is kept on the
    object only; serialized outputs stay time-free for reproducibility.
    """

    def __init__(self, records, final, best, best_iteration=-1, wall_time=0.0):
        self.records = list(records)
        self.final = final
        self.best = best
        self.best_iteration = best_iteration
        self.wall_time = wall_time

    def objectives(self):
        return np.array([r.objective for r in self.records])

    def to_csv(self, path):
        with open(str(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "alpha", "sparsity",
                        "stationarity", "sigma"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.objective), repr(r.alpha),
                            r.sparsity, repr(r.stationarity), repr(r.sigma)])


def initial_params(arch, beta_dim, beta_bound, rng, exact=False):
    """Zero linear part, small random weights (thresholded when exact)."""
    return PlmParams(np.zeros(beta_dim), random_weights(arch, rng, exact=exact),
                     beta_bound)


def stochastic_subgradient_sample(theta, data, batch_size, rng,
                                  penalty=None, surrogate=None):
    """One stochastic composite subgradient: minibatch LAD + exact extras.

    The LAD part averages over batch_size indices drawn uniformly with
    replacement (the whole sample, unshuffled, when batch_size >= n, so a
    full batch reproduces the deterministic subgradient).  The penalty and
    surrogate parts are computed exactly when given.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    n = data.Y.size
    if batch_size >= n:
        idx = np.arange(n)
    else:
        idx = rng.integers(0, n, size=batch_size)
    layers = _layers(theta.weights)
    bg, wg = _lad_backprop(theta.beta, layers, data.X[idx], data.Y[idx],
                           data.Z[idx])
    if surrogate is not None:
        for j, g in enumerate(surrogate_subgradient(surrogate, theta.weights)):
            wg[j] += g
    if penalty is not None and penalty.lam > 0:
        pb, pw = penalty_subgradient(penalty, theta, data)
        bg += penalty.lam * pb
        for j in range(len(wg)):
            wg[j] += penalty.lam * pw[j]
    return bg, wg


def step_relaxed(theta, grad, alpha, beta_bound):
    """Gradient step followed by the box projection."""
    bg, wg = grad
    beta = project_box_beta(theta.beta - alpha * bg, beta_bound)
    layers = [np.clip(W - alpha * g, -1.0, 1.0)
              for W, g in zip(theta.weights.layers, wg)]
    return PlmParams(beta, WeightStack(layers), beta_bound)


def step_exact(theta, grad, alpha, beta_bound, sparsity):
    """Gradient step followed by box projection on beta, sparse-box on weights."""
    bg, wg = grad
    beta = project_box_beta(theta.beta - alpha * bg, beta_bound)
    stepped = [W - alpha * g for W, g in zip(theta.weights.layers, wg)]
    flat = sparse_box_project(np.concatenate([W.ravel() for W in stepped]),
                              sparsity)
    layers, pos = [], 0
    for W in stepped:
        layers.append(flat[pos:pos + W.size].reshape(W.shape))
        pos += W.size
    return PlmParams(beta, WeightStack(layers), beta_bound)


def stationarity_proxy(theta, data, penalty, mode, epsilon,
                       surrogate=None, sparsity=None):
    """Scaled displacement of one deterministic projected step.

    Computes the full-data composite subgradient selection, takes a step of
    length epsilon, projects with the mode's projection, and returns the
    displacement over epsilon.  Near-zero values mean the iterate is close
    to a fixed point of the projected subgradient map.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    bg, wg = param_subgradient(theta, data)
    if mode == "relaxed" and surrogate is not None:
        for j, g in enumerate(surrogate_subgradient(surrogate, theta.weights)):
            wg[j] += g
    if penalty.lam > 0:
        pb, pw = penalty_subgradient(penalty, theta, data)
        bg += penalty.lam * pb
        for j in range(len(wg)):
            wg[j] += penalty.lam * pw[j]
    grad = (bg, wg)
    if mode == "relaxed":
        stepped = step_relaxed(theta, grad, epsilon, theta.beta_bound)
    else:
        if sparsity is None:
            raise ConfigError("exact mode needs the sparsity budget")
        stepped = step_exact(theta, grad, epsilon, theta.beta_bound, sparsity)
    disp = float(np.sum((theta.beta - stepped.beta) ** 2))
    for W, V in zip(theta.weights.layers, stepped.weights.layers):
        disp += float(np.sum((W - V) ** 2))
    return float(np.sqrt(disp)) / epsilon


def _check_init(theta, mode, sparsity):
    if not theta.box_feasible():
        raise InfeasibleError("initial point outside the box")
    if mode == "exact" and l0_count(theta.weights) > sparsity:
        raise InfeasibleError("initial stack exceeds the sparsity budget")


def run(config, data, penalty, arch, beta_bound=10.0, init=None):
    """Full solve: iterate, project, record, return the trace.

    The trace records the composite objective on the full data at iteration 0,
    every record_every steps, and at the last step.  A non-finite recorded
    objective aborts with the partial trace attached.
    """
    n = data.n
    if config.batch_size > n:
        raise ConfigError("batch_size %d exceeds sample count %d"
                          % (config.batch_size, n))
    relaxed = config.mode == "relaxed"
    sparsity = arch.sparsity
    rng = np.random.default_rng(config.seed)
    if init is None:
        theta0 = initial_params(arch, data.d, beta_bound, rng, exact=not relaxed)
    else:
        theta0 = init.copy()
    _check_init(theta0, config.mode, sparsity)

    started = time.perf_counter()
    if config.max_iters == 0:
        return FitTrace([], theta0.copy(), theta0.copy(),
                        wall_time=time.perf_counter() - started)

    gammas = default_layer_weights(arch, config.gamma0)
    plan = config.sigma_plan if relaxed else ()
    if relaxed:
        stage_len = max(1, config.max_iters // len(plan))
    X, Y, Z = data.X, data.Y, data.Z
    beta = theta0.beta.copy()
    layers = [W.copy() for W in theta0.weights.layers]
    bound = theta0.beta_bound
    # beta-only shortcut: a zero budget with no active penalty freezes the
    # network at zero, so the network passes can be skipped entirely
    fast = (not relaxed) and sparsity == 0 and penalty.lam == 0

    def sigma_at(k):
        return plan[min(max(k - 1, 0) // stage_len, len(plan) - 1)]

    records = []
    best = {"track": np.inf, "snap": None, "iter": -1}

    def snapshot():
        return PlmParams(beta, WeightStack(layers), bound)

    def record(k, alpha):
        wrapper = snapshot()
        lad = lad_risk(wrapper, data)
        pen = penalty_value(penalty, wrapper, data) if penalty.lam > 0 else 0.0
        if relaxed:
            sig = sigma_at(k)
            spec = SurrogateSpec(sig, gammas)
            obj = lad + surrogate_value(spec, wrapper.weights) + penalty.lam * pen
            if sig == plan[-1]:
                track = obj
            else:
                spec_last = SurrogateSpec(plan[-1], gammas)
                track = (lad + surrogate_value(spec_last, wrapper.weights)
                         + penalty.lam * pen)
            stat = stationarity_proxy(wrapper, data, penalty, "relaxed", 1e-3,
                                      surrogate=spec)
        else:
            sig = float("nan")
            obj = track = lad + penalty.lam * pen
            stat = stationarity_proxy(wrapper, data, penalty, "exact", 1e-3,
                                      sparsity=sparsity)
        records.append(TraceRecord(k, obj, alpha, l0_count(wrapper.weights),
                                   stat, sig))
        if not np.isfinite(obj):
            partial = FitTrace(records, wrapper, wrapper,
                               wall_time=time.perf_counter() - started)
            raise DivergenceError("non-finite objective at iteration %d" % k,
                                  trace=partial)
        if track < best["track"]:
            best["track"] = track
            best["snap"] = (beta.copy(), [W.copy() for W in layers])
            best["iter"] = k

    record(0, 0.0)
    B = config.batch_size
    blocks = None
    pos = _INDEX_BLOCK
    for k in range(1, config.max_iters + 1):
        alpha = config.schedule.at(k)
        if pos == _INDEX_BLOCK:
            blocks = rng.integers(0, n, size=(_INDEX_BLOCK, B))
            pos = 0
        idx = blocks[pos]
        pos += 1
        Xb, Yb = X[idx], Y[idx]
        if fast:
            r = Yb - Xb @ beta
            sgn = np.where(r >= 0.0, 1.0, -1.0)
            beta -= alpha * (-(sgn @ Xb) / B)
            np.clip(beta, -bound, bound, out=beta)
        else:
            bg, wg = _lad_backprop(beta, layers, Xb, Yb, Z[idx])
            if relaxed:
                sig = sigma_at(k)
                for j, g in enumerate(gammas):
                    if g > 0:
                        W = layers[j]
                        wg[j] += (g / sig) * np.exp(-np.abs(W) / sig) * np.sign(W)
            if penalty.lam > 0:
                pb, pw = penalty_subgradient(penalty, snapshot(), data)
                bg += penalty.lam * pb
                for j in range(len(wg)):
                    wg[j] += penalty.lam * pw[j]
            beta -= alpha * bg
            np.clip(beta, -bound, bound, out=beta)
            if relaxed:
                for j in range(len(layers)):
                    layers[j] -= alpha * wg[j]
                    np.clip(layers[j], -1.0, 1.0, out=layers[j])
            else:
                flat = np.concatenate(
                    [(W - alpha * g).ravel() for W, g in zip(layers, wg)])
                flat = sparse_box_project(flat, sparsity)
                at = 0
                for j in range(len(layers)):
                    size = layers[j].size
                    layers[j][...] = flat[at:at + size].reshape(layers[j].shape)
                    at += size
        if k % config.record_every == 0 or k == config.max_iters:
            record(k, alpha)

    final = snapshot()
    beta_b, layers_b = best["snap"]
    best_theta = PlmParams(beta_b, WeightStack(layers_b), bound)
    return FitTrace(records, final, best_theta, best_iteration=best["iter"],
                    wall_time=time.perf_counter() - started)


def polish_beta(theta, data):
    """Exact convex refit of the linear part with the network shape held fixed.

    Given the weights, the linear coefficients solve a plain LAD regression
    of Y minus the network output on X, which is a linear program.  When the
    output-layer bias is already in the support, it joins the refit as an
    intercept (bounded so the entry stays in [-1, 1]): any median offset left
    in the network error would otherwise leak into every linear coefficient,
    since the model has no other intercept.  The step is plain coordinate
    descent on a convex block, so it never increases either composite
    objective, and it leaves the support and the nonzero count unchanged.
    """
    from scipy import sparse
    from scipy.optimize import linprog

    n, d = data.X.shape
    target = data.Y - forward_batch(theta.weights, data.Z)
    bias_old = float(theta.weights.layers[-1][0, -1])
    with_bias = bias_old != 0.0
    design = data.X
    box = [(-theta.beta_bound, theta.beta_bound)] * d
    if with_bias:
        design = np.c_[design, np.ones(n)]
        box.append((-1.0 - bias_old, 1.0 - bias_old))
    p = design.shape[1]
    # min 1'u + 1'v  s.t.  design theta + u - v = target, u, v >= 0
    cols = sparse.hstack([sparse.csc_matrix(design),
                          sparse.eye(n, format="csc"),
                          -sparse.eye(n, format="csc")], format="csc")
    cost = np.concatenate([np.zeros(p), np.ones(2 * n)])
    box += [(0.0, None)] * (2 * n)
    sol = linprog(cost, A_eq=cols, b_eq=target, bounds=box, method="highs")
    if not sol.success:
        return theta.copy()
    out = theta.copy()
    out.beta = sol.x[:d].copy()
    if with_bias:
        shift = float(sol.x[d])
        if bias_old + shift != 0.0:  # keep the support identical
            out.weights.layers[-1][0, -1] = bias_old + shift
    return out


def final_objective(theta, data, penalty, config, arch):
    """Composite objective value the run's mode would assign to theta.

    Relaxed mode scores with the surrogate at the last continuation sigma,
    matching the tracking objective used for best-iterate selection.
    """
    lad = lad_risk(theta, data)
    pen = penalty.lam * penalty_value(penalty, theta, data) if penalty.lam > 0 else 0.0
    if config.mode == "relaxed":
        spec = SurrogateSpec(config.sigma_plan[-1],
                             default_layer_weights(arch, config.gamma0))
        return lad + surrogate_value(spec, theta.weights) + pen
    return lad + pen


def run_warm_started(config, data, penalty, arch, beta_bound=10.0):
    """Exact-mode solve initialized by a thresholded relaxed-mode run.

    The budget is split in half: a relaxed continuation run first, then its
    best iterate is hard-thresholded to the sparsity budget (the sparse-box
    projection, which on box-feasible weights keeps exactly the largest
    magnitudes) and refined in exact mode.  Starting the cardinality-
    constrained iteration from the relaxed solution is markedly better than
    starting it cold: the surrogate phase organizes the network before any
    support decisions are frozen in.  The returned trace is the exact phase's,
    with the best iterate's linear part polished by the convex refit.
    """
    if config.mode != "exact":
        raise ConfigError("warm-started runs are for exact mode")
    warm_seed, main_seed = (int(s) for s in
                            np.random.SeedSequence(config.seed)
                            .generate_state(2, np.uint64))
    warm_iters = config.max_iters // 2
    warm_cfg = replace(config, mode="relaxed", max_iters=warm_iters,
                       seed=warm_seed)
    warm = run(warm_cfg, data, penalty, arch, beta_bound=beta_bound)
    start = warm.best.copy()
    start.weights = project_sparse_box(start.weights, arch.sparsity)
    main_cfg = replace(config, max_iters=config.max_iters - warm_iters,
                       seed=main_seed)
    trace = run(main_cfg, data, penalty, arch, beta_bound=beta_bound,
                init=start)
    trace.best = polish_beta(trace.best, data)
    return trace

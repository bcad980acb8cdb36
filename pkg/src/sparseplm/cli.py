"""Command-line front end: fit, replicate, and rates experiments.

Configuration is a single strict JSON document; unknown or missing fields are
reported by name.  All randomness flows from the one declared seed: the
replication with index r uses seed XOR r, and that value is expanded into
separate generator, solver, and evaluation streams.  Every command echoes the
fully resolved config next to its outputs, and no serialized output contains
wall-clock information, so byte-identical reruns are possible.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset, GenConfig, generate
from .errors import (ConfigError, DegenerateDataError, DivergenceError,
                     IllConditionedError)
from .inference import (SmoothnessSpec, estimate_f0, estimate_phi_star,
                        estimation_metrics, sandwich_covariance,
                        theoretical_rate)
from .network import NetworkArch, forward_batch
from .objective import PenaltySpec
from .solver import (SolverConfig, StepSchedule, final_objective, polish_beta,
                     run, run_warm_started)

log = logging.getLogger("sparseplm")

_MASK64 = (1 << 64) - 1


def derive_seeds(seed, r):
    """Seeds for replication r: (generator, solver, evaluation) streams."""
    root = (int(seed) ^ int(r)) & _MASK64
    gen_s, sol_s, ev_s = np.random.SeedSequence(root).generate_state(3, np.uint64)
    return int(gen_s), int(sol_s), int(ev_s)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; nested seeds are derived, not stored."""

    seed: int
    arch: NetworkArch
    solver: SolverConfig
    penalty: PenaltySpec
    gen: GenConfig = None
    data_csv: str = None
    replications: int = 1
    ci_level: float = 0.95
    variance_factor: str = "quarter"
    beta_bound: float = 10.0
    output_dir: str = "sparseplm_out"
    n_grid: tuple = ()
    smoothness: SmoothnessSpec = None
    warm_start: bool = True

    def __post_init__(self):
        if self.gen is None and self.data_csv is None:
            raise ConfigError("need either 'gen' or 'data_csv'")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not (0.0 < self.ci_level < 1.0):
            raise ConfigError("ci_level must lie in (0, 1)")
        if self.variance_factor not in ("quarter", "unit"):
            raise ConfigError("variance_factor must be 'quarter' or 'unit'")
        if not self.beta_bound > 0:
            raise ConfigError("beta_bound must be positive")
        if self.gen is not None and self.arch.widths[0] != self.gen.l:
            raise ConfigError("arch input width %d does not match gen.l = %d"
                              % (self.arch.widths[0], self.gen.l))

    def to_dict(self):
        out = {
            "seed": self.seed,
            "arch": {"widths": list(self.arch.widths),
                     "sparsity": self.arch.sparsity,
                     "output_bound": self.arch.output_bound},
            "solver": self.solver.to_dict(),
            "penalty": self.penalty.to_dict(),
            "replications": self.replications,
            "ci_level": self.ci_level,
            "variance_factor": self.variance_factor,
            "beta_bound": self.beta_bound,
            "output_dir": self.output_dir,
            "warm_start": self.warm_start,
        }
        out["solver"].pop("seed", None)
        if self.gen is not None:
            gen = self.gen.to_dict()
            gen.pop("seed", None)
            out["gen"] = gen
        if self.data_csv is not None:
            out["data_csv"] = self.data_csv
        if self.n_grid:
            out["n_grid"] = list(self.n_grid)
        if self.smoothness is not None:
            out["smoothness"] = {"gamma": list(self.smoothness.gamma),
                                 "dbar": list(self.smoothness.dbar)}
        return out


def _strict(obj, where, allowed, required=()):
    if not isinstance(obj, dict):
        raise ConfigError("%s must be a JSON object" % where)
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError("unknown field(s) %s in %s (allowed: %s)"
                          % (", ".join(unknown), where, ", ".join(sorted(allowed))))
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError("missing field(s) %s in %s" % (", ".join(missing), where))
    return obj


def parse_config(doc):
    """Build an ExperimentConfig from a parsed JSON document, strictly."""
    _strict(doc, "config",
            allowed=("seed", "gen", "arch", "penalty", "solver", "replications",
                     "ci_level", "variance_factor", "beta_bound", "output_dir",
                     "n_grid", "smoothness", "data_csv", "warm_start"),
            required=("seed", "arch", "solver"))
    arch_doc = _strict(dict(doc["arch"]), "arch",
                       allowed=("widths", "sparsity", "output_bound"),
                       required=("widths", "sparsity"))
    arch = NetworkArch(**arch_doc)

    solver_doc = _strict(dict(doc["solver"]), "solver",
                         allowed=("schedule", "batch_size", "max_iters", "mode",
                                  "sigma_plan", "gamma0", "record_every"))
    sched_doc = _strict(dict(solver_doc.pop("schedule", {})), "solver.schedule",
                        allowed=("alpha0", "exponent", "kind"))
    if "sigma_plan" in solver_doc:
        solver_doc["sigma_plan"] = tuple(solver_doc["sigma_plan"])
    solver = SolverConfig(schedule=StepSchedule(**sched_doc), seed=0, **solver_doc)

    pen_doc = _strict(dict(doc.get("penalty", {})), "penalty",
                      allowed=("kind", "cap", "lam"))
    penalty = PenaltySpec(**pen_doc)

    gen = None
    if doc.get("gen") is not None:
        gen_doc = _strict(dict(doc["gen"]), "gen",
                          allowed=("n", "d", "l", "beta0", "g0", "g0_coeffs",
                                   "error", "error_params", "dependent"),
                          required=("n", "d", "l", "beta0"))
        gen = GenConfig.from_dict(dict(gen_doc, seed=0))

    smooth = None
    if doc.get("smoothness") is not None:
        sm = _strict(dict(doc["smoothness"]), "smoothness",
                     allowed=("gamma", "dbar"), required=("gamma", "dbar"))
        smooth = SmoothnessSpec(tuple(sm["gamma"]), tuple(sm["dbar"]))

    kwargs = {}
    for key in ("replications", "ci_level", "variance_factor", "beta_bound",
                "output_dir", "data_csv", "warm_start"):
        if key in doc:
            kwargs[key] = doc[key]
    if "n_grid" in doc:
        kwargs["n_grid"] = tuple(int(n) for n in doc["n_grid"])
    return ExperimentConfig(seed=int(doc["seed"]), arch=arch, solver=solver,
                            penalty=penalty, gen=gen, smoothness=smooth, **kwargs)


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s is not valid JSON: line %d column %d: %s"
                          % (path, exc.lineno, exc.colno, exc.msg)) from exc
    try:
        return parse_config(doc)
    except TypeError as exc:
        raise ConfigError("config %s: %s" % (path, exc)) from exc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(cfg, outdir):
    _write_json(os.path.join(outdir, "config_resolved.json"), cfg.to_dict())


def _theta_dict(theta, objective, iteration):
    return {"beta": [float(b) for b in theta.beta],
            "weights": theta.weights.to_dict(),
            "objective": float(objective), "iteration": int(iteration)}


def _residuals(theta, data):
    return data.Y - data.X @ theta.beta - forward_batch(theta.weights, data.Z)


def _solve(cfg, solver_cfg, data):
    if solver_cfg.mode == "exact" and cfg.warm_start:
        return run_warm_started(solver_cfg, data, cfg.penalty, cfg.arch,
                                beta_bound=cfg.beta_bound)
    trace = run(solver_cfg, data, cfg.penalty, cfg.arch,
                beta_bound=cfg.beta_bound)
    trace.best = polish_beta(trace.best, data)
    return trace


def cmd_fit(cfg, outdir):
    """One estimation run: solve, then write theta, trace, and inference."""
    os.makedirs(outdir, exist_ok=True)
    _echo_config(cfg, outdir)
    gen_seed, sol_seed, _ = derive_seeds(cfg.seed, 0)
    if cfg.data_csv is not None:
        data = Dataset.from_csv(cfg.data_csv)
        gencfg = None
    else:
        gencfg = dataclasses.replace(cfg.gen, seed=gen_seed)
        data = generate(gencfg)
    if data.l != cfg.arch.widths[0]:
        raise ConfigError("data has l=%d, arch input width is %d"
                          % (data.l, cfg.arch.widths[0]))
    solver_cfg = dataclasses.replace(cfg.solver, seed=sol_seed)
    try:
        trace = _solve(cfg, solver_cfg, data)
    except DivergenceError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(os.path.join(outdir, "trace.csv"))
        raise
    theta = trace.best
    best_obj = final_objective(theta, data, cfg.penalty, solver_cfg, cfg.arch)
    final_rec = trace.records[-1]
    _write_json(os.path.join(outdir, "theta.json"), {
        "mode": cfg.solver.mode,
        "best": _theta_dict(theta, best_obj, trace.best_iteration),
        "final": _theta_dict(trace.final, final_rec.objective,
                             final_rec.iteration),
    })
    trace.to_csv(os.path.join(outdir, "trace.csv"))

    phi = estimate_phi_star(data)
    f0 = estimate_f0(_residuals(theta, data))
    report = sandwich_covariance(data, theta, phi.fitted, f0,
                                 level=cfg.ci_level, factor=cfg.variance_factor)
    payload = {"report": report.to_dict(), "metrics": None}
    if gencfg is not None:
        _, _, eval_seed = derive_seeds(cfg.seed, 0)
        m = estimation_metrics(theta, gencfg, eval_seed)
        payload["metrics"] = {"beta_err": m.beta_err, "g_err": m.g_err,
                              "d_theta": m.d_theta}
    _write_json(os.path.join(outdir, "inference.json"), payload)
    log.info("fit complete: best objective %.6g at iteration %d",
             best_obj, trace.best_iteration)
    return 0


def _replication_task(payload):
    """One replication, picklable: returns plain numbers only."""
    cfg, rep_index, n_override = payload
    gen_seed, sol_seed, eval_seed = derive_seeds(cfg.seed, rep_index)
    gencfg = dataclasses.replace(cfg.gen, seed=gen_seed)
    if n_override is not None:
        gencfg = dataclasses.replace(gencfg, n=n_override)
    try:
        data = generate(gencfg)
        solver_cfg = dataclasses.replace(cfg.solver, seed=sol_seed)
        trace = _solve(cfg, solver_cfg, data)
        theta = trace.best
        phi = estimate_phi_star(data)
        f0 = estimate_f0(_residuals(theta, data))
        rep_q = sandwich_covariance(data, theta, phi.fitted, f0,
                                    level=cfg.ci_level, factor="quarter")
        rep_u = sandwich_covariance(data, theta, phi.fitted, f0,
                                    level=cfg.ci_level, factor="unit")
        m = estimation_metrics(theta, gencfg, eval_seed)
    except (DivergenceError, IllConditionedError, DegenerateDataError,
            np.linalg.LinAlgError) as exc:
        return {"rep": rep_index, "status": "failed:%s" % type(exc).__name__}
    beta0 = np.asarray(gencfg.beta0)
    beta = np.asarray(theta.beta)
    sd_q = np.sqrt(np.diag(rep_q.sandwich_cov))
    cov_q = ((rep_q.ci_lower <= beta0) & (beta0 <= rep_q.ci_upper)).astype(int)
    cov_u = ((rep_u.ci_lower <= beta0) & (beta0 <= rep_u.ci_upper)).astype(int)
    return {"rep": rep_index, "status": "ok",
            "beta_err": m.beta_err, "g_err": m.g_err, "d_theta": m.d_theta,
            "beta_hat": [float(b) for b in beta],
            "z": [float(v) for v in (beta - beta0) / sd_q],
            "cov_q": [int(c) for c in cov_q],
            "cov_u": [int(c) for c in cov_u]}


def _run_pool(cfg, payloads, threads):
    if threads <= 1:
        return [_replication_task(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_replication_task, payloads))


def _moments(values):
    v = np.asarray(values, dtype=float)
    mu = v.mean()
    sd = v.std()
    if sd == 0:
        return 0.0, 0.0
    w = (v - mu) / sd
    return float(np.mean(w ** 3)), float(np.mean(w ** 4) - 3.0)


def _aggregate(rows, cfg):
    ok = [r for r in rows if r["status"] == "ok"]
    R = len(rows)
    needed = int(np.ceil(0.8 * R))
    if len(ok) < needed:
        raise DivergenceError("only %d of %d replications succeeded "
                              "(need %d)" % (len(ok), R, needed))
    d = len(ok[0]["beta_hat"])
    z = np.array([r["z"] for r in ok])
    # raw-error moments: skewness and kurtosis are affine invariant, so the
    # standardized root-n errors have exactly the moments of beta_hat itself
    bhat = np.array([r["beta_hat"] for r in ok])
    agg = {
        "replications": R,
        "failed": R - len(ok),
        "ci_level": cfg.ci_level,
        "beta_err": {"mean": float(np.mean([r["beta_err"] for r in ok])),
                     "median": float(np.median([r["beta_err"] for r in ok]))},
        "g_err": {"mean": float(np.mean([r["g_err"] for r in ok])),
                  "median": float(np.median([r["g_err"] for r in ok]))},
        "d_theta": {"mean": float(np.mean([r["d_theta"] for r in ok])),
                    "median": float(np.median([r["d_theta"] for r in ok]))},
        "coverage_quarter": [float(np.mean([r["cov_q"][j] for r in ok]))
                             for j in range(d)],
        "coverage_unit": [float(np.mean([r["cov_u"][j] for r in ok]))
                          for j in range(d)],
        "beta_skewness": [_moments(bhat[:, j])[0] for j in range(d)],
        "beta_excess_kurtosis": [_moments(bhat[:, j])[1] for j in range(d)],
        "z_skewness": [_moments(z[:, j])[0] for j in range(d)],
        "z_excess_kurtosis": [_moments(z[:, j])[1] for j in range(d)],
    }
    return agg


def _write_summary(path, rows, agg, d):
    import csv as _csv
    header = (["rep", "status", "beta_err", "g_err", "d_theta"]
              + ["beta_hat_%d" % (j + 1) for j in range(d)]
              + ["z_%d" % (j + 1) for j in range(d)]
              + ["cov_q_%d" % (j + 1) for j in range(d)]
              + ["cov_u_%d" % (j + 1) for j in range(d)])
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(header)
        for r in sorted(rows, key=lambda r: r["rep"]):
            if r["status"] != "ok":
                w.writerow([r["rep"], r["status"]] + [""] * (3 + 4 * d))
                continue
            w.writerow([r["rep"], "ok", repr(r["beta_err"]), repr(r["g_err"]),
                        repr(r["d_theta"])]
                       + [repr(v) for v in r["beta_hat"]]
                       + [repr(v) for v in r["z"]]
                       + r["cov_q"] + r["cov_u"])
        ok = [r for r in rows if r["status"] == "ok"]
        mean_of = lambda key: repr(float(np.mean([r[key] for r in ok])))
        w.writerow(["aggregate", "ok:%d/%d" % (len(ok), len(rows)),
                    mean_of("beta_err"), mean_of("g_err"), mean_of("d_theta")]
                   + [repr(float(np.mean([r["beta_hat"][j] for r in ok])))
                      for j in range(d)]
                   + [repr(float(np.mean([r["z"][j] for r in ok])))
                      for j in range(d)]
                   + [repr(v) for v in agg["coverage_quarter"]]
                   + [repr(v) for v in agg["coverage_unit"]])


def cmd_replicate(cfg, outdir, threads):
    """Monte Carlo replications: errors, coverage, z-moment diagnostics."""
    if cfg.gen is None:
        raise ConfigError("replicate needs a 'gen' section")
    if cfg.replications < 2:
        raise ConfigError("replicate needs replications >= 2")
    os.makedirs(outdir, exist_ok=True)
    _echo_config(cfg, outdir)
    payloads = [(cfg, r, None) for r in range(cfg.replications)]
    rows = _run_pool(cfg, payloads, threads)
    agg = _aggregate(rows, cfg)
    _write_summary(os.path.join(outdir, "summary.csv"), rows, agg, cfg.gen.d)
    _write_json(os.path.join(outdir, "aggregate.json"), agg)
    log.info("replicate complete: coverage (quarter) %s",
             agg["coverage_quarter"])
    return 0


def cmd_rates(cfg, outdir, threads):
    """Error medians across sample sizes plus the fitted log-log slope."""
    if cfg.gen is None:
        raise ConfigError("rates needs a 'gen' section")
    if len(cfg.n_grid) < 3:
        raise ConfigError("rates needs n_grid with at least 3 sample sizes")
    os.makedirs(outdir, exist_ok=True)
    _echo_config(cfg, outdir)
    R = cfg.replications
    payloads = []
    for i, n in enumerate(cfg.n_grid):
        payloads.extend((cfg, i * R + r, int(n)) for r in range(R))
    rows = _run_pool(cfg, payloads, threads)

    med, q25, q75 = [], [], []
    for i, n in enumerate(cfg.n_grid):
        chunk = rows[i * R:(i + 1) * R]
        errs = [r["d_theta"] for r in chunk if r["status"] == "ok"]
        if len(errs) < int(np.ceil(0.8 * R)):
            raise DivergenceError("too many failures at n=%d" % n)
        med.append(float(np.median(errs)))
        q25.append(float(np.percentile(errs, 25)))
        q75.append(float(np.percentile(errs, 75)))
    slope = float(np.polyfit(np.log(np.asarray(cfg.n_grid, dtype=float)),
                             np.log(med), 1)[0])
    smooth = cfg.smoothness or SmoothnessSpec((2.0,), (cfg.gen.l,))
    zeta, _ = theoretical_rate(smooth, cfg.n_grid[0])
    import csv as _csv
    with open(os.path.join(outdir, "rates.csv"), "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["N", "median_err", "q25", "q75", "slope", "zeta_theory"])
        for i, n in enumerate(cfg.n_grid):
            w.writerow([int(n), repr(med[i]), repr(q25[i]), repr(q75[i]),
                        repr(slope), repr(zeta)])
    log.info("rates complete: slope %.4f vs theory -%.4f", slope, zeta)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sparseplm",
        description="LAD estimation of partial linear models with a sparse "
                    "ReLU network nonparametric part")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "replicate", "rates"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--output", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        outdir = args.output or cfg.output_dir
        if args.command == "fit":
            return cmd_fit(cfg, outdir)
        if args.command == "replicate":
            return cmd_replicate(cfg, outdir, args.threads)
        return cmd_rates(cfg, outdir, args.threads)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 3
    except (IllConditionedError, DegenerateDataError) as exc:
        print("inference failure: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

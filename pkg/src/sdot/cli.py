"""Command-line experiment runner.

    sdot <experiment> [--config path.json] [--seed S] [--out dir] [flags]

A config is one JSON document; command-line flags override its fields.
Measures are given as ``{"points": [[...]], "weights": [...]}`` (or the
string ``"axis_atoms"`` for the seven-atom set), samples as ``{"rows": [[...]]}``
or as a law to draw from, ``{"spec": {...}, "m": 5000}``, where the spec may
also be ``"uniform_normal"`` (U(-1,1) x N(0,1)^2) or ``"cube_mixture"``.

Exit codes: 0 success, 2 invalid config, 3 solver failure, 4 bootstrap
refused because the optimal potential is not unique.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np
from scipy import stats

from . import bound as bound_mod
from .clt import (gaussian_process_cov, limit_variance, regime_lambda, sigma_Q_var,
                  sup_limit_sampler)
from .cost import CostSpec
from .inference import (BootstrapError, SingularHessianError, band_quantile, bootstrap_cost,
                        bootstrap_potentials, monte_carlo_costs, potential_clt)
from .measures import (ContinuousSpec, DiscreteMeasure, RandomSource, Sample, uniform_normal_law,
                       atom_cube_mixture, axis_atoms, sample_continuous)
from .semidual import SolveOptions, solve_dual
from .serialize import SCHEMA_VERSION, csv_text, write_json

EXPERIMENTS = ("solve", "clt", "bootstrap-cost", "bootstrap-potentials", "potential-clt", "bound",
               "paper-3.2", "paper-cube-mixture", "paper-figure1")
REGIMES = ("one_sample_P", "one_sample_Q", "two_sample")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_REFUSED = 0, 2, 3, 4

# random streams derived from the seed
_STREAM_Q, _STREAM_BOOT, _STREAM_LIMIT, _STREAM_MC, _STREAM_SOLVER, _STREAM_TEST = 1, 2, 3, 4, 5, 6

REFUSAL = ("bootstrap refused: the optimal potential is not unique here ({why}), and in that "
           "regime the limit is a supremum of Gaussian processes, so the bootstrap will not be "
           "consistent")

_NEEDS_PQ = ("solve", "clt", "bootstrap-cost", "bootstrap-potentials", "potential-clt")

EXPERIMENT_DEFAULTS = {
    "paper-3.2": {"m": 5000, "B": 10000},
    "paper-cube-mixture": {"m": 5000, "reps": 500},
    "paper-figure1": {"n_list": [5, 10, 20, 40, 80], "m": 2000, "reps": 200},
}


class Refused(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check(errors, fn, label):
    try:
        return fn()
    except (ValueError, TypeError, KeyError) as exc:
        errors.append(f"{label}: {exc}")
        return None


def _is_int(v, lo=1) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= lo


def _parse_P(obj):
    if obj == "axis_atoms":
        return axis_atoms()
    if not isinstance(obj, dict):
        raise ValueError("P must be {'points': ..., 'weights': ...} or 'axis_atoms'")
    return DiscreteMeasure.from_json(obj)


def _parse_Q_spec(obj):
    if obj == "uniform_normal":
        return uniform_normal_law()
    if obj == "cube_mixture":
        return atom_cube_mixture()
    return ContinuousSpec.from_json(obj)


def _parse_Q(obj):
    """Returns ``(Sample or None, ContinuousSpec or None, m)``."""
    if not isinstance(obj, dict):
        raise ValueError("Q must be {'rows': ...} or {'spec': ..., 'm': ...}")
    if "rows" in obj:
        s = Sample.from_json(obj)
        return s, None, s.size
    if "spec" not in obj:
        raise ValueError("Q needs 'rows' or 'spec'")
    spec = _parse_Q_spec(obj["spec"])
    m = obj.get("m")
    if not _is_int(m):
        raise ValueError("Q.m must be an integer >= 1")
    return None, spec, m


def validate(config) -> list[str]:
    """All problems found in ``config``; an empty list means it is runnable."""
    errors: list[str] = []
    if not isinstance(config, dict) or not config:
        return ["config must be a non-empty JSON object"]
    exp = config.get("experiment")
    if exp not in EXPERIMENTS:
        errors.append(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    seed = config.get("seed", 0)
    if not _is_int(seed, 0):
        errors.append("seed must be a nonnegative integer")
    if "cost" in config:
        _check(errors, lambda: CostSpec.from_json(config["cost"]), "cost")
    if "solver" in config:
        _check(errors, lambda: _solve_options(config, 0), "solver")
    for key in ("B", "reps", "m", "n", "draws"):
        if key in config and not _is_int(config[key]):
            errors.append(f"{key} must be an integer >= 1")
    if "lambda" in config:
        lam = config["lambda"]
        if not isinstance(lam, (int, float)) or not 0.0 < lam < 1.0:
            errors.append("lambda must be in (0,1)")
    if "alpha" in config:
        a = config["alpha"]
        if not isinstance(a, (int, float)) or not 0.0 < a < 1.0:
            errors.append("alpha must be in (0,1)")
    if exp in _NEEDS_PQ:
        P = Q = None
        if "P" not in config:
            errors.append("P is required")
        else:
            P = _check(errors, lambda: _parse_P(config["P"]), "P")
        if "Q" not in config:
            errors.append("Q is required")
        else:
            Q = _check(errors, lambda: _parse_Q(config["Q"]), "Q")
        if P is not None and Q is not None:
            dim = Q[0].dim if Q[0] is not None else Q[1].dim
            if dim != P.dim:
                errors.append(f"P lives in R^{P.dim} but Q in R^{dim}")
    if exp in ("clt", "bootstrap-cost"):
        regime = config.get("regime", "one_sample_Q")
        if regime not in REGIMES:
            errors.append(f"regime must be one of {', '.join(REGIMES)}")
        elif regime == "two_sample" and "lambda" not in config and "n" not in config:
            errors.append("two_sample needs lambda or n")
        if regime in ("one_sample_P", "two_sample") and exp == "bootstrap-cost" and "n" not in config:
            errors.append(f"regime {regime} needs n, the sample size behind P")
    if exp == "bootstrap-potentials":
        res = config.get("resample", "P")
        if res not in ("P", "Q"):
            errors.append("resample must be 'P' or 'Q'")
        elif res == "P" and "n" not in config:
            errors.append("resampling P needs n")
    if exp == "potential-clt" and config.get("estimator", "band") not in ("band", "fd"):
        errors.append("estimator must be 'band' or 'fd'")
    if exp in ("bound", "paper-figure1"):
        nl = config.get("n_list")
        if not isinstance(nl, list) or not nl or not all(_is_int(v) for v in nl):
            errors.append("n_list must be a non-empty list of integers >= 1")
        for key in ("m", "reps"):
            if key not in config:
                errors.append(f"{key} is required")
    return errors


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _solve_options(config, seed) -> SolveOptions:
    s = dict(config.get("solver", {}))
    unknown = set(s) - {"tol_grad", "max_iters", "multistart"}
    if unknown:
        raise ValueError(f"unknown solver options {sorted(unknown)}")
    return SolveOptions(tol_grad=float(s.get("tol_grad", 1e-3)), max_iters=int(s.get("max_iters", 500)),
                        multistart=int(s.get("multistart", 1)), rng=RandomSource(seed, _STREAM_SOLVER))


def _measures(config, seed):
    P = _parse_P(config["P"])
    Qs, spec, m = _parse_Q(config["Q"])
    if Qs is None:
        Qs = sample_continuous(spec, m, RandomSource(seed, _STREAM_Q))
    return P, Qs, spec


def _cost(config) -> CostSpec:
    return CostSpec.from_json(config.get("cost", {"kind": "power", "p": 2.0}))


def _solve(P, Qs, cost, opts):
    res = solve_dual(P, Qs, cost, opts)
    if not res.converged:
        raise SolverFailure(f"dual solve did not converge (grad_norm={res.grad_norm:.3g})")
    return res


def qq_pairs(draws):
    """Sorted draws against standard normal quantiles at ``(k - 1/2) / B``."""
    d = np.sort(np.asarray(draws, float))
    q = stats.norm.ppf((np.arange(1, len(d) + 1) - 0.5) / len(d))
    return list(zip(d.tolist(), q.tolist()))


def normality_test(draws, rng: RandomSource | None = None, n_mc: int = 2000) -> dict:
    """Kolmogorov-Smirnov test of standardised draws against N(0, 1).

    The decision uses this test.  A shape-only variant with fitted mean and
    scale (Lilliefors; its null law simulated with ``n_mc`` draws from
    ``rng``) is reported alongside to separate a shift or scale error from a
    non-Gaussian shape.
    """
    d = np.asarray(draws, float)
    res = stats.kstest(d, "norm")
    gen = (rng or RandomSource(0)).generator()
    fit = stats.goodness_of_fit(stats.norm, d, statistic="ks", n_mc_samples=n_mc, rng=gen)
    return {"ks_statistic": float(res.statistic), "p_value": float(res.pvalue),
            "reject_at_0.01": bool(res.pvalue < 0.01),
            "shape_only": {"statistic": float(fit.statistic), "p_value": float(fit.pvalue)}}


class _Writer:
    def __init__(self, out):
        self.out = out
        self.files = []
        os.makedirs(out, exist_ok=True)

    def csv(self, name, header, rows):
        path = os.path.join(self.out, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text(header, rows))
        self.files.append(name)

    def json(self, name, obj):
        write_json(os.path.join(self.out, name), obj)
        self.files.append(name)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _exp_solve(config, seed, w):
    P, Qs, _ = _measures(config, seed)
    res = _solve(P, Qs, _cost(config), _solve_options(config, seed))
    return {"solve": res.to_json()}


def _exp_clt(config, seed, w):
    P, Qs, _ = _measures(config, seed)
    cost = _cost(config)
    regime = config.get("regime", "one_sample_Q")
    n = config.get("n")
    lam = config.get("lambda")
    if regime == "two_sample" and lam is None:
        lam = Qs.size / (n + Qs.size)
    res = _solve(P, Qs, cost, _solve_options(config, seed))
    draws_n = config.get("draws", 10000)
    gp = gaussian_process_cov(Qs, P, res.candidates, cost)
    draws = sup_limit_sampler(res.candidates, gp, regime_lambda(regime, lam), draws_n,
                              RandomSource(seed, _STREAM_LIMIT))
    out = {"cost_value": res.cost_value, "n_candidates": len(res.candidates)}
    if len(res.candidates) == 1:
        out["limit"] = limit_variance(regime, None, Qs, P, res.potential, cost, lam, n, Qs.size).to_json()
    else:
        out["limit"] = {"regime": regime, "lambda": lam, "gp": gp.to_json(),
                        "candidates": [c.to_json() for c in res.candidates]}
    w.csv("limit_draws.csv", ["draw"], [[v] for v in draws])
    return out


def _refuse_if_not_unique(spec, res):
    if spec is not None and not spec.support_connected():
        raise Refused(REFUSAL.format(why="the support of Q is disconnected"))
    if len(res.candidates) > 1:
        raise Refused(REFUSAL.format(why=f"{len(res.candidates)} distinct optimal potentials found"))


def _exp_bootstrap_cost(config, seed, w):
    P, Qs, spec = _measures(config, seed)
    cost = _cost(config)
    opts = _solve_options(config, seed)
    _refuse_if_not_unique(spec, _solve(P, Qs, cost, opts))
    regime = config.get("regime", "one_sample_Q")
    boot = bootstrap_cost(regime, P, Qs, cost, opts, config.get("B", 1000),
                          RandomSource(seed, _STREAM_BOOT), config.get("n"))
    w.csv("bootstrap_draws.csv", ["draw"], [[v] for v in boot.draws])
    return {"bootstrap": boot.to_json(),
            "quantiles": {str(a): boot.quantile(a) for a in (0.025, 0.05, 0.5, 0.95, 0.975)}}


def _exp_bootstrap_potentials(config, seed, w):
    P, Qs, spec = _measures(config, seed)
    cost = _cost(config)
    opts = _solve_options(config, seed)
    _refuse_if_not_unique(spec, _solve(P, Qs, cost, opts))
    draws = bootstrap_potentials(P, Qs, cost, opts, config.get("B", 1000),
                                 RandomSource(seed, _STREAM_BOOT), config.get("resample", "P"),
                                 config.get("n"))
    w.csv("bootstrap_potentials.csv", [f"z{i + 1}" for i in range(draws.shape[1])], draws.tolist())
    return {"B": len(draws), "covariance": np.cov(draws.T).tolist()}


def _exp_potential_clt(config, seed, w):
    P, Qs, _ = _measures(config, seed)
    pc = potential_clt(P, Qs, _cost(config), _solve_options(config, seed),
                       config.get("estimator", "band"), config.get("h"))
    alpha = config.get("alpha", 0.05)
    delta = band_quantile(pc, alpha, config.get("draws", 100_000), RandomSource(seed, _STREAM_LIMIT))
    out = {"potential_clt": pc.to_json(), "alpha": alpha, "band_quantile": delta}
    if "n" in config:
        out["band_half_width"] = delta / math.sqrt(config["n"])
    return out


def _bound_table(w, name, reports):
    w.csv(name, ["N", "mean_error", "stderr", "bound_rhs"],
          [[r.N, r.empirical_error, r.stderr, r.rhs] for r in reports])


def _exp_bound(config, seed, w):
    N_list, m, reps = config["n_list"], config["m"], config["reps"]
    reports = bound_mod.mean_error_experiment(N_list, m, reps, RandomSource(seed, _STREAM_MC))
    _bound_table(w, "bound.csv", reports)
    errs = [r.empirical_error for r in reports]
    window = bound_mod.small_n_window(N_list, m)
    small = [e for N, e in zip(N_list, errs) if N in window]
    return {
        "m": m, "reps": reps,
        "rows": [r.to_json() for r in reports],
        "all_below_bound": bool(all(r.empirical_error <= r.rhs for r in reports)),
        "slope_all": bound_mod.loglog_slope(N_list, errs) if len(N_list) > 1 else None,
        "small_n_window": window,
        "slope_small_n": bound_mod.loglog_slope(window, small) if len(window) > 1 else None,
    }


def run_axis_bootstrap(m: int, B: int, seed: int, opts: SolveOptions | None = None):
    """Bootstrap of the standardised cost for the seven atoms against U(-1,1) x N(0,1)^2."""
    P = axis_atoms()
    cost = CostSpec(2.0)
    Qs = sample_continuous(uniform_normal_law(), m, RandomSource(seed, _STREAM_Q))
    opts = opts or SolveOptions(rng=RandomSource(seed, _STREAM_SOLVER))
    res = _solve(P, Qs, cost, opts)
    sd = math.sqrt(sigma_Q_var(Qs, P, res.potential, cost))
    boot = bootstrap_cost("one_sample_Q", P, Qs, cost, opts, B, RandomSource(seed, _STREAM_BOOT))
    return res, sd, boot, boot.draws / sd


def run_cube_mixture(m: int, reps: int, seed: int, opts: SolveOptions | None = None):
    """Monte-Carlo law of the standardised cost when ``Q`` has disconnected support.

    The population cost is known exactly: every cube is sent to its centre,
    so ``T = d h^2 / 3``.  Returns ``(T, standardised, raw, costs)``.
    """
    spec = atom_cube_mixture()
    T = spec.dim * spec.half_width**2 / 3.0
    try:
        costs, var = monte_carlo_costs(axis_atoms(), spec, m, reps, CostSpec(2.0),
                                       opts or SolveOptions(rng=RandomSource(seed, _STREAM_SOLVER)),
                                       RandomSource(seed, _STREAM_MC))
    except BootstrapError as exc:
        raise SolverFailure(str(exc)) from exc
    raw = math.sqrt(m) * (costs - T)
    return T, raw / np.sqrt(var), raw, costs


def _exp_axis_bootstrap(config, seed, w):
    m, B = config["m"], config["B"]
    res, sd, boot, std = run_axis_bootstrap(m, B, seed, _solve_options(config, seed))
    w.csv("exp3_2_draws.csv", ["raw_draw", "standardized_draw"],
          [[a, b] for a, b in zip(boot.draws.tolist(), std.tolist())])
    w.csv("exp3_2_qq.csv", ["standardized_draw", "normal_quantile"], qq_pairs(std))
    return {"m": m, "B": B, "cost_value": res.cost_value, "sigma": sd,
            "excluded": boot.excluded, "normality": normality_test(std, RandomSource(seed, _STREAM_TEST))}


def _exp_cube_mixture(config, seed, w):
    m, reps = config["m"], config["reps"]
    T, std, raw, vals = run_cube_mixture(m, reps, seed, _solve_options(config, seed))
    w.csv("cube_mixture_draws.csv", ["raw_draw", "standardized_draw", "cost_value"],
          [[a, b, c] for a, b, c in zip(raw.tolist(), std.tolist(), vals.tolist())])
    w.csv("cube_mixture_qq.csv", ["standardized_draw", "normal_quantile"], qq_pairs(std))
    return {"m": m, "reps": reps, "population_cost": T, "replications": len(std),
            "mean_standardized": float(std.mean()),
            "normality": normality_test(std, RandomSource(seed, _STREAM_TEST))}


_RUNNERS = {
    "solve": _exp_solve, "clt": _exp_clt, "bootstrap-cost": _exp_bootstrap_cost,
    "bootstrap-potentials": _exp_bootstrap_potentials, "potential-clt": _exp_potential_clt,
    "bound": _exp_bound, "paper-3.2": _exp_axis_bootstrap, "paper-cube-mixture": _exp_cube_mixture,
    "paper-figure1": _exp_bound,
}


def _print_summary(results, stream):
    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k, v in obj.items():
                walk(f"{prefix}{k}.", v)
        elif isinstance(obj, (list, tuple)) and len(obj) > 8:
            print(f"{prefix[:-1]:<40} [{len(obj)} values]", file=stream)
        elif isinstance(obj, (list, tuple)) and any(isinstance(v, dict) for v in obj):
            for k, v in enumerate(obj):
                walk(f"{prefix}{k}.", v)
        else:
            # full precision lives in summary.json
            val = format(obj, ".6g") if isinstance(obj, float) else obj
            print(f"{prefix[:-1]:<40} {val}", file=stream)
    walk("", results)


def run(config: dict, out: str | None = None, stream=None) -> int:
    """Validate and run one experiment; returns the process exit status."""
    stream = stream or sys.stdout
    config = dict(config)
    exp = config.get("experiment")
    for key, val in EXPERIMENT_DEFAULTS.get(exp, {}).items():
        config.setdefault(key, val)
    errors = validate(config)
    if errors:
        for e in errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    seed = config.get("seed", 0)
    out = out or config.get("out") or "."
    w = _Writer(out)
    try:
        results = _RUNNERS[exp](config, seed, w)
    except Refused as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_REFUSED
    except (SolverFailure, BootstrapError, SingularHessianError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    summary = {"schema_version": SCHEMA_VERSION, "experiment": exp, "seed": seed,
               "results": results, "files": w.files + ["summary.json"]}
    w.json("summary.json", summary)
    _print_summary(results, stream)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdot", description="Semidiscrete optimal transport experiments.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--tol-grad", type=float)
    ap.add_argument("--max-iters", type=int)
    ap.add_argument("--multistart", type=int)
    ap.add_argument("--n-list", help="comma-separated atom counts, e.g. 5,10,20")
    ap.add_argument("--m", type=int)
    ap.add_argument("--n", type=int)
    ap.add_argument("--reps", type=int)
    ap.add_argument("--B", type=int)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    config = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not isinstance(config, dict):
            print("config error: config must be a JSON object", file=sys.stderr)
            return EXIT_CONFIG
    config["experiment"] = args.experiment
    if args.seed is not None:
        config["seed"] = args.seed
    solver = dict(config.get("solver", {}))
    for key in ("tol_grad", "max_iters", "multistart"):
        if getattr(args, key) is not None:
            solver[key] = getattr(args, key)
    if solver:
        config["solver"] = solver
    if args.n_list:
        try:
            config["n_list"] = [int(v) for v in args.n_list.split(",")]
        except ValueError:
            print("config error: --n-list must be comma-separated integers", file=sys.stderr)
            return EXIT_CONFIG
    for key in ("m", "n", "reps", "B"):
        if getattr(args, key) is not None:
            config[key] = getattr(args, key)
    return run(config, args.out)


if __name__ == "__main__":
    sys.exit(main())

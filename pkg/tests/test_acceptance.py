"""Acceptance gate.

Each criterion is run once at its stated size and tolerance with a fixed
master seed (0) under ``SDOT_THREADS=1``; the last criterion reruns the other
seven under ``SDOT_THREADS=8`` and compares the serialised outputs byte for
byte.  One PASS/FAIL line per criterion is printed at the end of the pytest
run, or directly when this file is executed as a script.
"""
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from sdot import cli
from sdot.clt import sigma_p, sigma_Q_var
from sdot.cost import CostSpec, cost_matrix
from sdot.inference import (bootstrap_potentials, hessian_band, hessian_fd, monte_carlo_costs,
                            potential_clt, score_cov)
from sdot.measures import ContinuousSpec, DiscreteMeasure, RandomSource, Sample, sample_continuous
from sdot.oracle import exact_lp_small
from sdot.semidual import solve_dual, to_gauge
from sdot.serialize import dumps

SEED = 0
SQ = CostSpec(2.0)
TWO = DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5])
U11 = ContinuousSpec.uniform_box([-1.0], [1.0])

# filled as criteria finish; printed by conftest.pytest_terminal_summary
RESULTS: dict[int, str] = {}


class Outcome:
    def __init__(self, number, title, passed, detail, artifact):
        self.number, self.title, self.passed, self.detail = number, title, passed, detail
        self.artifact = artifact  # bytes compared across worker counts

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.title}: {self.detail}"


def _artifact(obj) -> bytes:
    return dumps(obj).encode()


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def criterion_1():
    gen = RandomSource(SEED, 101).generator()
    t0 = time.perf_counter()
    worst, values = 0.0, []
    for _ in range(200):
        N, m, d = int(gen.integers(1, 7)), int(gen.integers(1, 9)), int(gen.integers(1, 4))
        spec = CostSpec(float(gen.choice([1.0, 2.0])))
        P = DiscreteMeasure(gen.normal(size=(N, d)), gen.dirichlet(np.ones(N)))
        Y = gen.normal(size=(m, d))
        q = gen.dirichlet(np.ones(m))
        got = solve_dual(P, Sample(Y), spec, weights=q).cost_value
        ref = exact_lp_small(P.weights, q, cost_matrix(spec, P.points, Y))[0]
        worst = max(worst, abs(got - ref))
        values.append(got)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-7 and dt < 10.0
    return Outcome(1, "oracle equivalence on 200 instances", ok,
                   f"max |dual - LP| = {worst:.2e} (tol 1e-7), {dt:.1f} s (limit 10 s)",
                   _artifact({"values": values, "worst": worst}))


def criterion_2():
    t0 = time.perf_counter()
    Qs = sample_continuous(U11, 10**5, RandomSource(SEED, 102))
    res = solve_dual(TWO, Qs, SQ)
    z = to_gauge(res.potential.z, "mean_zero")
    var = sigma_Q_var(Qs, TWO, z, SQ)
    h_fd = hessian_fd(TWO, Qs, z, SQ, step=0.05)[0, 1]
    h_band = hessian_band(TWO, Qs, z, SQ, h=0.05)[0, 1]
    dt = time.perf_counter() - t0
    errs = [abs(res.cost_value - 1 / 3), abs(var - 4 / 45), abs(h_fd - 1 / 8), abs(h_band - 1 / 8)]
    ok = errs[0] <= 0.01 and errs[1] <= 0.005 and max(errs[2:]) <= 0.02 and dt < 30.0
    return Outcome(2, "two-atom analytic benchmark", ok,
                   f"T = {res.cost_value:.5f} (1/3 +- 0.01), var = {var:.5f} (4/45 +- 0.005), "
                   f"H12 fd = {h_fd:.4f}, band = {h_band:.4f} (1/8 +- 0.02), {dt:.1f} s (limit 30 s)",
                   _artifact({"T": res.cost_value, "var": var, "h_fd": h_fd, "h_band": h_band}))


def criterion_3():
    t0 = time.perf_counter()
    m = 4000
    costs, _ = monte_carlo_costs(TWO, U11, m, 500, SQ, rng=RandomSource(SEED, 103))
    std = math.sqrt(m) * (costs - 1 / 3) / math.sqrt(4 / 45)
    ks = stats.kstest(std, "norm")
    dt = time.perf_counter() - t0
    ok = ks.pvalue >= 0.01 and dt < 300.0
    return Outcome(3, "cost CLT, 500 replications at m=4000", ok,
                   f"KS = {ks.statistic:.4f}, p = {ks.pvalue:.3f} (reject below 0.01), "
                   f"{dt:.1f} s (limit 300 s)", _artifact({"costs": costs}))


_POTENTIALS = {}


def _potential_draws():
    """500 replications of sqrt(n) (z_n - z) with n = 4000 draws from the true P.

    A fixed sample of 10^5 points stands in for Q; it also defines the
    reference potential and the sandwich covariance.
    """
    key = os.environ.get("SDOT_THREADS")
    if key not in _POTENTIALS:
        Qs = sample_continuous(U11, 10**5, RandomSource(SEED, 104))
        pc = potential_clt(TWO, Qs, SQ, estimator="band", h=0.05)
        draws = bootstrap_potentials(TWO, Qs, SQ, B=500, rng=RandomSource(SEED, 105), resample="P", n=4000)
        _POTENTIALS[key] = (pc, draws)
    return _POTENTIALS[key]


def criterion_4():
    t0 = time.perf_counter()
    pc, draws = _potential_draws()
    emp = np.cov(draws.T)
    rel = np.linalg.norm(emp - pc.sandwich, 2) / np.linalg.norm(pc.sandwich, 2)
    # the score covariance at exact masses p is the multinomial covariance
    p = TWO.weights
    ident = np.abs(score_cov(p, p) - sigma_p(p).matrix).max()
    dt = time.perf_counter() - t0
    ok = rel <= 0.25 and ident <= 1e-12 and dt < 300.0
    return Outcome(4, "potentials CLT against the sandwich", ok,
                   f"op-norm rel. error = {rel:.3f} (limit 0.25), |A - Sigma(p)| = {ident:.1e} "
                   f"(limit 1e-12), {dt:.1f} s (limit 300 s)",
                   _artifact({"sandwich": pc.sandwich, "empirical": emp}))


def criterion_5():
    pc, draws = _potential_draws()
    n, alpha = 4000, 0.05
    delta = pc.band_quantile(alpha, n, draws=100_000, rng=RandomSource(SEED, 106))
    y = np.linspace(-1.0, 1.0, 4001)
    C = cost_matrix(SQ, TWO.points, y[:, None])
    phi = (C - pc.z_tilde[:, None]).min(axis=0)
    covered = []
    for d in draws:
        phi_n = (C - (pc.z_tilde + d / math.sqrt(n))[:, None]).min(axis=0)
        covered.append(bool(np.abs(phi_n - phi).max() <= delta))
    rate = float(np.mean(covered))
    ok = abs(rate - 0.95) <= 0.03
    return Outcome(5, "uniform 95% band coverage", ok,
                   f"coverage = {rate:.3f} over {len(covered)} replications (0.95 +- 0.03), "
                   f"half-width = {delta:.4f}", _artifact({"half_width": delta, "covered": covered}))


def criterion_6():
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as out:
        code = cli.run({"experiment": "paper-figure1", "seed": SEED}, out, stream=open(os.devnull, "w"))
        data = (Path(out) / "bound.csv").read_bytes()
        res = json.loads((Path(out) / "summary.json").read_text())["results"]
    dt = time.perf_counter() - t0
    slope = res["slope_small_n"]
    ok = code == 0 and res["all_below_bound"] and 0.3 <= slope <= 0.7 and dt < 180.0
    worst = max(r["empirical_error"] / r["rhs"] for r in res["rows"])
    return Outcome(6, "mean-error bound and small-N slope", ok,
                   f"bound holds on every cell: {res['all_below_bound']} (max error/rhs = {worst:.1e}), "
                   f"slope over N in {res['small_n_window']} = {slope:.3f} (need [0.3, 0.7]), "
                   f"{dt:.1f} s (limit 180 s)", data)


def _cli_files(exp):
    with tempfile.TemporaryDirectory() as out:
        t0 = time.perf_counter()
        code = cli.run({"experiment": exp, "seed": SEED}, out, stream=open(os.devnull, "w"))
        dt = time.perf_counter() - t0
        summary = json.loads((Path(out) / "summary.json").read_text())
        blob = b"".join((Path(out) / f).read_bytes() for f in sorted(summary["files"]))
    return code, dt, summary["results"], blob


def criterion_7():
    code_a, dt_a, ra, blob_a = _cli_files("paper-3.2")
    code_b, dt_b, rb, blob_b = _cli_files("paper-cube-mixture")
    na, nb = ra["normality"], rb["normality"]
    ok = (code_a == 0 and code_b == 0 and not na["reject_at_0.01"] and nb["reject_at_0.01"]
          and dt_a < 600.0 and dt_b < 600.0)
    return Outcome(7, "bootstrap normality at full scale", ok,
                   f"seven atoms (m=5000, B=10000): KS vs N(0,1) p = {na['p_value']:.3g} (must not reject; "
                   f"shape-only p = {na['shape_only']['p_value']:.3g}), {dt_a:.0f} s; "
                   f"cube mixture ({rb['replications']} reps): KS vs N(0,1) p = {nb['p_value']:.3g} "
                   f"(must reject; shape-only p = {nb['shape_only']['p_value']:.3g}), "
                   f"{dt_b:.0f} s (limit 600 s each)", blob_a + blob_b)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7]


def _with_threads(n, fn):
    old = os.environ.get("SDOT_THREADS")
    os.environ["SDOT_THREADS"] = str(n)
    try:
        return fn()
    finally:
        if old is None:
            del os.environ["SDOT_THREADS"]
        else:
            os.environ["SDOT_THREADS"] = old


_CACHE: dict[int, Outcome] = {}


def _outcome(k: int) -> Outcome:
    if k not in _CACHE:
        _CACHE[k] = _with_threads(1, CRITERIA[k - 1])
    return _CACHE[k]


def criterion_8():
    mismatched = []
    for k in range(1, 8):
        again = _with_threads(8, CRITERIA[k - 1])
        if again.artifact != _outcome(k).artifact:
            mismatched.append(k)
    ok = not mismatched
    detail = "outputs of criteria 1-7 byte-identical under SDOT_THREADS=1 and 8" if ok else \
        f"outputs differ for criteria {mismatched}"
    return Outcome(8, "determinism across worker counts", ok, detail, b"")


# ---------------------------------------------------------------------------
# pytest entry points
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("k", range(1, 9))
def test_criterion(k):
    out = _outcome(k) if k < 8 else criterion_8()
    RESULTS[k] = out.line()
    print(out.line())
    assert out.passed, out.line()


if __name__ == "__main__":
    lines = [(_outcome(k) if k < 8 else criterion_8()) for k in range(1, 9)]
    for o in lines:
        print(o.line(), flush=True)
    sys.exit(0 if all(o.passed for o in lines) else 1)

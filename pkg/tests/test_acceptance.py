"""Acceptance criteria, one PASS/FAIL line each.

Run through pytest (lines appear in the "acceptance criteria" summary
section) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import sys
import time
from pathlib import Path

import mpmath as mp
import numpy as np
import pytest

from carstat.cli import _read_config_text, parse_config
from carstat.dgp import ModelParams, StrataSpec, generate, observe
from carstat.distributions import chisq_quantile, normal_quantile
from carstat.montecarlo import ScenarioConfig, emit_table, run_scenario
from carstat.randomization import DesignSpec, assign_codes, empirical_q, max_abs_prefix_imbalance
from carstat.rng import Stream
from carstat.testing import run_t_test, run_wald_test, smw_inverse_apply
from carstat.trial_data import ADDITIONAL, STRATIFICATION

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []

TIME_LIMIT = 300.0
NULL_TOL, POWER_TOL = 0.8, 2.0

# (usual, mod, strat) in percent, tolerance
TARGETS = {
    1: ((2.2, 5.4, 5.3), NULL_TOL),
    2: ((42.2, 49.2, 56.6), POWER_TOL),
    3: ((3.6, 5.1, 4.9), NULL_TOL),
    4: ((1.6, 5.7, 5.7), NULL_TOL),
    5: ((46.8, 47.1, 70.6), POWER_TOL),
}


@functools.cache
def cells() -> dict:
    """Run the bundled acceptance cells once; keyed by criterion number."""
    out = {}
    for k, cfg in enumerate(parse_config(_read_config_text("acceptance")), start=1):
        t0 = time.perf_counter()
        rep = run_scenario(cfg, 1)
        out[k] = (rep, time.perf_counter() - t0)
    return out


@functools.cache
def min_cell():
    cfg = ScenarioConfig(ModelParams("B1", "null"), StrataSpec("XW"), DesignSpec("MIN"),
                         n=800, reps=10_000, seed=42, tests=("t_usual", "t_strat"))
    return run_scenario(cfg, 1)


def _pcts(rep):
    return [rep.percent(t) for t in rep.config.tests]


def _fmt(vals):
    return "/".join(f"{v:.2f}" for v in vals)


def table_cell(k: int):
    rep, secs = cells()[k]
    target, tol = TARGETS[k]
    got = _pcts(rep)
    ok = all(abs(g - t) <= tol for g, t in zip(got, target)) and secs < TIME_LIMIT
    detail = f"got {_fmt(got)} target {_fmt(target)} tol {tol} time {secs:.0f}s"
    if k == 2:
        u, m, s = got
        gaps = s - m >= 3.0 and m - u >= 3.0
        ok &= gaps
        detail += f" ordering gaps {s - m:.2f},{m - u:.2f}"
    if k == 3:
        ok &= got[0] < 4.5
        detail += f" usual<4.5 {got[0] < 4.5}"
    return ok, detail


def criterion_6():
    parts, ok = [], True
    for k in (1, 3, 4):
        rep = cells()[k][0]
        for t in ("t_mod", "t_strat"):
            p = rep.percent(t)
            ok &= 3.5 <= p <= 6.5
            parts.append(f"c{k}:{t}={p:.2f}")
    p = min_cell().percent("t_strat")
    ok &= 3.5 <= p <= 6.5
    parts.append(f"MIN:t_strat={p:.2f}")
    return ok, " ".join(parts)


def _trial(model, strata, design, n, seed, pi=0.5):
    spec = DesignSpec(design, pi=pi)
    pop = generate(ModelParams(model, "alternative"), StrataSpec(strata), n, Stream(seed, 0))
    arms = assign_codes(spec, pop.s, len(pop.strata), Stream(seed, 1))
    return observe(pop, arms, pi), spec


def _normal_equations_delta(ds):
    L = len(ds.levels)
    cols = [np.ones(ds.n), ds.a.astype(float)]
    for k in range(1, L):
        ind = (ds.x == k).astype(float)
        cols += [ind, ind * ds.a]
    X = np.column_stack(cols)
    beta = np.linalg.solve(X.T @ X, X.T @ ds.y)
    return beta[3::2]


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def criterion_7():
    worst = {"ols": 0.0, "wald_t2": 0.0, "smw": 0.0, "reduction": 0.0, "quantile": 0.0}
    for seed in range(5):
        for model, design in (("B1", "SBR"), ("C1", "SR"), ("B2", "SBCD")):
            ds, spec = _trial(model, "W", design, 800, seed)
            for variant in ("usual", "mod", "strat"):
                tau = run_wald_test(ds, variant, spec).tau_used
                if variant != "strat":
                    worst["ols"] = max(worst["ols"], _rel(tau.contrasts, _normal_equations_delta(ds)))
            if len(ds.levels) == 2:
                for variant in ("usual", "mod", "strat"):
                    t = run_t_test(ds, variant, ADDITIONAL, spec).statistic
                    w = run_wald_test(ds, variant, spec).statistic
                    worst["wald_t2"] = max(worst["wald_t2"], _rel(w, t * t))
        ds, spec = _trial("B1", "XW", "SBR", 800, seed)
        for variant in ("mod", "strat"):
            a = run_t_test(ds, variant, ADDITIONAL, spec).statistic
            b = run_t_test(ds, variant, STRATIFICATION, spec).statistic
            worst["reduction"] = max(worst["reduction"], _rel(a, b))
        ds, spec = _trial("C1", "XW", "SR", 800, seed)
        for variant in ("mod", "strat"):
            a = run_wald_test(ds, variant, spec, covariate_kind=ADDITIONAL).statistic
            b = run_wald_test(ds, variant, spec, covariate_kind=STRATIFICATION).statistic
            worst["reduction"] = max(worst["reduction"], _rel(a, b))
        rng = np.random.default_rng(seed)
        d, c, v = rng.uniform(0.1, 5.0, 8), rng.uniform(0.0, 3.0), rng.normal(size=8)
        dense = np.linalg.solve(np.diag(d) + c * np.ones((8, 8)), v)
        worst["smw"] = max(worst["smw"], _rel(smw_inverse_apply(d, c, v), dense))
    mp.mp.dps = 40
    for p in (0.5, 0.9, 0.975, 0.995, 1e-6):
        oracle = float(mp.sqrt(2) * mp.erfinv(2 * mp.mpf(p) - 1))
        worst["quantile"] = max(worst["quantile"], abs(normal_quantile(p) - oracle))
    for k in (1, 2, 3, 5):
        got = chisq_quantile(0.95, k)
        oracle = float(mp.findroot(lambda x: mp.gammainc(k / 2, 0, x / 2, regularized=True) - 0.95, got))
        worst["quantile"] = max(worst["quantile"], abs(got - oracle))
    z = normal_quantile(0.975)
    limits = {"ols": 1e-8, "wald_t2": 1e-10, "smw": 1e-10, "reduction": 1e-10, "quantile": 1e-6}
    ok = all(worst[k] <= limits[k] for k in limits) and abs(z - 1.9599640) <= 1e-6
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" z975={z:.7f}"
    return ok, detail


def criterion_8(runs: int = 1000, n: int = 3200):
    ok = True
    block_ok = bound_ok = True
    q_sbcd, q_sr = [], []
    strata = StrataSpec("XW")
    params = ModelParams("B1", "null")
    for pi in (0.5, 2 / 3):
        sbr = DesignSpec("SBR", pi=pi, block_size=6)
        sr, sbcd = DesignSpec("SR", pi=pi), DesignSpec("SBCD", pi=pi)
        d_sr, d_sbcd, n_s = [], [], []
        for r in range(runs):
            pop = generate(params, strata, n, Stream(8, r))
            codes, ns = pop.s, len(pop.strata)
            arms = assign_codes(sbr, codes, ns, Stream(8, runs + r))
            for j in range(ns):
                seq = arms[codes == j]
                full = len(seq) // 6 * 6
                block_ok &= bool(np.all(seq[:full].reshape(-1, 6).sum(axis=1) == sbr.block_treated))
            bound_ok &= bool(np.all(max_abs_prefix_imbalance(arms, codes, ns, pi) <= 6 * max(pi, 1 - pi) + 1e-9))
            counts = np.bincount(codes, minlength=ns)
            n_s.append(counts)
            for spec, sink in ((sr, d_sr), (sbcd, d_sbcd)):
                a = assign_codes(spec, codes, ns, Stream(8, (2 if spec is sr else 3) * runs + r))
                sink.append(np.bincount(codes, weights=a - pi, minlength=ns))
        q_sr.append((pi, empirical_q(np.array(d_sr), np.array(n_s))))
        q_sbcd.append((pi, empirical_q(np.array(d_sbcd), np.array(n_s))))
    ok &= block_ok and bound_ok
    parts = [f"sbr_blocks={block_ok} sbr_bound={bound_ok}"]
    for pi, q in q_sbcd:
        ok &= bool(np.all(q <= 0.02))
        parts.append(f"sbcd(pi={pi:.3f}) max_q={q.max():.4f}")
    for pi, q in q_sr:
        target = pi * (1 - pi)
        ok &= bool(np.all(np.abs(q - target) <= 0.02))
        parts.append(f"sr(pi={pi:.3f}) q={','.join(f'{v:.3f}' for v in q)} target={target:.3f}")
    return ok, " ".join(parts)


def criterion_9():
    rep1 = cells()[1][0]
    rep3 = run_scenario(rep1.config, 3)
    a, b = emit_table([rep1]), emit_table([rep3])
    return a == b, f"workers 1 vs 3 identical={a == b} ({len(a.encode())} bytes)"


CRITERIA = {
    1: ("null cell B1 XW SBR pi=1/2", functools.partial(table_cell, 1)),
    2: ("power cell B1 W SBR", functools.partial(table_cell, 2)),
    3: ("null cell B2 W SBCD", functools.partial(table_cell, 3)),
    4: ("null cell B1 XW SBR pi=2/3", functools.partial(table_cell, 4)),
    5: ("categorical power cell C1 W SR", functools.partial(table_cell, 5)),
    6: ("validity of modified and stratified tests", criterion_6),
    7: ("oracle equivalences", criterion_7),
    8: ("randomizer invariants", criterion_8),
    9: ("determinism across worker counts", criterion_9),
}


def evaluate(k: int) -> tuple[bool, str]:
    name, fn = CRITERIA[k]
    ok, detail = fn()
    line = f"{'PASS' if ok else 'FAIL'} criterion {k} ({name}): {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok, line


@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_acceptance_criterion(k):
    ok, line = evaluate(k)
    assert ok, line


if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent))
    results = [evaluate(k)[0] for k in sorted(CRITERIA)]
    sys.exit(0 if all(results) else 1)

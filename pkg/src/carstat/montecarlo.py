"""Deterministic Monte Carlo driver for rejection-probability tables.

Replication ``r`` of a scenario draws everything from the stream
``(seed, r)``: first the population, then the assignment uniforms. Work is
split into contiguous chunks of replications and the per-test integer
counts are summed, so the result does not depend on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dgp import ModelParams, StrataSpec, generate, observe
from .errors import CarstatError, ConfigInvalidError
from .randomization import DesignSpec, assign_codes
from .rng import Stream
from .testing import TEST_IDS, run_test
from .trial_data import ADDITIONAL, STRATIFICATION

FLAT_FIELDS = ("model", "hypothesis", "x_stratified", "strata", "design", "test",
               "n", "reps", "reject_pct", "mc_se", "seed", "pi", "rejections", "errors")

DESIGN_ORDER = ("SR", "SBR", "SBCD", "MIN")
VARIANT_ORDER = ("usual", "mod", "strat")


@dataclass(frozen=True)
class ScenarioConfig:
    """One table cell. ``tests`` defaults to the t-tests for a binary
    covariate and the Wald tests otherwise."""

    params: ModelParams
    strata: StrataSpec
    design: DesignSpec
    n: int = 800
    reps: int = 10_000
    alpha: float = 0.05
    seed: int = 0
    tests: tuple = ()
    covariate_kind: str | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigInvalidError("n must be a positive integer")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ConfigInvalidError("reps must be a positive integer")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigInvalidError("alpha must lie in (0, 1)")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigInvalidError("seed must be a non-negative integer")
        kind = STRATIFICATION if self.strata.uses_x else ADDITIONAL
        if self.covariate_kind is not None and self.covariate_kind != kind:
            raise ConfigInvalidError(
                f"covariate_kind {self.covariate_kind!r} contradicts strata {self.strata.covariates!r}"
            )
        tests = tuple(self.tests)
        if not tests:
            form = "t" if len(self.params.levels) == 2 else "wald"
            tests = tuple(f"{form}_{v}" for v in VARIANT_ORDER)
        for t in tests:
            if t not in TEST_IDS:
                raise ConfigInvalidError(f"unknown test {t!r}")
        if len(self.params.levels) > 2 and any(t.startswith("t_") for t in tests):
            raise ConfigInvalidError("t-tests need a binary covariate; use Wald tests")
        object.__setattr__(self, "covariate_kind", kind)
        object.__setattr__(self, "tests", tests)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def x_stratified(self) -> bool:
        return self.covariate_kind == STRATIFICATION

    def to_dict(self) -> dict:
        d = self.design
        return {
            "model": self.params.model_id,
            "hypothesis": self.params.hypothesis,
            "params": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in sorted(self.params.overrides().items())},
            "strata": self.strata.covariates,
            "design": d.method,
            "pi": d.pi,
            "block_size": d.block_size,
            "coin_p": d.coin_p,
            "n": self.n,
            "reps": self.reps,
            "alpha": self.alpha,
            "seed": self.seed,
            "tests": list(self.tests),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TestCount:
    rejections: int
    valid: int
    errors: int

    __test__ = False

    @property
    def proportion(self) -> float:
        return self.rejections / self.valid if self.valid else math.nan

    @property
    def mc_se(self) -> float:
        p = self.proportion
        return math.sqrt(p * (1.0 - p) / self.valid) if self.valid else math.nan


@dataclass(frozen=True)
class RejectionReport:
    config: ScenarioConfig
    counts: Mapping[str, TestCount] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def proportion(self, test: str) -> float:
        return self.counts[test].proportion

    def percent(self, test: str) -> float:
        return 100.0 * self.proportion(test)


def _chunk_counts(cfg: ScenarioConfig, start: int, stop: int, reject_fn=None) -> np.ndarray:
    """Integer (rejections, errors) per test for replications [start, stop)."""
    tests = cfg.tests
    out = np.zeros((len(tests), 2), dtype=np.int64)
    spec = cfg.design
    n_strata = len(cfg.strata.labels(len(cfg.params.levels)))
    for r in range(start, stop):
        stream = Stream(cfg.seed, r)
        pop = generate(cfg.params, cfg.strata, cfg.n, stream)
        margins = pop.margins if spec.method == "MIN" else None
        arms = assign_codes(spec, pop.s, n_strata, stream, margins)
        ds = observe(pop, arms, spec.pi)
        for i, t in enumerate(tests):
            try:
                if reject_fn is not None:
                    rej = reject_fn(ds, t)
                else:
                    rej = run_test(ds, t, spec, cfg.covariate_kind, cfg.alpha).reject
            except CarstatError:
                out[i, 1] += 1
                continue
            out[i, 0] += bool(rej)
    return out


def _chunks(reps: int, workers: int) -> list[tuple[int, int]]:
    k = max(1, min(reps, 4 * workers))
    edges = np.linspace(0, reps, k + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_scenario(cfg: ScenarioConfig, worker_budget: int = 1, reject_fn=None) -> RejectionReport:
    """Run every replication of ``cfg`` and count rejections per test.

    ``reject_fn(ds, test_id) -> bool`` replaces the real tests (used for
    stubs); it must be picklable when ``worker_budget > 1``.
    """
    if int(worker_budget) != worker_budget or worker_budget < 1:
        raise ConfigInvalidError("worker_budget must be a positive integer")
    worker_budget = int(worker_budget)
    if worker_budget == 1:
        total = _chunk_counts(cfg, 0, cfg.reps, reject_fn)
    else:
        parts = _chunks(cfg.reps, worker_budget)
        with ProcessPoolExecutor(max_workers=worker_budget) as pool:
            futures = [pool.submit(_chunk_counts, cfg, a, b, reject_fn) for a, b in parts]
            total = sum((f.result() for f in futures), np.zeros((len(cfg.tests), 2), dtype=np.int64))
    counts = {
        t: TestCount(int(total[i, 0]), cfg.reps - int(total[i, 1]), int(total[i, 1]))
        for i, t in enumerate(cfg.tests)
    }
    return RejectionReport(cfg, counts)


def default_workers() -> int:
    raw = os.environ.get("CARSTAT_WORKERS")
    if raw is None:
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise ConfigInvalidError(f"CARSTAT_WORKERS must be a positive integer, got {raw!r}") from None
    if w < 1:
        raise ConfigInvalidError("CARSTAT_WORKERS must be a positive integer")
    return w


# -- formatting ------------------------------------------------------------

def round_half_away(value: Fraction | float, digits: int = 1) -> str:
    """Decimal string rounded half away from zero."""
    q = Fraction(value) * 10 ** digits
    sign = -1 if q < 0 else 1
    k = math.floor(abs(q) + Fraction(1, 2)) * sign
    if digits == 0:
        return str(k)
    s = f"{abs(k):0{digits + 1}d}"
    out = f"{s[:-digits]}.{s[-digits:]}"
    return ("-" if k < 0 else "") + out


def _percent_exact(c: TestCount) -> Fraction | None:
    return Fraction(100 * c.rejections, c.valid) if c.valid else None


def _pct_text(c: TestCount) -> str:
    pct = _percent_exact(c)
    return "NA" if pct is None else round_half_away(pct, 1)


def _g6(x: float) -> str:
    return "NA" if math.isnan(x) else f"{x:.6g}"


def flat_rows(reports: Iterable[RejectionReport]) -> list[dict]:
    rows = []
    for rep in reports:
        cfg = rep.config
        for t in cfg.tests:
            c = rep.counts[t]
            rows.append({
                "model": cfg.params.model_id,
                "hypothesis": cfg.params.hypothesis,
                "x_stratified": "yes" if cfg.x_stratified else "no",
                "strata": cfg.strata.covariates,
                "design": cfg.design.method,
                "test": t,
                "n": cfg.n,
                "reps": cfg.reps,
                "reject_pct": _pct_text(c),
                "mc_se": _g6(100.0 * c.mc_se),
                "seed": cfg.seed,
                "pi": _g6(cfg.design.pi),
                "rejections": c.rejections,
                "errors": c.errors,
            })
    return rows


def grouped_rows(reports: Sequence[RejectionReport]) -> tuple[list[str], list[dict]]:
    """Rows keyed by (hypothesis, model, X stratified, strata, pi); one
    ``usual / mod / strat`` column per design."""
    groups: dict[tuple, dict] = {}
    designs = set()
    for rep in reports:
        cfg = rep.config
        key = (cfg.params.hypothesis, cfg.params.model_id,
               "yes" if cfg.x_stratified else "no", cfg.strata.covariates, _g6(cfg.design.pi))
        by_variant = {t.split("_", 1)[1]: rep.counts[t] for t in cfg.tests}
        cell = " / ".join(_pct_text(by_variant[v]) if v in by_variant else "-" for v in VARIANT_ORDER)
        groups.setdefault(key, {})[cfg.design.method] = cell
        designs.add(cfg.design.method)
    cols = [d for d in DESIGN_ORDER if d in designs]
    header = ["hypothesis", "model", "x_stratified", "strata", "pi"] + cols
    rows = []
    for key, cells in groups.items():
        row = dict(zip(header[:5], key))
        for d in cols:
            row[d] = cells.get(d, "")
        rows.append(row)
    return header, rows


def _render(header: list[str], rows: list[dict], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(str(r[h]) for h in header) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_table(reports: Sequence[RejectionReport], layout: str = "flat", fmt: str = "csv") -> str:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    if layout == "flat":
        return _render(list(FLAT_FIELDS), flat_rows(reports), fmt)
    if layout == "paper":
        header, rows = grouped_rows(reports)
        return _render(header, rows, fmt)
    raise ValueError(f"unknown layout {layout!r}")


def parse_flat_csv(text: str) -> list[dict]:
    """Read back a flat CSV table with typed columns."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if list(row) != list(FLAT_FIELDS):
            raise ValueError("unexpected flat table columns")
        for k in ("n", "reps", "seed", "rejections", "errors"):
            row[k] = int(row[k])
        for k in ("reject_pct", "mc_se", "pi"):
            row[k] = float(row[k]) if row[k] != "NA" else math.nan
        row["x_stratified"] = row["x_stratified"] == "yes"
        out.append(row)
    return out

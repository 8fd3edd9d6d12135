import json
import math
from fractions import Fraction

import pytest

from carstat.dgp import ModelParams, StrataSpec
from carstat.errors import ConfigInvalidError
from carstat.montecarlo import (
    FLAT_FIELDS, RejectionReport, ScenarioConfig, TestCount, emit_table, parse_flat_csv,
    round_half_away, run_scenario,
)
from carstat.randomization import DesignSpec


def cfg(**kw):
    base = dict(params=ModelParams("B1", "null"), strata=StrataSpec("XW"), design=DesignSpec("SBR"),
                n=200, reps=40, seed=5)
    base.update(kw)
    return ScenarioConfig(**base)


def always(ds, test):
    return True


def test_stub_always_rejects():
    rep = run_scenario(cfg(reps=7), reject_fn=always)
    assert all(c.rejections == 7 and c.proportion == 1.0 for c in rep.counts.values())


def test_config_validation():
    with pytest.raises(ConfigInvalidError):
        cfg(reps=0)
    with pytest.raises(ConfigInvalidError):
        cfg(alpha=1.0)
    with pytest.raises(ConfigInvalidError):
        cfg(covariate_kind="additional")
    with pytest.raises(ConfigInvalidError):
        cfg(tests=("t_nope",))
    with pytest.raises(ConfigInvalidError):
        cfg(params=ModelParams("C1"), tests=("t_usual",))
    assert cfg().tests == ("t_usual", "t_mod", "t_strat")
    assert cfg(params=ModelParams("C1")).tests == ("wald_usual", "wald_mod", "wald_strat")
    assert cfg(strata=StrataSpec("W")).covariate_kind == "additional"


def test_deterministic_across_workers():
    c = cfg(reps=30)
    a, b = run_scenario(c, 1), run_scenario(c, 3)
    assert a.counts == b.counts
    assert emit_table([a]) == emit_table([b])


def test_errors_are_counted_not_dropped():
    c = cfg(design=DesignSpec("MIN"), reps=5)
    rep = run_scenario(c)
    assert rep.counts["t_mod"].errors == 5 and rep.counts["t_mod"].valid == 0
    assert math.isnan(rep.counts["t_mod"].proportion)
    assert rep.counts["t_strat"].errors == 0


def test_mc_se():
    c = TestCount(rejections=37, valid=800, errors=0)
    p = 37 / 800
    assert c.mc_se == pytest.approx(math.sqrt(p * (1 - p) / 800), abs=1e-12)


@pytest.mark.parametrize("value, text", [(Fraction(545, 100), "5.5"), (Fraction(544, 100), "5.4"),
                                         (Fraction(-25, 100), "-0.3"), (Fraction(5, 100), "0.1"),
                                         (0.0, "0.0"), (Fraction(9995, 100), "100.0")])
def test_round_half_away(value, text):
    assert round_half_away(value, 1) == text


def _report(design, counts, hyp="null"):
    c = cfg(design=DesignSpec(design), params=ModelParams("B2", hyp), reps=1000)
    return RejectionReport(c, {t: TestCount(k, 1000, 0) for t, k in zip(c.tests, counts)})


def test_grouped_layout_single_row():
    out = emit_table([_report("SBR", (22, 54, 53))], "paper", "markdown")
    lines = out.strip().splitlines()
    assert len(lines) == 3
    assert "| 2.2 / 5.4 / 5.3 |" in lines[2]
    assert lines[0].startswith("| hypothesis | model | x_stratified | strata | pi | SBR |")


def test_grouped_layout_groups_designs():
    reps = [_report(d, (20 + i, 50, 50)) for i, d in enumerate(("SBCD", "SR", "SBR"))]
    header_line, _, row = emit_table(reps, "paper", "markdown").strip().splitlines()
    assert header_line.endswith("| SR | SBR | SBCD |")
    assert row.endswith("| 2.1 / 5.0 / 5.0 | 2.2 / 5.0 / 5.0 | 2.0 / 5.0 / 5.0 |")


def test_flat_csv_round_trip():
    reps = [_report("SR", (10, 20, 30)), _report("SBCD", (1, 2, 3), "alternative")]
    text = emit_table(reps, "flat", "csv")
    rows = parse_flat_csv(text)
    assert text.splitlines()[0] == ",".join(FLAT_FIELDS)
    assert len(rows) == 6
    r = rows[1]
    assert (r["model"], r["hypothesis"], r["design"], r["test"], r["rejections"]) == \
        ("B2", "null", "SR", "t_mod", 20)
    assert r["reject_pct"] == 2.0 and r["x_stratified"] is True
    assert r["mc_se"] == pytest.approx(100 * math.sqrt(0.02 * 0.98 / 1000), rel=1e-5)
    js = json.loads(emit_table(reps, "flat", "json"))
    assert [j["test"] for j in js] == [r["test"] for r in rows]


def test_emit_rejects_empty():
    with pytest.raises(ValueError):
        emit_table([])


def test_config_hash_stable():
    assert cfg().config_hash() == cfg().config_hash()
    assert cfg().config_hash() != cfg(seed=6).config_hash()

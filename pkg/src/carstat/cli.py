"""Command-line front end: ``carstat simulate | analyze | randomize``.

Exit codes: 0 success, 2 configuration or input-schema error, 3 runtime
error, 4 a requested test is not valid for the design.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from importlib import resources
from pathlib import Path

from . import errors as E
from .dgp import ModelParams, StrataSpec
from .montecarlo import ScenarioConfig, default_workers, emit_table, run_scenario
from .randomization import DesignSpec, assign_all
from .testing import TEST_IDS, run_test
from .trial_data import ADDITIONAL, STRATIFICATION, build_dataset, x_fixed_within_strata, validate_for_test

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INVALID_TEST = 0, 2, 3, 4

SCHEMA_VERSION = 1
_EXPANDABLE = ("model", "hypothesis", "strata", "design", "pi")
_SCENARIO_KEYS = set(_EXPANDABLE) | {"block_size", "coin_p", "n", "reps", "alpha", "seed", "tests", "params"}
_DEFAULT_KEYS = _SCENARIO_KEYS - {"model", "hypothesis", "strata", "design"}
_TOP_KEYS = {"schema_version", "description", "defaults", "scenarios"}

_SCHEMA_ERRORS = (
    E.ConfigInvalidError, E.EmptyInputError, E.InvalidArmError, E.NonFiniteOutcomeError,
    E.InvalidPiError, E.InvalidDesignError, E.InvalidParamsError, E.UndeclaredLabelError,
    E.NotBinaryError, E.LengthMismatchError, E.MissingMarginsError,
)


class UsageError(E.ConfigInvalidError):
    pass


def _fail(msg: str, code: int) -> int:
    print(f"carstat: error: {msg}", file=sys.stderr)
    return code


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# -- simulate --------------------------------------------------------------

def _bundled_config(name: str) -> str | None:
    try:
        res = resources.files("carstat") / "configs" / name
        return res.read_text() if res.is_file() else None
    except (FileNotFoundError, ModuleNotFoundError):
        return None


def _read_config_text(path: str) -> str:
    p = Path(path)
    if p.is_file():
        return p.read_text()
    text = _bundled_config(p.name if p.suffix else p.name + ".json")
    if text is None:
        raise E.ConfigInvalidError(f"config file {path!r} not found")
    return text


def _as_list(v):
    return v if isinstance(v, list) else [v]


def parse_config(text: str, reps: int | None = None, seed: int | None = None) -> list[ScenarioConfig]:
    """Expand a JSON simulation config into scenario cells.

    Scenario values for ``model``, ``hypothesis``, ``strata``, ``design`` and
    ``pi`` may be lists; every combination becomes one cell.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise E.ConfigInvalidError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise E.ConfigInvalidError("config must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            raise E.ConfigInvalidError(f"unknown top-level key {key!r}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise E.ConfigInvalidError(f"schema_version must be {SCHEMA_VERSION}")
    defaults = doc.get("defaults", {})
    if not isinstance(defaults, dict):
        raise E.ConfigInvalidError("'defaults' must be an object")
    for key in defaults:
        if key not in _DEFAULT_KEYS:
            raise E.ConfigInvalidError(f"defaults: unknown key {key!r}")
    scenarios = doc.get("scenarios")
    if not isinstance(scenarios, list) or not scenarios:
        raise E.ConfigInvalidError("'scenarios' must be a non-empty list")

    cells = []
    for i, sc in enumerate(scenarios):
        where = f"scenarios[{i}]"
        if not isinstance(sc, dict):
            raise E.ConfigInvalidError(f"{where} must be an object")
        for key in sc:
            if key not in _SCENARIO_KEYS:
                raise E.ConfigInvalidError(f"{where}: unknown key {key!r}")
        merged = {**defaults, **sc}
        for key in ("model", "hypothesis", "strata", "design"):
            if key not in merged:
                raise E.ConfigInvalidError(f"{where}: missing key {key!r}")
        axes = [_as_list(merged.get(k, 0.5 if k == "pi" else None)) for k in _EXPANDABLE]
        for combo in itertools.product(*axes):
            model, hyp, strata, design, pi = combo
            try:
                cells.append(ScenarioConfig(
                    params=ModelParams(model, hyp, merged.get("params", {})),
                    strata=StrataSpec(strata),
                    design=DesignSpec(design, pi=pi,
                                      block_size=merged.get("block_size", 6),
                                      coin_p=merged.get("coin_p", 0.75)),
                    n=merged.get("n", 800),
                    reps=reps if reps is not None else merged.get("reps", 10_000),
                    alpha=merged.get("alpha", 0.05),
                    seed=seed if seed is not None else merged.get("seed", 0),
                    tests=tuple(merged.get("tests", ())),
                ))
            except (TypeError, ValueError) as exc:
                raise E.ConfigInvalidError(f"{where}: {exc}") from None
            except _SCHEMA_ERRORS as exc:
                raise E.ConfigInvalidError(f"{where}: {exc}") from None
    return cells


def cmd_simulate(args) -> int:
    try:
        text = _read_config_text(args.config)
        cells = parse_config(text, args.reps, args.seed)
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise E.ConfigInvalidError("--workers must be positive")
    except E.CarstatError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    reports = []
    try:
        for k, cfg in enumerate(cells, 1):
            print(f"[{k}/{len(cells)}] {cfg.params.model_id} {cfg.params.hypothesis} "
                  f"strata={cfg.strata.covariates} {cfg.design.method} pi={_fmt(cfg.design.pi)}",
                  file=sys.stderr, flush=True)
            reports.append(run_scenario(cfg, workers))
        layout = args.layout or ("paper" if args.format == "markdown" else "flat")
        out = emit_table(reports, layout, args.format)
    except E.CarstatError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    _write_output(out, args.out)
    return EXIT_OK


def _write_output(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, newline="")


# -- CSV helpers -----------------------------------------------------------

def _read_csv(path: str) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise E.EmptyInputError(f"{path}: missing header")
            rows = list(reader)
            return list(reader.fieldnames), rows
    except OSError as exc:
        raise E.ConfigInvalidError(f"cannot read {path}: {exc.strerror}") from None


def _split_names(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _require_columns(header, names, path):
    for name in names:
        if name not in header:
            raise E.ConfigInvalidError(f"{path}: no column named {name!r}")


def _stratum_label(row: dict, cols: list[str]):
    if not cols:
        return "all"
    if len(cols) == 1:
        return row[cols[0]]
    return "|".join(row[c] for c in cols)


# -- analyze ---------------------------------------------------------------

def _parse_arm(v: str, i: int) -> int:
    if v.strip() in ("0", "1"):
        return int(v)
    raise E.InvalidArmError(f"row {i + 1}: arm {v!r} is not 0 or 1")


def cmd_analyze(args) -> int:
    try:
        header, rows = _read_csv(args.data)
        strata_cols = _split_names(args.strata)
        _require_columns(header, [args.outcome, args.arm, args.covariate, *strata_cols], args.data)
        if not rows:
            raise E.EmptyInputError(f"{args.data}: no data rows")
        records = []
        for i, r in enumerate(rows):
            records.append((r[args.outcome], _parse_arm(r[args.arm], i),
                            _stratum_label(r, strata_cols), r[args.covariate]))
        ds = build_dataset(records, args.pi)
        if len(ds.levels) < 2:
            raise E.NotBinaryError(f"covariate {args.covariate!r} has a single level; no contrast to test")
        spec = DesignSpec(args.design, pi=args.pi, block_size=args.block_size, coin_p=args.coin)
        tests = _split_names(args.tests) or (
            ["t_usual", "t_mod", "t_strat"] if len(ds.levels) == 2 else ["wald_usual", "wald_mod", "wald_strat"]
        )
        for t in tests:
            if t not in TEST_IDS:
                raise E.ConfigInvalidError(f"unknown test {t!r}; choose from {', '.join(TEST_IDS)}")
            if t.startswith("t_") and len(ds.levels) != 2:
                raise E.NotBinaryError(f"{t} needs a binary covariate; {len(ds.levels)} levels found")
        if not 0.0 < args.alpha < 1.0:
            raise E.ConfigInvalidError("--alpha must lie in (0, 1)")
        if args.covariate_kind == "auto":
            kind = STRATIFICATION if x_fixed_within_strata(ds.stats) else ADDITIONAL
        else:
            kind = args.covariate_kind
        report = validate_for_test(ds, kind)
    except E.UnknownQError as exc:
        return _fail(str(exc), EXIT_INVALID_TEST)
    except E.Assumption5ViolatedError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except _SCHEMA_ERRORS as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except E.CarstatError as exc:
        return _fail(str(exc), EXIT_RUNTIME)

    out = io.StringIO()
    how = ("stratification covariate (each stratum holds one level)" if kind == STRATIFICATION
           else "additional covariate")
    print(f"covariate: {args.covariate} levels=[{', '.join(map(str, ds.levels))}] treated as {how}", file=out)
    print(f"n={ds.n} n1={ds.n1} n0={ds.n0} strata={len(ds.strata)} design={spec.method} "
          f"pi={_fmt(spec.pi)} alpha={_fmt(args.alpha)}", file=out)
    if report.single_arm:
        print(f"single-arm cells: {report.single_arm}", file=out)
    if len(report.retained_levels) < len(ds.levels):
        print(f"retained levels: {list(report.retained_levels)}", file=out)

    code = EXIT_OK
    for t in tests:
        try:
            res = run_test(ds, t, spec, kind, args.alpha)
        except E.UnknownQError as exc:
            print(f"{t}: not available: {exc}", file=out)
            code = EXIT_INVALID_TEST
            continue
        except E.CarstatError as exc:
            print(f"{t}: failed: {exc}", file=out)
            if code == EXIT_OK:
                code = EXIT_RUNTIME
            continue
        df = "" if res.df is None else f" df={res.df}"
        print(f"{t}: statistic={_fmt(res.statistic)}{df} p={_fmt(res.p_value)} "
              f"({_fmt(100 * res.p_value)}%) reject={'yes' if res.reject else 'no'}", file=out)
        for name, val in res.decomposition.items():
            print(f"  {name} = {_fmt(val)}", file=out)
    sys.stdout.write(out.getvalue())
    if code == EXIT_INVALID_TEST:
        print("carstat: error: a requested test is not valid for this design "
              "(q(s) is unknown)", file=sys.stderr)
    return code


# -- randomize -------------------------------------------------------------

def cmd_randomize(args) -> int:
    try:
        header, rows = _read_csv(args.covariates)
        strata_cols = _split_names(args.strata)
        margin_cols = _split_names(args.margins) or strata_cols
        _require_columns(header, strata_cols + margin_cols, args.covariates)
        if "a" in header:
            raise E.ConfigInvalidError(f"{args.covariates}: already has an 'a' column")
        spec = DesignSpec(args.method, pi=args.pi, block_size=args.block, coin_p=args.coin)
        if args.seed < 0:
            raise E.ConfigInvalidError("--seed must be non-negative")
        labels = [_stratum_label(r, strata_cols) for r in rows]
        margins = [tuple(r[c] for c in margin_cols) for r in rows] if spec.method == "MIN" else None
        arms = assign_all(spec, labels, args.seed, margins) if rows else []
    except _SCHEMA_ERRORS as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except E.CarstatError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header + ["a"], lineterminator="\n")
    w.writeheader()
    for r, a in zip(rows, arms):
        w.writerow({**r, "a": a})
    _write_output(buf.getvalue(), args.out)
    return EXIT_OK


# -- entry point -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="carstat", description="Interaction tests under covariate-adaptive randomization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run Monte Carlo table cells from a JSON config")
    s.add_argument("--config", required=True, help="config path, or the name of a bundled config")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, help="worker processes (default: $CARSTAT_WORKERS or 1)")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json", "markdown"), default="csv")
    s.add_argument("--layout", choices=("flat", "paper"))
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="test a covariate-by-treatment interaction in a trial CSV")
    a.add_argument("--data", required=True)
    a.add_argument("--covariate", required=True)
    a.add_argument("--strata", default="")
    a.add_argument("--design", required=True, type=str.upper, choices=("SR", "SBR", "SBCD", "MIN"))
    a.add_argument("--pi", type=float, default=0.5)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--tests", default="")
    a.add_argument("--outcome", default="y")
    a.add_argument("--arm", default="a")
    a.add_argument("--block-size", type=int, default=None)
    a.add_argument("--coin", type=float, default=0.75)
    a.add_argument("--covariate-kind", choices=("auto", STRATIFICATION, ADDITIONAL), default="auto")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("randomize", help="append an assignment column to a covariate CSV")
    r.add_argument("--covariates", required=True)
    r.add_argument("--strata", default="")
    r.add_argument("--method", required=True, type=str.upper, choices=("SR", "SBR", "SBCD", "MIN"))
    r.add_argument("--pi", type=float, default=0.5)
    r.add_argument("--block", type=int, default=6)
    r.add_argument("--coin", type=float, default=0.75)
    r.add_argument("--margins", default="", help="minimization margins (default: the strata columns)")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_randomize)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    if getattr(args, "block_size", "unset") is None:
        # block size only matters for SBR; pick one compatible with pi
        args.block_size = _default_block(args.pi)
    return args.func(args)


def _default_block(pi: float) -> int:
    for b in range(6, 1000):
        if abs(b * pi - round(b * pi)) < 1e-9:
            return b
    return 6


if __name__ == "__main__":
    sys.exit(main())

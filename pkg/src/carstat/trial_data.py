"""Data model for a two-arm covariate-adaptive trial.

Stratum and covariate labels are interned to dense integer codes in sorted
order; the original labels are kept on the dataset for reporting. A
numeric-looking label (``0``, ``"1"``, ...) sorts numerically and before
any non-numeric label, so a level called ``0`` is always the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    Assumption5ViolatedError,
    EmptyInputError,
    InvalidArmError,
    InvalidPiError,
    NonFiniteOutcomeError,
    NoTestableCellError,
    UndeclaredLabelError,
)

STRATIFICATION = "stratification"
ADDITIONAL = "additional"


def _label_key(v):
    try:
        return (0, float(v), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(v))


def sort_labels(values: Iterable[Hashable]) -> tuple:
    return tuple(sorted(set(values), key=_label_key))


def check_pi(pi: float) -> float:
    pi = float(pi)
    if not (0.0 < pi < 1.0) or math.isnan(pi):
        raise InvalidPiError(f"pi must lie in (0, 1), got {pi}")
    return pi


@dataclass(frozen=True)
class UnitRecord:
    y: float
    a: int
    s: Hashable
    x: Hashable


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Observed rows ``(y, a, s, x)`` stored column-wise with coded labels.

    ``s`` and ``x`` hold integer codes into ``strata`` and ``levels``.
    Use :func:`build_dataset` for validated construction from raw rows.
    """

    y: np.ndarray
    a: np.ndarray
    s: np.ndarray
    x: np.ndarray
    strata: tuple
    levels: tuple
    pi: float

    @classmethod
    def from_codes(cls, y, a, s, x, strata: Sequence, levels: Sequence, pi: float) -> "TrialDataset":
        """Fast constructor for already-coded arrays (used by the simulator)."""
        return cls(
            y=np.asarray(y, dtype=np.float64),
            a=np.asarray(a, dtype=np.int64),
            s=np.asarray(s, dtype=np.int64),
            x=np.asarray(x, dtype=np.int64),
            strata=tuple(strata),
            levels=tuple(levels),
            pi=float(pi),
        )

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n1(self) -> int:
        return int(self.a.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def units(self) -> list[UnitRecord]:
        return [
            UnitRecord(float(yi), int(ai), self.strata[si], self.levels[xi])
            for yi, ai, si, xi in zip(self.y, self.a, self.s, self.x)
        ]

    @cached_property
    def stats(self) -> "CellStats":
        return cell_stats(self)

    def with_outcomes(self, y) -> "TrialDataset":
        return TrialDataset.from_codes(y, self.a, self.s, self.x, self.strata, self.levels, self.pi)


def build_dataset(
    rows: Iterable[tuple],
    pi: float,
    strata: Sequence | None = None,
    levels: Sequence | None = None,
) -> TrialDataset:
    """Validate raw ``(y, a, s, x)`` rows and build a coded dataset.

    Row order is preserved. When ``strata`` or ``levels`` are omitted they
    are inferred from the rows.
    """
    pi = check_pi(pi)
    rows = list(rows)
    if not rows:
        raise EmptyInputError("dataset has no rows")
    ys, arms, ss, xs = [], [], [], []
    for i, row in enumerate(rows):
        y, a, s, x = row
        try:
            yf = float(y)
        except (TypeError, ValueError):
            raise NonFiniteOutcomeError(f"row {i}: outcome {y!r} is not a number") from None
        if not math.isfinite(yf):
            raise NonFiniteOutcomeError(f"row {i}: outcome {y!r} is not finite")
        if isinstance(a, str) or a not in (0, 1):
            raise InvalidArmError(f"row {i}: arm {a!r} is not 0 or 1")
        ys.append(yf)
        arms.append(int(a))
        ss.append(s)
        xs.append(x)

    strata_t = sort_labels(ss) if strata is None else tuple(strata)
    levels_t = sort_labels(xs) if levels is None else tuple(levels)
    s_code = {lab: i for i, lab in enumerate(strata_t)}
    x_code = {lab: i for i, lab in enumerate(levels_t)}
    try:
        sc = [s_code[v] for v in ss]
    except KeyError as exc:
        raise UndeclaredLabelError(f"stratum {exc.args[0]!r} is not declared") from None
    try:
        xc = [x_code[v] for v in xs]
    except KeyError as exc:
        raise UndeclaredLabelError(f"covariate level {exc.args[0]!r} is not declared") from None
    return TrialDataset.from_codes(ys, arms, sc, xc, strata_t, levels_t, pi)


@dataclass(frozen=True, eq=False)
class CellStats:
    """Counts, means and plug-in variances for every (arm, level, stratum) cell.

    Array axes are ordered (arm, level, stratum). Means and variances of
    empty cells are stored as 0 and flagged by the matching ``has_*`` mask.
    Variances use the cell count as divisor.
    """

    n: int
    pi: float
    levels: tuple
    strata: tuple
    n_axs: np.ndarray
    n_ax: np.ndarray
    n_as: np.ndarray
    n_xs: np.ndarray
    n_x: np.ndarray
    n_s: np.ndarray
    mean_ax: np.ndarray
    var_ax: np.ndarray
    m2_ax: np.ndarray
    mean_as: np.ndarray
    mean_axs: np.ndarray
    scale: float
    has_ax: np.ndarray = field(repr=False)
    has_as: np.ndarray = field(repr=False)
    has_axs: np.ndarray = field(repr=False)

    @property
    def n_a(self) -> np.ndarray:
        return self.n_ax.sum(axis=1)

    @property
    def p_x(self) -> np.ndarray:
        return self.n_x / self.n

    @property
    def p_s(self) -> np.ndarray:
        return self.n_s / self.n

    @property
    def p_xs(self) -> np.ndarray:
        return self.n_xs / self.n

    def mean(self, a: int, x_label) -> float | None:
        """Mean of arm ``a`` at level ``x_label``; None when the cell is empty."""
        j = self.levels.index(x_label)
        return float(self.mean_ax[a, j]) if self.has_ax[a, j] else None


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def cell_stats(ds: TrialDataset) -> CellStats:
    L, S = len(ds.levels), len(ds.strata)
    cell = (ds.a * L + ds.x) * S + ds.s
    size = 2 * L * S
    n_axs = np.bincount(cell, minlength=size).reshape(2, L, S)
    sum_axs = np.bincount(cell, weights=ds.y, minlength=size).reshape(2, L, S)

    n_ax = n_axs.sum(axis=2)
    n_as = n_axs.sum(axis=1)
    n_xs = n_axs.sum(axis=0)
    mean_ax = _safe_div(sum_axs.sum(axis=2), n_ax)
    mean_as = _safe_div(sum_axs.sum(axis=1), n_as)
    mean_axs = _safe_div(sum_axs, n_axs)

    ax = ds.a * L + ds.x
    dev = ds.y - mean_ax.reshape(-1)[ax]
    ss_ax = np.bincount(ax, weights=dev * dev, minlength=2 * L).reshape(2, L)
    sq_ax = np.bincount(ax, weights=ds.y * ds.y, minlength=2 * L).reshape(2, L)

    return CellStats(
        n=ds.n,
        pi=ds.pi,
        levels=ds.levels,
        strata=ds.strata,
        n_axs=n_axs,
        n_ax=n_ax,
        n_as=n_as,
        n_xs=n_xs,
        n_x=n_ax.sum(axis=0),
        n_s=n_as.sum(axis=0),
        mean_ax=mean_ax,
        var_ax=_safe_div(ss_ax, n_ax),
        m2_ax=_safe_div(sq_ax, n_ax),
        mean_as=mean_as,
        mean_axs=mean_axs,
        scale=float(np.max(np.abs(ds.y))),
        has_ax=n_ax > 0,
        has_as=n_as > 0,
        has_axs=n_axs > 0,
    )


def imbalance(ds: TrialDataset) -> dict:
    """Per-stratum imbalance ``sum_i (A_i - pi) 1{S_i = s}``."""
    d = np.bincount(ds.s, weights=ds.a - ds.pi, minlength=len(ds.strata))
    return {lab: float(v) for lab, v in zip(ds.strata, d)}


@dataclass(frozen=True)
class CellStatus:
    stratum: Hashable
    level: Hashable
    n1: int
    n0: int

    @property
    def two_arm(self) -> bool:
        return self.n1 > 0 and self.n0 > 0


@dataclass(frozen=True)
class ValidationReport:
    covariate_kind: str
    x_fixed_within_strata: bool
    level_of_stratum: dict
    cells: tuple
    dropped: tuple
    single_arm: tuple
    empty_strata: tuple
    retained_levels: tuple

    @property
    def ok(self) -> bool:
        return len(self.retained_levels) >= 2


def stratum_levels(stats: CellStats) -> np.ndarray:
    """Level code of each occupied stratum, or -1 where a stratum is empty.

    Raises :class:`Assumption5ViolatedError` when a stratum mixes levels.
    """
    occupied = stats.n_xs > 0
    per_stratum = occupied.sum(axis=0)
    if np.any(per_stratum > 1):
        bad = [stats.strata[j] for j in np.flatnonzero(per_stratum > 1)]
        raise Assumption5ViolatedError(
            f"covariate is not constant within strata {bad!r}"
        )
    return np.where(per_stratum == 1, occupied.argmax(axis=0), -1)


def x_fixed_within_strata(stats: CellStats) -> bool:
    return bool(np.all((stats.n_xs > 0).sum(axis=0) <= 1))


def validate_for_test(ds: TrialDataset, covariate_kind: str = ADDITIONAL) -> ValidationReport:
    """Check which (stratum, level) cells a test can use.

    Combinations with no units are listed in ``dropped`` and ignored by all
    estimators; for a stratification covariate only the combination
    ``(s, X(s))`` of each stratum can occur, so the structural zeros are not
    listed. Occupied combinations with only one arm are listed in
    ``single_arm``; stratified estimators refuse them.
    """
    if covariate_kind not in (STRATIFICATION, ADDITIONAL):
        raise ValueError(f"unknown covariate_kind {covariate_kind!r}")
    st = ds.stats
    a5 = x_fixed_within_strata(st)
    level_of = {}
    if covariate_kind == STRATIFICATION or a5:
        codes = stratum_levels(st)
        level_of = {st.strata[j]: st.levels[c] for j, c in enumerate(codes) if c >= 0}

    cells, dropped, single = [], [], []
    for j, s_lab in enumerate(st.strata):
        for k, x_lab in enumerate(st.levels):
            n1, n0 = int(st.n_axs[1, k, j]), int(st.n_axs[0, k, j])
            if n1 + n0 == 0:
                if covariate_kind == ADDITIONAL:
                    dropped.append((s_lab, x_lab))
                continue
            c = CellStatus(s_lab, x_lab, n1, n0)
            cells.append(c)
            if not c.two_arm:
                single.append((s_lab, x_lab))

    testable = {c.level for c in cells if c.two_arm}
    if not testable:
        raise NoTestableCellError("no covariate level has a cell with both arms occupied")
    retained = tuple(lab for lab in st.levels if lab in testable)
    empty = tuple(lab for j, lab in enumerate(st.strata) if st.n_s[j] == 0)
    return ValidationReport(
        covariate_kind=covariate_kind,
        x_fixed_within_strata=a5,
        level_of_stratum=level_of,
        cells=tuple(cells),
        dropped=tuple(dropped),
        single_arm=tuple(single),
        empty_strata=empty,
        retained_levels=retained,
    )

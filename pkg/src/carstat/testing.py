"""Interaction tests: usual, modified and stratified-adjusted, as t and Wald tests.

The reference level is the first level in sorted order. Levels that have
no (stratum, level) cell with both arms are dropped before testing, which
shrinks the Wald degrees of freedom; a t-test needs both of its levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import estimation as est
from .distributions import chisq_sf, normal_quantile, chisq_quantile
from .errors import (
    DegenerateVarianceError,
    MissingCellError,
    NotBinaryError,
    SingularMatrixError,
)
from .randomization import DesignSpec
from .trial_data import ADDITIONAL, STRATIFICATION, TrialDataset, stratum_levels

USUAL, MOD, STRAT = "usual", "mod", "strat"
VARIANTS = (USUAL, MOD, STRAT)
TEST_IDS = ("t_usual", "t_mod", "t_strat", "wald_usual", "wald_mod", "wald_strat")

MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class TestResult:
    test_id: str
    statistic: float
    df: int | None
    p_value: float
    alpha: float
    reject: bool
    cov_used: est.CovMatrix
    tau_used: est.TauEstimate
    covariate_kind: str
    decomposition: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def critical_value(self) -> float:
        if self.df is None:
            return normal_quantile(1.0 - self.alpha / 2.0)
        return chisq_quantile(1.0 - self.alpha, self.df)


def smw_inverse_apply(diag, s0sq: float, v) -> np.ndarray:
    """Solve ``(diag(d) + s0sq * 1 1^T) x = v`` by the rank-one update formula."""
    d = np.asarray(diag, dtype=float)
    v = np.asarray(v, dtype=float)
    if d.shape != v.shape or d.ndim != 1:
        raise ValueError("diag and v must be vectors of equal length")
    if not np.all(d > 0) or s0sq < 0 or not math.isfinite(s0sq):
        raise SingularMatrixError("need diag > 0 and s0sq >= 0")
    dv = v / d
    d1 = 1.0 / d
    denom = 1.0 + s0sq * d1.sum()
    return dv - (s0sq * dv.sum() / denom) * d1


def retained_level_codes(stats) -> np.ndarray:
    two_arm = stats.has_axs[1] & stats.has_axs[0]
    return np.flatnonzero(two_arm.any(axis=1))


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _check_kind(stats, covariate_kind: str) -> str:
    if covariate_kind not in (STRATIFICATION, ADDITIONAL):
        raise ValueError(f"unknown covariate_kind {covariate_kind!r}")
    if covariate_kind == STRATIFICATION:
        stratum_levels(stats)
    return covariate_kind


def _families(covariate_kind: str) -> tuple[str, str]:
    """(modified family, stratified family) for the covariate kind."""
    if covariate_kind == STRATIFICATION:
        return est.STR, est.STR
    return est.ADD, est.CHECK


def _tau_and_cov(stats, variant, covariate_kind, spec, codes):
    mod_family, strat_family = _families(covariate_kind)
    if variant == USUAL:
        tau = est.tau_hat(stats, est.PLAIN, codes)
        cov = est.cov_matrix(stats, est.HC, levels=codes)
    elif variant == MOD:
        tau = est.tau_hat(stats, est.PLAIN, codes)
        cov = est.cov_matrix(stats, est.MOD, spec, family=mod_family, levels=codes)
    elif variant == STRAT:
        tau = est.tau_hat(stats, est.STRATIFIED, codes)
        cov = est.cov_matrix(stats, est.STRAT, spec, family=strat_family, levels=codes)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return tau, cov


def run_t_test(
    ds: TrialDataset,
    variant: str,
    covariate_kind: str = ADDITIONAL,
    spec: DesignSpec | None = None,
    alpha: float = 0.05,
) -> TestResult:
    """Two-sided t-test of no interaction for a binary covariate."""
    alpha = _check_alpha(alpha)
    stats = ds.stats
    covariate_kind = _check_kind(stats, covariate_kind)
    if len(stats.levels) != 2:
        raise NotBinaryError(
            f"t-test needs a binary covariate, found {len(stats.levels)} level(s)"
        )
    codes = retained_level_codes(stats)
    if len(codes) != 2:
        raise MissingCellError("a covariate level has no cell with both arms")

    tau, cov = _tau_and_cov(stats, variant, covariate_kind, spec, codes)
    m = cov.matrix
    var = m[0, 0] + m[1, 1] - 2.0 * m[0, 1]
    if not var > est.DEGENERATE_RTOL * stats.scale ** 2:
        raise DegenerateVarianceError("variance of the interaction contrast is zero")
    delta = tau.delta
    stat = math.sqrt(stats.n) * delta / math.sqrt(var)
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    lab = cov.levels
    decomp = {f"sigma2[{lab[0]}]": m[0, 0], f"sigma2[{lab[1]}]": m[1, 1]}
    if m[0, 1] != 0.0:
        decomp[f"sigma[{lab[1]},{lab[0]}]"] = m[0, 1]
    decomp["delta"] = delta
    decomp["se"] = math.sqrt(var / stats.n)
    return TestResult(
        test_id=f"t_{variant}",
        statistic=stat,
        df=None,
        p_value=p,
        alpha=alpha,
        reject=p < alpha,
        cov_used=cov,
        tau_used=tau,
        covariate_kind=covariate_kind,
        decomposition=decomp,
    )


def contrast_covariance(m: np.ndarray) -> np.ndarray:
    """``R M R^T`` for the contrast matrix R = [-1 | I] against level 0."""
    return m[1:, 1:] - m[1:, :1] - m[:1, 1:] + m[0, 0]


def run_wald_test(
    ds: TrialDataset,
    variant: str,
    spec: DesignSpec | None = None,
    alpha: float = 0.05,
    covariate_kind: str = ADDITIONAL,
) -> TestResult:
    """Wald test that all level effects are equal."""
    alpha = _check_alpha(alpha)
    stats = ds.stats
    covariate_kind = _check_kind(stats, covariate_kind)
    codes = retained_level_codes(stats)
    if len(codes) < 2:
        raise NotBinaryError("need at least two covariate levels with both arms")
    k = len(codes) - 1
    tau, cov = _tau_and_cov(stats, variant, covariate_kind, spec, codes)
    v = tau.contrasts
    m = cov.matrix
    if variant == MOD and cov.family == est.ADD:
        rmr = contrast_covariance(m)
        if np.linalg.cond(rmr) > MAX_CONDITION:
            raise SingularMatrixError("contrast covariance is numerically singular")
        sol = np.linalg.solve(rmr, v)
    else:
        diag = np.diag(m)
        if diag.max() / diag.min() > MAX_CONDITION:
            raise SingularMatrixError("contrast covariance is numerically singular")
        sol = smw_inverse_apply(diag[1:], diag[0], v)
    w = max(float(stats.n * (v @ sol)), 0.0)
    p = chisq_sf(w, k)
    decomp = {f"sigma2[{lab}]": m[i, i] for i, lab in enumerate(cov.levels)}
    return TestResult(
        test_id=f"wald_{variant}",
        statistic=w,
        df=k,
        p_value=p,
        alpha=alpha,
        reject=p < alpha,
        cov_used=cov,
        tau_used=tau,
        covariate_kind=covariate_kind,
        decomposition=decomp,
    )


def run_test(
    ds: TrialDataset,
    test_id: str,
    spec: DesignSpec | None = None,
    covariate_kind: str = ADDITIONAL,
    alpha: float = 0.05,
) -> TestResult:
    """Dispatch on a test id such as ``"t_mod"`` or ``"wald_strat"``."""
    if test_id not in TEST_IDS:
        raise ValueError(f"unknown test {test_id!r}; choose from {TEST_IDS}")
    form, variant = test_id.split("_", 1)
    if form == "t":
        return run_t_test(ds, variant, covariate_kind, spec, alpha)
    return run_wald_test(ds, variant, spec, alpha, covariate_kind)

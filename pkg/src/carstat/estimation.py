"""Level-wise treatment-effect estimators and their variance components.

Three families of variance components are computed from :class:`CellStats`:

``str``
    covariate determined by the stratum (each stratum holds one level);
    arm means are taken per stratum.
``add``
    covariate not determined by the stratum; arm means are taken per
    (stratum, level) cell and mixed with the share ``n_x(s) / n(s)``.
    Produces cross-level terms.
``check``
    components of the stratified-adjusted estimator; free of ``q(s)``.

Every family is built from the centred cell means
``d_a(x, s) = mu_hat_{a,x}(s) - Ybar_{a,x}``; (stratum, level) cells with no
units carry zero weight. When each stratum holds a single level the three
families coincide term by term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVarianceError, MissingCellError, UnknownQError
from .randomization import DesignSpec
from .trial_data import CellStats, stratum_levels

PLAIN, STRATIFIED = "plain", "stratified"
STR, ADD, CHECK = "str", "add", "check"
HC, MOD, STRAT = "hc", "mod", "strat"

# diagonal entries below this times max|Y|^2 count as zero
DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class TauEstimate:
    kind: str
    levels: tuple
    values: np.ndarray

    @property
    def contrasts(self) -> np.ndarray:
        """Differences against the first (reference) level."""
        return self.values[1:] - self.values[0]

    @property
    def delta(self) -> float:
        """Interaction contrast for a binary covariate."""
        if len(self.values) != 2:
            raise ValueError("delta is defined for exactly two levels")
        return float(self.values[1] - self.values[0])


@dataclass(frozen=True, eq=False)
class ZetaComponents:
    """Variance components for each level; cross terms only for ``add``.

    ``a`` (and ``a_xy``) are None when they were not requested or when the
    family does not have them.
    """

    family: str
    levels: tuple
    y: np.ndarray
    a: np.ndarray | None
    h: np.ndarray
    y_xy: np.ndarray | None = None
    a_xy: np.ndarray | None = None
    h_xy: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CovMatrix:
    kind: str
    family: str | None
    levels: tuple
    matrix: np.ndarray
    components: ZetaComponents | None = None

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix)


def _level_codes(stats: CellStats, levels) -> np.ndarray:
    if levels is None:
        return np.arange(len(stats.levels))
    return np.asarray(levels, dtype=np.int64)


def _require_level_cells(stats: CellStats, codes: np.ndarray) -> None:
    ok = stats.has_ax[1, codes] & stats.has_ax[0, codes]
    if not ok.all():
        bad = [stats.levels[c] for c in codes[~ok]]
        raise MissingCellError(f"levels {bad!r} lack a treated or a control unit")


def _require_stratum_cells(stats: CellStats, codes: np.ndarray) -> None:
    occupied = stats.n_xs[codes] > 0
    two_arm = stats.has_axs[1, codes] & stats.has_axs[0, codes]
    bad = occupied & ~two_arm
    if bad.any():
        pairs = [(stats.strata[s], stats.levels[codes[i]]) for i, s in zip(*np.nonzero(bad))]
        raise MissingCellError(f"(stratum, level) cells {pairs!r} lack one arm")


def tau_hat(stats: CellStats, kind: str = PLAIN, levels=None) -> TauEstimate:
    """Difference-in-means (``plain``) or stratified-adjusted effect per level."""
    codes = _level_codes(stats, levels)
    _require_level_cells(stats, codes)
    if kind == PLAIN:
        vals = stats.mean_ax[1, codes] - stats.mean_ax[0, codes]
    elif kind == STRATIFIED:
        _require_stratum_cells(stats, codes)
        diff = stats.mean_axs[1, codes] - stats.mean_axs[0, codes]
        w = stats.n_xs[codes] / stats.n_x[codes, None]
        vals = (w * diff).sum(axis=1)
    else:
        raise ValueError(f"unknown tau kind {kind!r}")
    return TauEstimate(kind, tuple(stats.levels[c] for c in codes), vals)


def _centred(stats: CellStats):
    occ = stats.n_xs > 0
    d1 = np.where(occ, stats.mean_axs[1] - stats.mean_ax[1][:, None], 0.0)
    d0 = np.where(occ, stats.mean_axs[0] - stats.mean_ax[0][:, None], 0.0)
    return d1, d0


def _resolve_q(stats: CellStats, spec: DesignSpec | None, q) -> np.ndarray | None:
    if q is not None:
        q = np.broadcast_to(np.asarray(q, dtype=float), (len(stats.strata),))
        return q
    if spec is None:
        return None
    return spec.q_of_s(len(stats.strata))


def zeta_components(
    stats: CellStats,
    family: str,
    spec: DesignSpec | None = None,
    *,
    q=None,
    with_a: bool = True,
    literal_second_moment: bool = False,
) -> ZetaComponents:
    """Sample variance components for all levels.

    ``q`` overrides the per-stratum ``q(s)`` implied by ``spec``. The
    ``A`` components need a known ``q(s)``; pass ``with_a=False`` to skip
    them (the stratified-adjusted variance does not use them).

    For ``family="str"`` the Y component is computed in centred form. With
    ``literal_second_moment=True`` it is computed instead from raw second
    moments, ``m2_{a,x} - sum_s (n(s)/n_x) mu_hat_a(s)^2``; the two agree
    only when within-stratum arm shares match stratum shares, and only the
    centred form is invariant to shifting the outcome.
    """
    if family not in (STR, ADD, CHECK):
        raise ValueError(f"unknown zeta family {family!r}")
    pi = stats.pi
    n = stats.n
    codes = np.arange(len(stats.levels))
    _require_level_cells(stats, codes)
    if family == STR:
        stratum_levels(stats)  # raises when a stratum mixes levels
    _require_stratum_cells(stats, codes)

    need_a = with_a and family != CHECK
    qs = _resolve_q(stats, spec, q) if need_a else None
    if need_a and qs is None:
        raise UnknownQError(
            "q(s) is unknown for this design (e.g. minimization); "
            "modified tests are not available"
        )

    d1, d0 = _centred(stats)
    p_x = stats.p_x
    within = p_x * (stats.var_ax[1] / pi + stats.var_ax[0] / (1.0 - pi))
    g = d1 / pi + d0 / (1.0 - pi)
    h = d1 - d0
    nxs = stats.n_xs.astype(float)
    n_s = stats.n_s.astype(float)
    inv_ns = np.zeros_like(n_s)
    np.divide(1.0, n_s, out=inv_ns, where=n_s > 0)

    if family == ADD:
        def gram(e, weight):
            m = (e * weight) @ e.T / n
            return 0.5 * (m + m.T)  # exactly symmetric

        y_full = -(gram(nxs * d1, inv_ns) / pi + gram(nxs * d0, inv_ns) / (1.0 - pi))
        y = within + np.diag(y_full)
        h_full = gram(nxs * h, inv_ns)
        a_full = gram(nxs * g, qs * inv_ns) if need_a else None
        off = ~np.eye(len(codes), dtype=bool)
        return ZetaComponents(
            family=ADD,
            levels=stats.levels,
            y=y,
            a=None if a_full is None else np.diag(a_full).copy(),
            h=np.diag(h_full).copy(),
            y_xy=np.where(off, y_full, 0.0),
            a_xy=None if a_full is None else np.where(off, a_full, 0.0),
            h_xy=np.where(off, h_full, 0.0),
        )

    # str and check share the n_x(s)/n weighting (for str, n_x(s) = n(s))
    w = nxs / n
    if family == STR and literal_second_moment:
        mu_sq = w / p_x[:, None]
        y = p_x * (
            (stats.m2_ax[1] - (mu_sq * stats.mean_axs[1] ** 2).sum(axis=1)) / pi
            + (stats.m2_ax[0] - (mu_sq * stats.mean_axs[0] ** 2).sum(axis=1)) / (1.0 - pi)
        )
    else:
        y = within - (w * d1 * d1).sum(axis=1) / pi - (w * d0 * d0).sum(axis=1) / (1.0 - pi)
    hh = (w * h * h).sum(axis=1)
    a = (w * qs * g * g).sum(axis=1) if need_a else None
    return ZetaComponents(family=family, levels=stats.levels, y=y, a=a, h=hh)


def _check_degenerate(stats: CellStats, diag: np.ndarray, what: str, levels: tuple) -> None:
    thresh = DEGENERATE_RTOL * stats.scale ** 2
    bad = ~(diag > thresh)
    if bad.any():
        labs = [lab for lab, b in zip(levels, bad) if b]
        raise DegenerateVarianceError(f"{what} variance is not positive for levels {labs!r}")


def cov_matrix(
    stats: CellStats,
    kind: str,
    spec: DesignSpec | None = None,
    *,
    family: str | None = None,
    levels=None,
    q=None,
) -> CovMatrix:
    """Assemble the covariance matrix of ``sqrt(n) * tau_hat``.

    ``hc``: heteroscedasticity-robust, diagonal. ``mod``: from the ``add``
    family (full matrix) or the ``str`` family (diagonal). ``strat``: from
    the ``check`` family, or the ``str`` family without A terms; diagonal.
    ``levels`` restricts the result to a subset of level codes.
    """
    codes = _level_codes(stats, levels)
    labels = tuple(stats.levels[c] for c in codes)
    if kind == HC:
        _require_level_cells(stats, codes)
        n = stats.n
        diag = n * stats.var_ax[1, codes] / stats.n_ax[1, codes] + \
            n * stats.var_ax[0, codes] / stats.n_ax[0, codes]
        _check_degenerate(stats, diag, "robust", labels)
        return CovMatrix(HC, None, labels, np.diag(diag))

    if kind == MOD:
        family = family or ADD
        if family not in (ADD, STR):
            raise ValueError("modified covariance uses the 'add' or 'str' family")
        z = zeta_components(stats, family, spec, q=q)
        if family == ADD:
            full = np.diag(z.y + z.a + z.h) + z.y_xy + z.a_xy + z.h_xy
            p_all = stats.p_x
            full = full / np.outer(p_all, p_all)
            mat = full[np.ix_(codes, codes)]
        else:
            mat = np.diag(((z.y + z.a + z.h) / stats.p_x ** 2)[codes])
        _check_degenerate(stats, np.diag(mat), "modified", labels)
        return CovMatrix(MOD, family, labels, mat, z)

    if kind == STRAT:
        family = family or CHECK
        if family not in (CHECK, STR):
            raise ValueError("stratified covariance uses the 'check' or 'str' family")
        z = zeta_components(stats, family, spec, with_a=False)
        diag = ((z.y + z.h) / stats.p_x ** 2)[codes]
        _check_degenerate(stats, diag, "stratified-adjusted", labels)
        return CovMatrix(STRAT, family, labels, np.diag(diag), z)

    raise ValueError(f"unknown covariance kind {kind!r}")

"""Potential-outcome populations for the six simulation models.

``B1``-``B3`` have a binary covariate X; ``C1``-``C3`` a three-level one.
Models 1 are linear, models 2 nonlinear and heteroscedastic in a latent
X*, models 3 binary-outcome threshold models. W is the auxiliary covariate
that may enter the strata.

Each population consumes ``4 n`` uniforms from its stream, in four blocks
of ``n``: X (or X*), W (or W*), the treated-arm noise, the control-arm
noise. Normal noise is the inverse normal CDF of the uniform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .distributions import normal_quantile
from .errors import InvalidParamsError, LengthMismatchError
from .rng import Stream
from .trial_data import TrialDataset

MODELS = ("B1", "B2", "B3", "C1", "C2", "C3")
NULL, ALT = "null", "alternative"

_DEFAULTS: dict[str, dict] = {
    "B1": dict(mu1=4.0, mu0=1.0, beta=(3.0,), alpha1=-2.0, gamma=(4.0,),
               sigma1=1.0, sigma0=0.5, delta=(1.5,), w_sd=3.0, p_x=0.5),
    "B2": dict(mu1=5.0, mu0=4.0, beta=(0.5,), alpha1=2.0, gamma=(6.0,),
               sigma1=1.0, sigma0=0.5, hetero=0.5, delta=(1.2,), w_sd=2.0,
               x_range=(-1.0, 1.0), cuts=(0.0,)),
    "B3": dict(mu1=4.0, mu0=4.0, beta=(1.0,), alpha1=-3.0, gamma=(6.0,),
               delta=(1.5,), p_x=2.0 / 3.0, center=2.0 / 3.0, u_max=10.0),
    "C1": dict(mu1=4.0, mu0=1.0, beta=(3.0, 2.0), alpha1=-2.0, gamma=(4.0, 3.0),
               sigma1=1.0, sigma0=0.5, delta=(1.0, 2.0), w_sd=3.0),
    "C2": dict(mu1=5.0, mu0=4.0, beta=(0.5,), alpha1=2.0, gamma=(6.0,),
               sigma1=1.0, sigma0=0.5, hetero=0.5, delta=(0.4,), w_sd=2.0,
               x_range=(-1.0, 2.0), cuts=(0.0, 1.0)),
    "C3": dict(mu1=4.0, mu0=4.0, beta=(1.0,), alpha1=-3.0, gamma=(6.0,),
               delta=(1.5,), center=0.5, x_values=(0.0, 0.5, 1.0), u_max=10.0),
}

_VECTOR_KEYS = {"beta", "gamma", "delta", "x_range", "cuts", "x_values"}


@dataclass(frozen=True)
class ModelParams:
    """Model id, hypothesis and parameter values.

    Under the null the interaction ``delta`` is replaced by zeros; the
    stored ``values["delta"]`` is always the alternative's value.
    """

    model_id: str
    hypothesis: str = NULL
    values: Mapping = field(default_factory=dict)

    def __post_init__(self):
        mid = str(self.model_id).upper()
        if mid not in MODELS:
            raise InvalidParamsError(f"unknown model {self.model_id!r}")
        hyp = str(self.hypothesis).lower()
        if hyp in ("h0", "null"):
            hyp = NULL
        elif hyp in ("h1", "alt", "alternative"):
            hyp = ALT
        else:
            raise InvalidParamsError(f"hypothesis must be null or alternative, not {self.hypothesis!r}")
        merged = dict(_DEFAULTS[mid])
        for key, val in dict(self.values).items():
            if key not in merged:
                raise InvalidParamsError(f"model {mid} has no parameter {key!r}")
            merged[key] = tuple(float(v) for v in val) if key in _VECTOR_KEYS else float(val)
        for key in _VECTOR_KEYS & merged.keys():
            if len(merged[key]) != len(_DEFAULTS[mid][key]):
                raise InvalidParamsError(
                    f"{key} needs {len(_DEFAULTS[mid][key])} entries for model {mid}"
                )
        object.__setattr__(self, "model_id", mid)
        object.__setattr__(self, "hypothesis", hyp)
        object.__setattr__(self, "values", MappingProxyType(merged))
        self._validate()

    def _validate(self):
        v = self.values
        for key in ("sigma1", "sigma0", "w_sd", "u_max"):
            if key in v and not v[key] > 0:
                raise InvalidParamsError(f"{key} must be positive")
        if "p_x" in v and not 0.0 < v["p_x"] < 1.0:
            raise InvalidParamsError("p_x must lie in (0, 1)")
        if "x_range" in v:
            lo, hi = v["x_range"]
            if not lo < hi or not all(lo < c < hi for c in v["cuts"]):
                raise InvalidParamsError("x_range must be increasing and contain the cuts")
            if list(v["cuts"]) != sorted(v["cuts"]):
                raise InvalidParamsError("cuts must be increasing")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def delta(self) -> np.ndarray:
        d = np.asarray(self.values["delta"], dtype=float)
        return d if self.hypothesis == ALT else np.zeros_like(d)

    @property
    def levels(self) -> tuple:
        return (0, 1) if self.model_id.startswith("B") else (0, 1, 2)

    def overrides(self) -> dict:
        """Parameters that differ from the model defaults."""
        base = _DEFAULTS[self.model_id]
        return {k: v for k, v in self.values.items() if base[k] != v}

    def __reduce__(self):
        # the read-only values proxy cannot be pickled; rebuild from overrides
        return (ModelParams, (self.model_id, self.hypothesis, self.overrides()))


def default_params(model_id: str) -> dict:
    return dict(_DEFAULTS[str(model_id).upper()])


_STRATA_ALIASES = {
    "x": "X", "w": "W", "none": "none", "": "none",
    "xw": "XW", "x*w": "XW", "x×w": "XW", "x,w": "XW", "xxw": "XW",
}


@dataclass(frozen=True)
class StrataSpec:
    """Which covariates form the strata: ``X``, ``W``, ``XW`` or ``none``."""

    covariates: str

    def __post_init__(self):
        key = str(self.covariates).strip().lower().replace(" ", "")
        if key not in _STRATA_ALIASES:
            raise InvalidParamsError(f"unknown strata spec {self.covariates!r}")
        object.__setattr__(self, "covariates", _STRATA_ALIASES[key])

    @property
    def uses_x(self) -> bool:
        return "X" in self.covariates

    @property
    def uses_w(self) -> bool:
        return "W" in self.covariates

    def labels(self, n_levels: int) -> tuple:
        if self.covariates == "XW":
            return tuple(f"x{x}w{w}" for x in range(n_levels) for w in (0, 1))
        if self.covariates == "X":
            return tuple(f"x{x}" for x in range(n_levels))
        if self.covariates == "W":
            return ("w0", "w1")
        return ("all",)

    def codes(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        if self.covariates == "XW":
            return 2 * x + w
        if self.covariates == "X":
            return x.copy()
        if self.covariates == "W":
            return w.copy()
        return np.zeros_like(x)

    def margins(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Per-unit covariate levels used as minimization margins."""
        cols = [c for c, use in ((x, self.uses_x), (w, self.uses_w)) if use]
        if not cols:
            return np.zeros((x.shape[0], 0), dtype=np.int64)
        return np.column_stack(cols)


@dataclass(frozen=True)
class PotentialUnit:
    y1: float
    y0: float
    x: int
    w: int
    s: object


@dataclass(frozen=True, eq=False)
class Population:
    """Column-wise population; indexing yields :class:`PotentialUnit` rows.

    ``x`` holds level codes, ``x_value`` the numeric covariate used in the
    outcome formula, ``w`` the categorized auxiliary covariate as 0/1, and
    ``s`` the stratum codes into ``strata``.
    """

    y1: np.ndarray
    y0: np.ndarray
    x: np.ndarray
    x_value: np.ndarray
    w: np.ndarray
    s: np.ndarray
    strata: tuple
    levels: tuple
    strata_spec: StrataSpec

    def __len__(self) -> int:
        return int(self.y1.shape[0])

    def __getitem__(self, i: int) -> PotentialUnit:
        return PotentialUnit(float(self.y1[i]), float(self.y0[i]), int(self.x[i]),
                             int(self.w[i]), self.strata[self.s[i]])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def margins(self) -> np.ndarray:
        return self.strata_spec.margins(self.x, self.w)


def _linear(p: ModelParams, u: np.ndarray):
    v = p.values
    n = u.shape[1]
    w_star = v["w_sd"] * normal_quantile(u[1])
    eps1, eps0 = normal_quantile(u[2]), normal_quantile(u[3])
    if p.model_id == "B1":
        x = (u[0] < v["p_x"]).astype(np.int64)
        xv = x.astype(float)
        beta, gamma, delta = v["beta"][0], v["gamma"][0], p.delta[0]
        main1 = (beta + delta) * xv + gamma * xv * w_star
        main0 = beta * xv
    else:
        x = np.minimum((u[0] * 3.0).astype(np.int64), 2)
        # dummy coding: level 0 -> (0,0), 1 -> (1,0), 2 -> (0,1)
        dummies = np.zeros((n, 2))
        dummies[x == 1, 0] = 1.0
        dummies[x == 2, 1] = 1.0
        beta, gamma = np.asarray(v["beta"]), np.asarray(v["gamma"])
        main1 = dummies @ (beta + p.delta) + w_star * (dummies @ gamma)
        main0 = dummies @ beta
        xv = x.astype(float)
    y1 = v["mu1"] + main1 + v["alpha1"] * w_star + v["sigma1"] * eps1
    y0 = v["mu0"] + main0 + v["alpha1"] * w_star + v["sigma0"] * eps0
    return y1, y0, x, xv, (w_star > 0).astype(np.int64)


def _nonlinear(p: ModelParams, u: np.ndarray):
    v = p.values
    lo, hi = v["x_range"]
    x_star = lo + (hi - lo) * u[0]
    x = np.searchsorted(np.asarray(v["cuts"]), x_star, side="right").astype(np.int64)
    w_star = v["w_sd"] * normal_quantile(u[1])
    eps1, eps0 = normal_quantile(u[2]), normal_quantile(u[3])
    beta, gamma, delta = v["beta"][0], v["gamma"][0], p.delta[0]
    scale = np.exp(v["hetero"] * x_star)
    y1 = (v["mu1"] + np.exp((beta + delta) * x_star) + v["alpha1"] * w_star
          + gamma * x_star * w_star + v["sigma1"] * scale * eps1)
    y0 = v["mu0"] + np.exp(beta * x_star) + v["alpha1"] * w_star + v["sigma0"] * scale * eps0
    return y1, y0, x, x_star, (w_star > 0).astype(np.int64)


def _binary(p: ModelParams, u: np.ndarray):
    v = p.values
    if p.model_id == "B3":
        x = (u[0] < v["p_x"]).astype(np.int64)
        xv = x.astype(float)
    else:
        x = np.minimum((u[0] * 3.0).astype(np.int64), 2)
        xv = np.asarray(v["x_values"])[x]
    w01 = (u[1] < 0.5).astype(np.int64)
    w = 2.0 * w01 - 1.0
    beta, gamma, delta = v["beta"][0], v["gamma"][0], p.delta[0]
    c = xv - v["center"]
    lin1 = v["mu1"] + (beta + delta) * c + v["alpha1"] * w + gamma * xv * w
    lin0 = v["mu0"] + beta * c + v["alpha1"] * w
    y1 = (lin1 > v["u_max"] * u[2]).astype(float)
    y0 = (lin0 > v["u_max"] * u[3]).astype(float)
    return y1, y0, x, xv, w01


def generate(params: ModelParams, strata: StrataSpec, n: int, stream: Stream) -> Population:
    """Draw ``n`` i.i.d. units from the model and label their strata."""
    if int(n) != n or n < 1:
        raise InvalidParamsError("n must be a positive integer")
    n = int(n)
    u = stream.uniform(4 * n).reshape(4, n)
    kind = params.model_id[1]
    if kind == "1":
        y1, y0, x, xv, w = _linear(params, u)
    elif kind == "2":
        y1, y0, x, xv, w = _nonlinear(params, u)
    else:
        y1, y0, x, xv, w = _binary(params, u)
    levels = params.levels
    return Population(
        y1=y1, y0=y0, x=x, x_value=xv, w=w,
        s=strata.codes(x, w),
        strata=strata.labels(len(levels)),
        levels=levels,
        strata_spec=strata,
    )


def observe(pop: Population, arms, pi: float = 0.5) -> TrialDataset:
    """Reveal ``y = a * y1 + (1 - a) * y0`` under the given assignment."""
    arms = np.asarray(arms, dtype=np.int64)
    if arms.shape != (len(pop),):
        raise LengthMismatchError(f"{arms.shape[0] if arms.ndim else 0} arms for {len(pop)} units")
    y = np.where(arms == 1, pop.y1, pop.y0)
    return TrialDataset.from_codes(y, arms, pop.s, pop.x, pop.strata, pop.levels, pi)


SYNTHETIC_COLUMNS = ("y", "a", "gender", "severity", "age")


def synthetic_trial_rows(n: int = 600, seed: int = 0, pi: float = 0.5) -> list[tuple]:
    """Placeholder trial data for exercising the CSV analysis workflow.

    Not a reconstruction of any real study. ``gender`` (F/M) and a
    three-level ``severity`` band define the strata, ``age`` is an
    additional covariate cut into three bands, and arms come from
    stratified permuted blocks over gender x severity. The treatment
    effect grows with severity, so severity has a genuine interaction and
    age has none. Rows follow :data:`SYNTHETIC_COLUMNS`.
    """
    from .randomization import DesignSpec, assign_codes

    if n < 1:
        raise InvalidParamsError("n must be positive")
    u = Stream(seed, 0).uniform(5 * n).reshape(5, n)
    gender = (u[0] < 0.5).astype(np.int64)
    severity = np.searchsorted([0.3, 0.7], u[1], side="right")
    age = np.searchsorted([0.35, 0.75], u[2], side="right")
    codes = 3 * gender + severity
    arms = assign_codes(DesignSpec("SBR", pi=pi), codes, 6, Stream(seed, 1))
    base = 10.0 + 2.0 * severity + 0.5 * age + 3.0 * normal_quantile(u[3])
    effect = 1.0 + 1.5 * severity + 1.0 * normal_quantile(u[4])
    y = base + arms * effect
    return [
        (round(float(y[i]), 6), int(arms[i]), "FM"[gender[i]], f"sev{severity[i]}", f"age{age[i]}")
        for i in range(n)
    ]

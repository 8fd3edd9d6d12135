"""Sequential treatment-assignment engines.

Every method consumes exactly one uniform from the stream per assignment,
so :func:`assign_all` and repeated :func:`assign_next` calls agree draw for
draw. Permuted blocks are sampled as an urn: a unit is treated with
probability (treated slots left in the block) / (slots left in the block),
which yields a uniformly random permutation of each block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import InvalidDesignError, MissingMarginsError, UnknownStratumError
from .rng import Stream
from .trial_data import check_pi

SR, SBR, SBCD, MIN = "SR", "SBR", "SBCD", "MIN"
METHODS = (SR, SBR, SBCD, MIN)

# |D| below this is treated as exact balance (D is a sum of multiples of pi)
_BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class DesignSpec:
    """Randomization method and its parameters.

    ``q`` is the asymptotic imbalance variance parameter per stratum:
    ``pi (1 - pi)`` for simple randomization, 0 for the strongly balanced
    stratified designs, and ``None`` (unknown) for minimization.
    """

    method: str
    pi: float = 0.5
    block_size: int = 6
    coin_p: float = 0.75

    def __post_init__(self):
        method = str(self.method).upper()
        if method not in METHODS:
            raise InvalidDesignError(f"unknown randomization method {self.method!r}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "pi", check_pi(self.pi))
        if method == SBR:
            if int(self.block_size) != self.block_size or self.block_size < 1:
                raise InvalidDesignError("block_size must be a positive integer")
            treated = self.block_size * self.pi
            if abs(treated - round(treated)) > 1e-9:
                raise InvalidDesignError(
                    f"block_size * pi = {treated:g} must be an integer"
                )
        if method in (SBCD, MIN) and not 0.5 < self.coin_p <= 1.0:
            raise InvalidDesignError("coin_p must lie in (1/2, 1]")

    @property
    def block_treated(self) -> int:
        return int(round(self.block_size * self.pi))

    @property
    def q(self) -> float | None:
        if self.method == SR:
            return self.pi * (1.0 - self.pi)
        if self.method in (SBR, SBCD):
            return 0.0
        return None

    def q_of_s(self, n_strata: int) -> np.ndarray | None:
        q = self.q
        return None if q is None else np.full(n_strata, q)


@dataclass
class RandomizerState:
    """Mutable per-trial assignment state. One owner at a time."""

    spec: DesignSpec
    strata: tuple
    stream: Stream
    n1: list = field(default_factory=list)
    n: list = field(default_factory=list)
    block_left: list = field(default_factory=list)
    block_treated_left: list = field(default_factory=list)
    margin_d: list = field(default_factory=list)

    @classmethod
    def new(cls, spec: DesignSpec, strata: Sequence[Hashable], seed: int = 0,
            stream: Stream | None = None) -> "RandomizerState":
        strata = tuple(strata)
        k = len(strata)
        return cls(
            spec=spec,
            strata=strata,
            stream=stream if stream is not None else Stream(seed, 0),
            n1=[0] * k,
            n=[0] * k,
            block_left=[0] * k,
            block_treated_left=[0] * k,
        )

    def index(self, s) -> int:
        try:
            return self.strata.index(s)
        except ValueError:
            raise UnknownStratumError(f"stratum {s!r} was not declared") from None

    def imbalance(self) -> dict:
        pi = self.spec.pi
        return {lab: self.n1[j] - pi * self.n[j] for j, lab in enumerate(self.strata)}


def _treat_probability(state: RandomizerState, j: int, margins) -> float:
    spec = state.spec
    pi = spec.pi
    if spec.method == SR:
        return pi
    if spec.method == SBR:
        if state.block_left[j] == 0:
            state.block_left[j] = spec.block_size
            state.block_treated_left[j] = spec.block_treated
        return state.block_treated_left[j] / state.block_left[j]
    if spec.method == SBCD:
        d = state.n1[j] - pi * state.n[j]
        if d < -_BALANCE_TOL:
            return spec.coin_p
        if d > _BALANCE_TOL:
            return 1.0 - spec.coin_p
        return pi
    # minimization over covariate margins
    if margins is None:
        raise MissingMarginsError("minimization needs the unit's covariate margins")
    if not state.margin_d:
        state.margin_d = [dict() for _ in margins]
    elif len(state.margin_d) != len(margins):
        raise MissingMarginsError(
            f"expected {len(state.margin_d)} margins, got {len(margins)}"
        )
    imb_treat = imb_ctrl = 0.0
    for table, level in zip(state.margin_d, margins):
        d = table.get(level, 0.0)
        imb_treat += abs(d + 1.0 - pi)
        imb_ctrl += abs(d - pi)
    if imb_treat < imb_ctrl - _BALANCE_TOL:
        return spec.coin_p
    if imb_treat > imb_ctrl + _BALANCE_TOL:
        return 1.0 - spec.coin_p
    return pi


def _record(state: RandomizerState, j: int, arm: int, margins) -> None:
    state.n[j] += 1
    state.n1[j] += arm
    if state.spec.method == SBR:
        state.block_left[j] -= 1
        state.block_treated_left[j] -= arm
    elif state.spec.method == MIN:
        step = arm - state.spec.pi
        for table, level in zip(state.margin_d, margins):
            table[level] = table.get(level, 0.0) + step


def _assign_with(state: RandomizerState, j: int, margins, u: float) -> int:
    p = _treat_probability(state, j, margins)
    arm = 1 if u < p else 0
    _record(state, j, arm, margins)
    return arm


def assign_next(state: RandomizerState, s, margins: Sequence | None = None) -> int:
    """Assign the next unit arriving in stratum ``s`` and update ``state``."""
    j = state.index(s)
    if state.spec.method == MIN and margins is None:
        raise MissingMarginsError("minimization needs the unit's covariate margins")
    return _assign_with(state, j, margins, state.stream.uniform1())


def assign_codes(spec: DesignSpec, codes: np.ndarray, n_strata: int, stream: Stream,
                 margins: np.ndarray | None = None) -> np.ndarray:
    """Assign a whole arrival sequence given integer stratum codes.

    Equivalent to folding :func:`assign_next` over the sequence with the same
    stream. ``margins`` (minimization only) is an ``(n, m)`` integer array.
    """
    codes = np.asarray(codes, dtype=np.int64)
    n = codes.shape[0]
    u = stream.uniform(n)
    pi = spec.pi
    if spec.method == SR:
        return (u < pi).astype(np.int64)

    arms = np.zeros(n, dtype=np.int64)
    if spec.method == SBR:
        bs, bt = spec.block_size, spec.block_treated
        left = [0] * n_strata
        tleft = [0] * n_strata
        for i, (j, ui) in enumerate(zip(codes.tolist(), u.tolist())):
            if left[j] == 0:
                left[j], tleft[j] = bs, bt
            if ui < tleft[j] / left[j]:
                arms[i] = 1
                tleft[j] -= 1
            left[j] -= 1
        return arms
    if spec.method == SBCD:
        hi, lo = spec.coin_p, 1.0 - spec.coin_p
        cnt = [0] * n_strata
        cnt1 = [0] * n_strata
        for i, (j, ui) in enumerate(zip(codes.tolist(), u.tolist())):
            dj = cnt1[j] - pi * cnt[j]
            p = hi if dj < -_BALANCE_TOL else lo if dj > _BALANCE_TOL else pi
            cnt[j] += 1
            if ui < p:
                arms[i] = 1
                cnt1[j] += 1
        return arms

    if margins is None:
        raise MissingMarginsError("minimization needs covariate margins")
    state = RandomizerState.new(spec, range(n_strata), stream=stream)
    rows = np.asarray(margins).tolist()
    for i, (j, ui) in enumerate(zip(codes.tolist(), u.tolist())):
        arms[i] = _assign_with(state, j, tuple(rows[i]), ui)
    return arms


def assign_all(spec: DesignSpec, strata_seq: Sequence, seed: int,
               margins: Sequence[Sequence] | None = None,
               strata: Sequence | None = None) -> list[int]:
    """Assign a full arrival sequence of stratum labels.

    Deterministic in ``(spec, strata_seq, margins, seed)``; uses stream
    ``(seed, 0)``.
    """
    from .trial_data import sort_labels

    declared = tuple(strata) if strata is not None else sort_labels(strata_seq)
    code_of = {lab: i for i, lab in enumerate(declared)}
    try:
        codes = np.array([code_of[s] for s in strata_seq], dtype=np.int64)
    except KeyError as exc:
        raise UnknownStratumError(f"stratum {exc.args[0]!r} was not declared") from None
    if spec.method == MIN:
        if margins is None or len(margins) != len(codes):
            raise MissingMarginsError("minimization needs one margin profile per unit")
        state = RandomizerState.new(spec, range(len(declared)), stream=Stream(seed, 0))
        return [assign_next(state, int(j), tuple(m)) for j, m in zip(codes, margins)]
    return assign_codes(spec, codes, len(declared), Stream(seed, 0)).tolist()


def empirical_q(d: np.ndarray, n_s: np.ndarray) -> np.ndarray:
    """Estimate q(s) from replicated final imbalances.

    ``d`` and ``n_s`` are ``(reps, strata)`` arrays of D_n(s) and n(s).
    Uses E[D_n(s)^2] / E[n(s)], valid because D_n(s) has mean zero.
    """
    d = np.asarray(d, dtype=float)
    n_s = np.asarray(n_s, dtype=float)
    return (d * d).mean(axis=0) / n_s.mean(axis=0)


def max_abs_prefix_imbalance(arms: np.ndarray, codes: np.ndarray, n_strata: int, pi: float) -> np.ndarray:
    """Largest |D_i(s)| over all prefixes, per stratum."""
    out = np.zeros(n_strata)
    for j in range(n_strata):
        sel = arms[codes == j]
        if sel.size:
            out[j] = np.max(np.abs(np.cumsum(sel - pi)))
    return out

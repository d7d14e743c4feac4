"""Conductance quantities, the (epsilon, beta)-closeness relation and the
perturbation bounds built on it, plus the three competing bounds.

Closeness only constrains *frequent* transitions: ``|1 - qhat(t|s)/q(t|s)| <=
beta`` is required when ``mu_s q(t|s)`` or ``mu_s qhat(t|s)`` reaches
``epsilon * zeta``, where ``mu`` is always the stationary law of ``q`` (the
relation is not symmetric). Under the admissible parameter region the
stationary law, exit laws and mean visit lengths of ``qhat`` are controlled
by constants depending only on the number of states.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from perturbmc import formulas, oracles
from perturbmc.core import (
    Chain,
    ChainError,
    Distribution,
    communicating_classes,
    is_irreducible,
    proper_subsets,
    random_chain,
)

TIE_RTOL = 1e-12


# --- conductance ----------------------------------------------------------------


@dataclass(frozen=True)
class Cut:
    value: float
    subset: frozenset[int]


def cut_value(chain: Chain, mu: Distribution, C: Iterable[int]) -> float:
    """Stationary frequency of transitions out of ``C``."""
    C = sorted(set(C))
    out = [i for i in range(chain.n) if i not in C]
    return float(mu.p[C] @ chain.q[np.ix_(C, out)].sum(axis=1))


def _min_cut(chain: Chain, mu: Distribution, candidates) -> Cut:
    # Candidates arrive in size-then-lex order; the first one within TIE_RTOL
    # of the minimum wins.
    cuts = [(cut_value(chain, mu, C), C) for C in candidates]
    if not cuts:
        raise ValueError("no candidate subsets")
    best = min(v for v, _ in cuts)
    for v, C in cuts:
        if v <= best * (1 + TIE_RTOL) + 1e-300:
            return Cut(v, C)
    raise AssertionError("unreachable")


def zeta(chain: Chain, mu: Distribution | None = None) -> Cut:
    """Minimum stationary escape frequency over proper nonempty subsets."""
    from perturbmc.graphs import check_cap

    check_cap(chain.n)
    mu = stationary(chain) if mu is None else mu
    return _min_cut(chain, mu, proper_subsets(chain.n))


def zeta_restricted(chain: Chain, mu: Distribution | None, S1: Iterable[int]) -> Cut:
    """Same minimum over nonempty strict subsets of ``S1``."""
    S1 = frozenset(S1)
    if len(S1) <= 1:
        raise ValueError("S1 must contain at least two states")
    mu = stationary(chain) if mu is None else mu
    return _min_cut(chain, mu, proper_subsets(chain.n, within=S1))


def L_const(n: int) -> int:
    """sum_{k=1}^{n-1} C(n, k) k^n, an upper bound on the number of all C-graphs."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return sum(math.comb(n, k) * k**n for k in range(1, n))


def stationary(chain: Chain) -> Distribution:
    """Stationary law via the graph formula: a ratio of positive sums, so no cancellation."""
    return formulas.stationary_fw(chain)


# --- closeness ------------------------------------------------------------------


@dataclass(frozen=True)
class ClosenessParams:
    epsilon: float
    beta: float
    subset: frozenset[int] | None = None
    a: float | None = None

    def __post_init__(self):
        if not (self.epsilon > 0 and self.beta > 0):
            raise ValueError("epsilon and beta must be positive")
        if self.subset is not None:
            object.__setattr__(self, "subset", frozenset(self.subset))
            if len(self.subset) <= 1:
                raise ValueError("the subset must contain at least two states")


@dataclass(frozen=True)
class Violation:
    s: int
    t: int
    ratio: float
    trigger: str


@dataclass(frozen=True)
class ClosenessReport:
    verdict: bool
    violations: tuple[Violation, ...]
    zeta_used: float
    threshold: float
    coincides_outside: bool | None = None

    def __post_init__(self):
        if self.verdict != (len(self.violations) == 0):
            raise ValueError("verdict must be true exactly when there are no violations")


def relative_change(q: float, qhat: float) -> float:
    if q == 0:
        return 0.0 if qhat == 0 else math.inf
    return abs(1.0 - qhat / q)


def _closeness(q: Chain, qhat: Chain, beta: float, mu: Distribution, threshold: float) -> list[Violation]:
    out = []
    n = q.n
    for s in range(n):
        for t in range(n):
            a = mu.p[s] * q.q[s, t] >= threshold
            b = mu.p[s] * qhat.q[s, t] >= threshold
            if not (a or b):
                continue
            r = relative_change(q.q[s, t], qhat.q[s, t])
            # q(t|s) = 0 with an active trigger: the ratio is undefined, so a violation
            if q.q[s, t] == 0 or r > beta:
                trig = "a,b" if a and b else ("a" if a else "b")
                out.append(Violation(s, t, r, trig))
    return out


def _check_spaces(q: Chain, qhat: Chain) -> None:
    if q.space != qhat.space:
        raise ChainError("chains have different state spaces")


def is_close(q: Chain, qhat: Chain, p: ClosenessParams, mu: Distribution | None = None) -> ClosenessReport:
    _check_spaces(q, qhat)
    mu = stationary(q) if mu is None else mu
    z = zeta(q, mu).value
    thr = p.epsilon * z
    v = _closeness(q, qhat, p.beta, mu, thr)
    return ClosenessReport(not v, tuple(v), z, thr)


def coincides_outside(q: Chain, qhat: Chain, S1: Iterable[int]) -> bool:
    rows = [s for s in range(q.n) if s not in set(S1)]
    return bool(np.array_equal(q.q[rows], qhat.q[rows]))


def is_close_on(q: Chain, qhat: Chain, p: ClosenessParams, mu: Distribution | None = None) -> ClosenessReport:
    """Closeness with the restricted conductance; also reports whether the rows
    outside the subset are unchanged (a separate hypothesis, not part of the verdict)."""
    if p.subset is None:
        raise ValueError("params.subset is required")
    _check_spaces(q, qhat)
    mu = stationary(q) if mu is None else mu
    z = zeta_restricted(q, mu, p.subset).value
    thr = p.epsilon * z
    v = _closeness(q, qhat, p.beta, mu, thr)
    return ClosenessReport(not v, tuple(v), z, thr, coincides_outside(q, qhat, p.subset))


# --- admissible parameters --------------------------------------------------------


def theorem1_eps_max(beta: float, n: int) -> float:
    return beta * (1 - beta) / (L_const(n) * n**4)


def theorem2_eps_max(beta: float, a: float, n: int) -> float:
    L = L_const(n)
    return 0.5 * (a / L) ** n * beta * (1 - beta) / (L * n**4)


def theorem1_gate(beta: float, epsilon: float, n: int) -> bool:
    return 0 < beta < 1 / 2**n and 0 < epsilon < theorem1_eps_max(beta, n)


def theorem2_gate(beta: float, epsilon: float, a: float, n: int) -> bool:
    return 0 < beta < 1 / 2**n and a > 0 and 0 < epsilon < theorem2_eps_max(beta, a, n)


def first_return_hit_probabilities(chain: Chain, S1: Iterable[int]) -> np.ndarray:
    """``P[s, t]``: probability from ``s`` that the first arrival after at least one step
    in (complement of S1) + {t} is at ``t``, for s, t in S1 (other entries NaN)."""
    S1 = sorted(set(S1))
    n = chain.n
    q = chain.q
    P = np.full((n, n), np.nan)
    for t in S1:
        free = [x for x in S1 if x != t]
        h = np.zeros(n)
        h[t] = 1.0
        if free:
            A = np.eye(len(free)) - q[np.ix_(free, free)]
            h[free] = oracles._solve(A, q[free, t], "first-passage probabilities")
        for s in S1:
            P[s, t] = q[s] @ h
    return np.clip(P, 0.0, 1.0)


def mixing_parameter(chain: Chain, S1: Iterable[int]) -> float:
    """Minimum over s, t in S1 (s = t included) of the first-return hit probability."""
    S1 = frozenset(S1)
    if len(S1) <= 1:
        raise ValueError("S1 must contain at least two states")
    P = first_return_hit_probabilities(chain, S1)
    idx = sorted(S1)
    return float(P[np.ix_(idx, idx)].min())


# --- bounds -----------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremBounds:
    stationary: float
    exit: float
    exit_sharp: float
    c: float
    dichotomy_threshold: float | None = None

    @property
    def stationary_vacuous(self) -> bool:
        return self.stationary >= 1

    @property
    def exit_vacuous(self) -> bool:
        # exit-law deviations never exceed 1
        return self.exit >= 1


def dichotomy_threshold(mu_S1: float, eta: float, n: int) -> float:
    """Visit-length level above which both chains count as slowly exiting S1."""
    return mu_S1 / (2 * n * eta)


def theorem_bounds(
    beta: float,
    n: int,
    L: int | None = None,
    epsilon: float | None = None,
    zeta1: float | None = None,
    mu_S1: float | None = None,
) -> TheoremBounds:
    L = L_const(n) if L is None else L
    thr = None
    if epsilon is not None and zeta1 is not None and mu_S1 is not None:
        thr = dichotomy_threshold(mu_S1, epsilon * zeta1, n)
    return TheoremBounds(
        stationary=18 * beta * L,
        exit=12 * beta * L,
        exit_sharp=beta * (8 * L + 3 * (n + 1)),
        c=2.0 * n * n,
        dichotomy_threshold=thr,
    )


def visit_dichotomy(K: float, Khat: float, c: float, threshold: float) -> tuple[bool, str]:
    """Either ``K/c <= Khat <= c K`` or both visit lengths reach ``threshold``."""
    if K / c <= Khat <= c * K:
        return True, "band"
    if K >= threshold and Khat >= threshold:
        return True, "threshold"
    return False, "neither"


NORMS = ("max-entry", "row-sum")


def matrix_norm(D: np.ndarray, kind: str = "max-entry") -> float:
    """``max-entry`` reproduces the reference values of the three-state example;
    ``row-sum`` is the induced infinity norm."""
    D = np.abs(np.asarray(D))
    if kind == "max-entry":
        return float(D.max())
    if kind == "row-sum":
        return float(D.sum(axis=1).max())
    raise ValueError(f"unknown norm {kind!r}")


def cho_meyer_bound(q: Chain, qhat: Chain, s: int, norm: str = "max-entry",
                    passage: oracles.PassageMatrix | None = None) -> float:
    """Half the perturbation norm times the largest mean first passage time into ``s``."""
    _check_spaces(q, qhat)
    M = (passage or oracles.mean_first_passage(q)).M
    others = [t for t in range(q.n) if t != s]
    return matrix_norm(q.q - qhat.q, norm) / 2 * float(M[others, s].max())


def kirkland_bound(q: Chain, qhat: Chain, s: int, norm: str = "max-entry",
                   convention: str | None = None) -> float:
    _check_spaces(q, qhat)
    A = oracles.fundamental_matrix(q, convention)
    return 0.5 * matrix_norm(q.q - qhat.q, norm) / 2 * oracles.deleted_inverse_norm(A, s)


def ocinneide_ratio(q: Chain, qhat: Chain) -> float:
    """Largest entry-wise ratio in either direction; infinite when a support changes."""
    _check_spaces(q, qhat)
    a, b = q.q, qhat.q
    both = (a > 0) & (b > 0)
    if np.any((a > 0) != (b > 0)):
        return math.inf
    if not both.any():
        return 1.0
    r = np.maximum(a[both] / b[both], b[both] / a[both])
    return float(r.max())


# --- deviation report ---------------------------------------------------------------


@dataclass(frozen=True)
class StateCheck:
    state: int
    actual: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class ExitCheck:
    subset: tuple[int, ...]
    start: int
    sup: float
    tv: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class VisitCheck:
    subset: tuple[int, ...]
    K: float
    Khat: float
    ratio: float
    c: float
    ok: bool


@dataclass(frozen=True)
class DichotomyCheck:
    K: float
    Khat: float
    c: float
    threshold: float
    ok: bool
    branch: str


@dataclass
class DeviationReport:
    mode: str
    params: ClosenessParams
    closeness: ClosenessReport
    gate: bool
    bounds: TheoremBounds
    qhat_irreducible: bool
    recurrent_class: tuple[int, ...] | None = None
    stationary: list[StateCheck] = field(default_factory=list)
    exits: list[ExitCheck] = field(default_factory=list)
    visits: list[VisitCheck] = field(default_factory=list)
    dichotomy: DichotomyCheck | None = None
    mixing: float | None = None
    cho_meyer: dict[int, float] = field(default_factory=dict)
    kirkland: dict[int, float] = field(default_factory=dict)
    ocinneide: float = 1.0
    norm: str = "max-entry"
    convention: str = ""
    violations: list[str] = field(default_factory=list)

    @property
    def hypotheses_hold(self) -> bool:
        if not (self.gate and self.closeness.verdict):
            return False
        if self.mode == "subset":
            return bool(self.closeness.coincides_outside)
        return True

    @property
    def theorem_holds(self) -> bool:
        """No inequality failed while the hypotheses held."""
        return not self.violations

    @property
    def max_stationary_deviation(self) -> float:
        return max((c.actual for c in self.stationary), default=0.0)

    def to_dict(self, labels: Sequence[str]) -> dict:
        def names(xs):
            return [labels[i] for i in xs]

        def fin(x):
            return x if x is None or math.isfinite(x) else ("inf" if x > 0 else "-inf")

        d = {
            "mode": self.mode,
            "params": {
                "epsilon": self.params.epsilon,
                "beta": self.params.beta,
                "subset": names(sorted(self.params.subset)) if self.params.subset else None,
                "a": self.params.a,
            },
            "gate": self.gate,
            "closeness": {
                "verdict": self.closeness.verdict,
                "zeta": self.closeness.zeta_used,
                "threshold": self.closeness.threshold,
                "coincides_outside": self.closeness.coincides_outside,
                "violations": [
                    {"s": labels[v.s], "t": labels[v.t], "ratio": fin(v.ratio), "trigger": v.trigger}
                    for v in self.closeness.violations
                ],
            },
            "bounds": {
                **asdict(self.bounds),
                "stationary_vacuous": self.bounds.stationary_vacuous,
                "exit_vacuous": self.bounds.exit_vacuous,
            },
            "qhat_irreducible": self.qhat_irreducible,
            "recurrent_class": names(self.recurrent_class) if self.recurrent_class else None,
            "mixing_parameter": self.mixing,
            "stationary": [
                {"state": labels[c.state], "actual": c.actual, "bound": c.bound, "ok": c.ok}
                for c in self.stationary
            ],
            "exit_laws": [
                {"subset": names(e.subset), "start": labels[e.start], "sup": e.sup, "tv": e.tv,
                 "bound": e.bound, "ok": e.ok}
                for e in self.exits
            ],
            "visit_lengths": [
                {"subset": names(v.subset), "K": fin(v.K), "Khat": fin(v.Khat), "ratio": fin(v.ratio),
                 "c": v.c, "ok": v.ok}
                for v in self.visits
            ],
            "dichotomy": None if self.dichotomy is None else {
                **{k: fin(v) if isinstance(v, float) else v for k, v in asdict(self.dichotomy).items()}
            },
            "competing": {
                "norm": self.norm,
                "fundamental_matrix": self.convention,
                "cho_meyer": {labels[s]: fin(v) for s, v in self.cho_meyer.items()},
                "kirkland": {labels[s]: fin(v) for s, v in self.kirkland.items()},
                "ocinneide": fin(self.ocinneide),
            },
            "hypotheses_hold": self.hypotheses_hold,
            "theorem_violations": list(self.violations),
        }
        return d


class _Engine:
    """Stationary laws and exit laws by graph formulas ("fw") or linear solves ("solve")."""

    def __init__(self, kind: str):
        if kind not in ("fw", "solve"):
            raise ValueError("engine must be 'fw' or 'solve'")
        self.kind = kind

    def stationary(self, chain: Chain) -> Distribution:
        if self.kind == "fw":
            return formulas.stationary_fw(chain)
        return oracles.stationary_solve(chain)

    def stationary_on(self, chain: Chain, R: Sequence[int]) -> Distribution:
        R = sorted(R)
        if len(R) == chain.n:
            return self.stationary(chain)
        mu = np.zeros(chain.n)
        if len(R) == 1:
            mu[R[0]] = 1.0
        else:
            sub = chain.q[np.ix_(R, R)]
            sub_chain = Chain.from_matrix(sub / sub.sum(axis=1, keepdims=True))
            mu[R] = self.stationary(sub_chain).p
        return Distribution(chain.space, mu)

    def exit_laws(self, chain: Chain, C: frozenset[int]) -> dict[int, np.ndarray]:
        if self.kind == "fw":
            return {s: formulas.exit_distribution_fw(chain, C, s).law.p for s in sorted(C)}
        inside, H, _ = oracles.absorption(chain, C)
        return {s: H[i] for i, s in enumerate(inside)}


def _visit_length(q: np.ndarray, mu: np.ndarray, C: Iterable[int]) -> float:
    C = sorted(set(C))
    out = [i for i in range(len(mu)) if i not in C]
    flow = float(mu[C] @ q[np.ix_(C, out)].sum(axis=1))
    mass = float(mu[C].sum())
    return math.inf if flow <= 0 else mass / flow


def _ratio(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b):
        return 1.0
    return a / b


def deviation_report(
    q: Chain,
    qhat: Chain,
    params: ClosenessParams,
    subsets: Iterable[Iterable[int]] | None = None,
    engine: str = "fw",
    norm: str = "max-entry",
    competing: bool = True,
) -> DeviationReport:
    """Compare actual sensitivities of ``qhat`` against the theorem bounds.

    Global mode (no ``params.subset``) checks relative stationary deviations,
    exit laws and visit lengths for every requested proper subset (default:
    all). Subset mode checks that S1 lies in one recurrent class of ``qhat``,
    the conditional stationary deviation on S1, exit laws and visit lengths
    for strict subsets of S1, and the visit-length dichotomy for S1 itself.
    Any failed inequality while the hypotheses hold is recorded in
    ``violations``.
    """
    _check_spaces(q, qhat)
    if not is_irreducible(q):
        raise formulas.ReducibleChainError("q must be irreducible")
    eng = _Engine(engine)
    n = q.n
    mu = eng.stationary(q)
    subset_mode = params.subset is not None
    if subset_mode:
        S1 = params.subset
        a = params.a if params.a is not None else mixing_parameter(q, S1)
        close = is_close_on(q, qhat, params, mu)
        gate = theorem2_gate(params.beta, params.epsilon, a, n)
    else:
        a = None
        close = is_close(q, qhat, params, mu)
        gate = theorem1_gate(params.beta, params.epsilon, n)
    mu_S1 = mu.mass(params.subset) if subset_mode else None
    bounds = theorem_bounds(params.beta, n, epsilon=params.epsilon,
                            zeta1=close.zeta_used if subset_mode else None, mu_S1=mu_S1)
    rep = DeviationReport(
        mode="subset" if subset_mode else "global",
        params=params,
        closeness=close,
        gate=gate,
        bounds=bounds,
        qhat_irreducible=is_irreducible(qhat),
        mixing=a,
        norm=norm,
    )
    hyp = rep.hypotheses_hold

    def flag(msg: str) -> None:
        if hyp:
            rep.violations.append(msg)

    labels = q.labels
    if subset_mode:
        S1 = params.subset
        R = next(
            (c for c, closed in communicating_classes(qhat.q) if closed and S1 <= c), None
        )
        if R is None:
            flag("THEOREM VIOLATION: states of S1 are not in one recurrent class of qhat")
            return _with_competing(rep, q, qhat, competing)
        rep.recurrent_class = tuple(sorted(R))
        muhat = eng.stationary_on(qhat, rep.recurrent_class)
        idx = sorted(S1)
        cond = mu.p[idx] / mu.p[idx].sum()
        condhat = muhat.p[idx] / muhat.p[idx].sum()
        for s, x, y in zip(idx, cond, condhat):
            dev = abs(1 - y / x)
            ok = dev <= bounds.stationary
            rep.stationary.append(StateCheck(s, dev, bounds.stationary, ok))
            if not ok:
                flag(f"THEOREM VIOLATION: conditional deviation at {labels[s]} = {dev!r}")
        cand = list(proper_subsets(n, within=S1)) if subsets is None else [
            frozenset(C) for C in subsets if frozenset(C) < S1
        ]
        _exit_and_visit(rep, q, qhat, mu, muhat, cand, eng, flag)
        K = _visit_length(q.q, mu.p, S1)
        Khat = _visit_length(qhat.q, muhat.p, S1)
        ok, branch = visit_dichotomy(K, Khat, bounds.c, bounds.dichotomy_threshold)
        rep.dichotomy = DichotomyCheck(K, Khat, bounds.c, bounds.dichotomy_threshold, ok, branch)
        if not ok:
            flag(f"THEOREM VIOLATION: visit-length dichotomy fails on S1 (K={K!r}, Khat={Khat!r})")
        return _with_competing(rep, q, qhat, competing)

    if not rep.qhat_irreducible:
        flag("THEOREM VIOLATION: qhat is reducible")
        return _with_competing(rep, q, qhat, competing)
    muhat = eng.stationary(qhat)
    for s in range(n):
        dev = abs(1 - muhat.p[s] / mu.p[s])
        ok = dev <= bounds.stationary
        rep.stationary.append(StateCheck(s, dev, bounds.stationary, ok))
        if not ok:
            flag(f"THEOREM VIOLATION: stationary deviation at {labels[s]} = {dev!r}")
    cand = list(proper_subsets(n)) if subsets is None else [frozenset(C) for C in subsets]
    _exit_and_visit(rep, q, qhat, mu, muhat, cand, eng, flag)
    return _with_competing(rep, q, qhat, competing)


def _exit_and_visit(rep, q, qhat, mu, muhat, subsets, eng, flag):
    labels = q.labels
    for C in subsets:
        C = frozenset(C)
        laws, lawshat = eng.exit_laws(q, C), eng.exit_laws(qhat, C)
        for s in sorted(C):
            diff = np.abs(laws[s] - lawshat[s])
            sup, tv = float(diff.max()), float(diff.sum() / 2)
            ok = sup < rep.bounds.exit
            rep.exits.append(ExitCheck(tuple(sorted(C)), s, sup, tv, rep.bounds.exit, ok))
            if not ok:
                flag(f"THEOREM VIOLATION: exit law from {labels[s]} on {q.space.names(C)} moved by {sup!r}")
        K = _visit_length(q.q, mu.p, C)
        Khat = _visit_length(qhat.q, muhat.p, C)
        r = _ratio(Khat, K)
        c = rep.bounds.c
        ok = 1 / c <= r <= c
        rep.visits.append(VisitCheck(tuple(sorted(C)), K, Khat, r, c, ok))
        if not ok:
            flag(f"THEOREM VIOLATION: visit-length ratio {r!r} on {q.space.names(C)} outside [1/{c}, {c}]")


def _with_competing(rep: DeviationReport, q: Chain, qhat: Chain, competing: bool) -> DeviationReport:
    rep.ocinneide = ocinneide_ratio(q, qhat)
    rep.convention = oracles.pinned_convention()
    if not competing:
        return rep
    M = oracles.mean_first_passage(q)
    A = oracles.fundamental_matrix(q, rep.convention)
    for s in range(q.n):
        rep.cho_meyer[s] = cho_meyer_bound(q, qhat, s, rep.norm, passage=M)
        try:
            rep.kirkland[s] = 0.5 * matrix_norm(q.q - qhat.q, rep.norm) / 2 * oracles.deleted_inverse_norm(A, s)
        except formulas.ReducibleChainError:
            rep.kirkland[s] = math.inf
    return rep


# --- random admissible pairs ----------------------------------------------------------


@dataclass(frozen=True)
class AdmissiblePair:
    q: Chain
    qhat: Chain
    params: ClosenessParams


def _perturb_rows(q: Chain, rows: Iterable[int], mu: Distribution, threshold: float,
                  beta: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb the given rows of ``q``.

    Frequent entries (``mu_s q(t|s) >= threshold``) are scaled by a factor in
    ``1 +- beta/3``. Rare entries are zeroed, kept, or redrawn uniformly
    below ``threshold / (2 mu_s)``, each with probability 1/3; this includes
    switching on entries where ``q`` is zero. Rows are then renormalized.
    """
    Q = q.q.copy()
    for s in rows:
        freq = mu.p[s] * Q[s] >= threshold
        u = rng.uniform(-1, 1, size=q.n)
        new = np.where(freq, Q[s] * (1 + beta / 3 * u), 0.0)
        rare = np.flatnonzero(~freq)
        choice = rng.integers(0, 3, size=len(rare))
        cap = threshold / (2 * mu.p[s])
        for t, k in zip(rare, choice):
            new[t] = 0.0 if k == 0 else (Q[s, t] if k == 1 else rng.uniform(0, cap))
        Q[s] = new / new.sum()
    return Q


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def random_admissible_pair(
    n: int,
    rng: np.random.Generator,
    beta: float | None = None,
    epsilon: float | None = None,
    tiny: float = 0.5,
    max_tries: int = 50,
) -> AdmissiblePair:
    """Random ``(q, qhat)`` meeting the global closeness hypotheses.

    ``q`` comes from :func:`perturbmc.core.random_chain` with a share of its
    entries shrunk to 1e-12..1e-6 so that rare transitions exist. ``beta`` is
    log-uniform on [1e-6, 2^-n) and ``epsilon`` uniform on (0, eps_max)
    unless given. ``qhat`` comes from :func:`_perturb_rows` on every row and
    is re-checked with :func:`is_close`; draws that fail are retried.
    """
    for _ in range(max_tries):
        b = beta if beta is not None else _log_uniform(rng, 1e-6, 0.999 / 2**n)
        e = epsilon if epsilon is not None else float(rng.uniform(0.01, 0.99)) * theorem1_eps_max(b, n)
        q = random_chain(n, rng, density=0.6, tiny=tiny)
        mu = stationary(q)
        thr = e * zeta(q, mu).value
        qhat = q.with_matrix(_perturb_rows(q, range(n), mu, thr, b, rng))
        params = ClosenessParams(e, b)
        if theorem1_gate(b, e, n) and is_close(q, qhat, params, mu).verdict:
            return AdmissiblePair(q, qhat, params)
    raise RuntimeError("could not draw an admissible pair")


def random_block_chain(
    sizes: tuple[int, int],
    rng: np.random.Generator,
    leak: float = 1e-3,
    ultra_rare: bool = False,
) -> Chain:
    """Two blocks; the first is S1. Between-block mass per row is at most ``leak``.

    Within S1 all entries are positive. With ``ultra_rare`` the S1 -> S2
    transitions are 1e-30..1e-25, far below any admissible closeness
    threshold, so a perturbation may cut them.
    """
    k1, k2 = sizes
    n = k1 + k2
    S1, S2 = list(range(k1)), list(range(k1, n))
    Q = np.zeros((n, n))
    Q[np.ix_(S1, S1)] = rng.gamma(2.0, size=(k1, k1)) + 0.05
    if k2 == 1:
        Q[k1, k1] = 1.0
    else:
        inner = random_chain(k2, rng, density=0.7).q
        Q[np.ix_(S2, S2)] = inner
    Q /= Q.sum(axis=1, keepdims=True)
    for s in S1:
        m = _log_uniform(rng, 1e-30, 1e-25) if ultra_rare else rng.uniform(0.1, 1.0) * leak
        w = rng.dirichlet(np.ones(k2))
        Q[s, S1] *= 1 - m
        Q[s, S2] = m * w
    for s in S2:
        m = rng.uniform(0.1, 1.0) * leak
        w = rng.dirichlet(np.ones(k1))
        Q[s, S2] *= 1 - m
        Q[s, S1] = m * w
    return Chain.from_matrix(Q / Q.sum(axis=1, keepdims=True))


def random_block_pair(
    n: int,
    rng: np.random.Generator,
    beta: float | None = None,
    max_tries: int = 50,
) -> AdmissiblePair:
    """Random pair meeting the subset-mode hypotheses.

    S1 is the first block (2..n-1 states). ``a`` is the computed mixing
    parameter, ``epsilon`` uniform below the admissible bound, and only rows
    in S1 are perturbed (same rule as :func:`random_admissible_pair`, with
    the restricted conductance setting the threshold). Half of the draws use
    ultra-rare exits from S1 so that ``qhat`` may fail to be irreducible.
    """
    for _ in range(max_tries):
        k1 = int(rng.integers(2, n))
        q = random_block_chain((k1, n - k1), rng, ultra_rare=bool(rng.integers(0, 2)))
        S1 = frozenset(range(k1))
        a = mixing_parameter(q, S1)
        b = beta if beta is not None else _log_uniform(rng, 1e-6, 0.999 / 2**n)
        e = float(rng.uniform(0.01, 0.99)) * theorem2_eps_max(b, a, n)
        mu = stationary(q)
        thr = e * zeta_restricted(q, mu, S1).value
        qhat = q.with_matrix(_perturb_rows(q, sorted(S1), mu, thr, b, rng))
        params = ClosenessParams(e, b, S1, a)
        rep = is_close_on(q, qhat, params, mu)
        if theorem2_gate(b, e, a, n) and rep.verdict and rep.coincides_outside:
            return AdmissiblePair(q, qhat, params)
    raise RuntimeError("could not draw an admissible block pair")

"""Graph formulas for the stationary law, exit times, exit laws and visit statistics.

Each quantity is a ratio of sums of graph weights. Exit laws use the
probability-normalized orientation ``sum over G_{s,t}(C) / sum over G(C)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from perturbmc.core import Chain, ChainError, Distribution, is_irreducible
from perturbmc.graphs import family


class ReducibleChainError(ChainError):
    pass


@dataclass(frozen=True)
class ExitLaw:
    """Law of the first state outside ``domain`` reached from ``origin``."""

    origin: int
    domain: frozenset[int]
    law: Distribution

    def __post_init__(self):
        if self.origin not in self.domain:
            raise ValueError("origin must belong to the domain")
        support = set(np.flatnonzero(self.law.p > 0).tolist())
        if support & set(self.domain):
            raise ValueError("exit law puts mass inside the domain")


@dataclass(frozen=True)
class VisitStats:
    domain: frozenset[int]
    entry: Distribution
    mean_length: float


def _require_irreducible(chain: Chain) -> None:
    if not is_irreducible(chain):
        raise ReducibleChainError("chain is reducible")


def _check_subset(chain: Chain, C: Iterable[int]) -> frozenset[int]:
    C = frozenset(int(x) for x in C)
    if not C:
        raise ValueError("subset must be nonempty")
    if len(C) >= chain.n:
        raise ValueError("subset must be a proper subset of the state space")
    if not C <= set(range(chain.n)):
        raise ValueError("subset contains unknown states")
    return C


def tree_sums(chain: Chain) -> np.ndarray:
    """``W[s]``: total weight of the (S minus s)-graphs, i.e. arborescences rooted at s."""
    n = chain.n
    return np.array(
        [family(n, set(range(n)) - {s}).weights(chain.q).sum() for s in range(n)]
    )


def stationary_fw(chain: Chain) -> Distribution:
    _require_irreducible(chain)
    w = tree_sums(chain)
    mu = w / w.sum()
    mu = mu / mu.sum()
    return Distribution(chain.space, mu)


def _denominator(chain: Chain, C: frozenset[int]) -> float:
    den = family(chain.n, C).weights(chain.q).sum()
    if den <= 0:
        raise ReducibleChainError(
            f"no positive-weight graph on {chain.space.names(C)}: the set contains a closed class"
        )
    return den


def exit_time_fw(chain: Chain, C: Iterable[int], s: int) -> float:
    """Expected number of steps to reach the complement of ``C`` from ``s``."""
    C = _check_subset(chain, C)
    if s not in C:
        raise ValueError("start state must lie in C")
    q, n = chain.q, chain.n
    den = _denominator(chain, C)
    num = family(n, C - {s}).weights(q).sum()
    for t in sorted(C - {s}):
        fam = family(n, C - {t})
        num += fam.weights(q)[fam.leading_mask(s, t)].sum()
    return float(num / den)


def exit_distribution_fw(chain: Chain, C: Iterable[int], s: int) -> ExitLaw:
    C = _check_subset(chain, C)
    if s not in C:
        raise ValueError("start state must lie in C")
    fam = family(chain.n, C)
    w = fam.weights(chain.q)
    den = w.sum()
    if den <= 0:
        raise ReducibleChainError("no positive-weight graph on C")
    j = fam.domain.index(s)
    law = np.bincount(fam.ends[:, j], weights=w, minlength=chain.n) / den
    law = law / law.sum()
    return ExitLaw(s, C, Distribution(chain.space, law))


def _flow_out(q: np.ndarray, mu: np.ndarray, C: frozenset[int]) -> float:
    inside = sorted(C)
    outside = [i for i in range(len(mu)) if i not in C]
    return float(mu[inside] @ q[np.ix_(inside, outside)].sum(axis=1))


def _flow_in(q: np.ndarray, mu: np.ndarray, C: frozenset[int]) -> float:
    return _flow_out(q, mu, frozenset(range(len(mu))) - C)


def flow_balance(chain: Chain, C: Iterable[int], mu: Distribution | None = None) -> tuple[float, float]:
    """(flow out of C, flow into C) under the stationary law; equal for stationary mu."""
    C = _check_subset(chain, C)
    mu = stationary_fw(chain) if mu is None else mu
    return _flow_out(chain.q, mu.p, C), _flow_in(chain.q, mu.p, C)


def entry_distribution(chain: Chain, C: Iterable[int], mu: Distribution | None = None) -> Distribution:
    """Long-run law of the first state of a visit to ``C``."""
    C = _check_subset(chain, C)
    mu = stationary_fw(chain) if mu is None else mu
    outside = [i for i in range(chain.n) if i not in C]
    inflow = mu.p[outside] @ chain.q[outside, :]
    nu = np.zeros(chain.n)
    idx = sorted(C)
    nu[idx] = inflow[idx]
    total = nu.sum()
    if total <= 0:
        raise ReducibleChainError("no stationary flow enters C")
    return Distribution(chain.space, nu / total)


def visit_length(chain: Chain, C: Iterable[int], mu: Distribution | None = None) -> float:
    """Mean length of a visit to ``C``: stationary mass of C over its exit flow."""
    C = _check_subset(chain, C)
    mu = stationary_fw(chain) if mu is None else mu
    out = _flow_out(chain.q, mu.p, C)
    if out <= 0:
        return float("inf")
    return mu.mass(C) / out


def visit_length_entry_weighted(chain: Chain, C: Iterable[int]) -> float:
    """Entry-law average of expected exit times; equals :func:`visit_length`."""
    C = _check_subset(chain, C)
    nu = entry_distribution(chain, C)
    return float(sum(nu.p[s] * exit_time_fw(chain, C, s) for s in sorted(C)))


def visit_stats(chain: Chain, C: Iterable[int]) -> VisitStats:
    C = _check_subset(chain, C)
    mu = stationary_fw(chain)
    return VisitStats(C, entry_distribution(chain, C, mu), visit_length(chain, C, mu))


__all__ = [
    "ExitLaw",
    "ReducibleChainError",
    "VisitStats",
    "entry_distribution",
    "exit_distribution_fw",
    "exit_time_fw",
    "flow_balance",
    "stationary_fw",
    "tree_sums",
    "visit_length",
    "visit_length_entry_weighted",
    "visit_stats",
]

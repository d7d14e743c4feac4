"""C-graphs: acyclic functional digraphs with one outgoing edge per state of C.

A C-graph ``g`` assigns each ``s`` in ``C`` a successor ``g(s) != s`` such that
following successors from any state of ``C`` leaves ``C``. Families of such
graphs only depend on the number of states and on ``C``, so they are
enumerated once and cached; weights are evaluated against a transition matrix
on demand.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

from perturbmc.core import Chain, ChainError

DEFAULT_CAP = 8


class CapExceeded(ChainError):
    """Raised when enumeration is requested beyond the state-count cap."""


_cap = DEFAULT_CAP


def set_cap(cap: int) -> None:
    global _cap
    _cap = int(cap)


def get_cap() -> int:
    return _cap


def check_cap(n: int) -> None:
    if n > _cap:
        raise CapExceeded(
            f"{n} states exceeds the enumeration cap of {_cap}; raise it with --cap"
        )


@dataclass(frozen=True)
class CGraph:
    """One graph; ``successor[i]`` is the target of the edge leaving ``domain[i]``."""

    domain: tuple[int, ...]
    successor: tuple[int, ...]

    def __post_init__(self):
        if len(self.domain) != len(self.successor):
            raise ValueError("domain and successor lengths differ")
        order = sorted(range(len(self.domain)), key=lambda i: self.domain[i])
        object.__setattr__(self, "domain", tuple(int(self.domain[i]) for i in order))
        object.__setattr__(self, "successor", tuple(int(self.successor[i]) for i in order))

    @classmethod
    def from_edges(cls, edges: dict[int, int] | Iterable[tuple[int, int]]) -> "CGraph":
        items = list(edges.items()) if isinstance(edges, dict) else list(edges)
        return cls(tuple(s for s, _ in items), tuple(t for _, t in items))

    @property
    def edges(self) -> dict[int, int]:
        return dict(zip(self.domain, self.successor))

    def is_valid(self) -> bool:
        """One edge per domain state, no self-loops, no cycle inside the domain."""
        if len(set(self.domain)) != len(self.domain):
            return False
        e = self.edges
        if any(s == t for s, t in e.items()):
            return False
        for s in e:
            seen = set()
            while s in e:
                if s in seen:
                    return False
                seen.add(s)
                s = e[s]
        return True

    def leads_to(self, s: int) -> int:
        """Endpoint outside the domain of the path starting at ``s``."""
        e = self.edges
        if s not in e:
            raise ValueError(f"state {s} is not in the graph's domain")
        for _ in range(len(e) + 1):
            s = e[s]
            if s not in e:
                return s
        raise ValueError("graph contains a cycle")

    def restrict(self, D: Iterable[int]) -> "CGraph":
        D = set(D)
        if not D <= set(self.domain):
            raise ValueError("restriction set is not contained in the domain")
        e = self.edges
        return CGraph.from_edges({s: e[s] for s in sorted(D)})

    def union(self, other: "CGraph") -> "CGraph":
        if set(self.domain) & set(other.domain):
            raise ValueError("graphs have overlapping domains")
        return CGraph.from_edges({**self.edges, **other.edges})

    def weight(self, q: np.ndarray) -> float:
        return float(np.prod([q[s, t] for s, t in zip(self.domain, self.successor)]))

    def format(self, labels) -> str:
        return ", ".join(f"{labels[s]}->{labels[t]}" for s, t in zip(self.domain, self.successor))


@lru_cache(maxsize=4096)
def _enumerate(n: int, domain: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """All C-graphs on ``domain`` as (successor array, endpoint array).

    Every successor function is generated in lexicographic order, then
    cyclic ones are rejected by iterating the map ``|C|`` times: acyclic
    paths have settled on a fixed point outside ``C`` by then.
    """
    k = len(domain)
    if k == 0:
        empty = np.zeros((1, 0), dtype=np.int64)
        return empty, empty
    choices = [np.array([t for t in range(n) if t != s]) for s in domain]
    grids = np.meshgrid(*choices, indexing="ij")
    succ = np.stack([g.ravel() for g in grids], axis=1)
    m = len(succ)
    full = np.tile(np.arange(n), (m, 1))
    full[:, list(domain)] = succ
    rows = np.arange(m)[:, None]
    cur = np.tile(np.array(domain), (m, 1))
    for _ in range(k):
        cur = full[rows, cur]
    in_domain = np.isin(cur, domain)
    ok = ~in_domain.any(axis=1)
    succ, ends = succ[ok], cur[ok]
    succ.setflags(write=False)
    ends.setflags(write=False)
    return succ, ends


class GraphFamily:
    """A set of C-graphs sharing one domain, stored as successor arrays.

    Rows of ``succ`` are canonically (lexicographically) ordered, and
    ``ends[i, j]`` is the state that ``domain[j]`` leads to along graph ``i``.
    """

    def __init__(self, n: int, domain: Iterable[int], succ: np.ndarray, ends: np.ndarray):
        self.n = n
        self.domain = tuple(sorted(domain))
        self.succ = succ
        self.ends = ends

    def __len__(self) -> int:
        return len(self.succ)

    def __iter__(self) -> Iterator[CGraph]:
        for row in self.succ:
            yield CGraph(self.domain, tuple(int(x) for x in row))

    def __getitem__(self, i: int) -> CGraph:
        return CGraph(self.domain, tuple(int(x) for x in self.succ[i]))

    def __repr__(self):
        return f"GraphFamily(domain={self.domain}, size={len(self)})"

    @property
    def members(self) -> list[CGraph]:
        return list(self)

    def weights(self, q: np.ndarray) -> np.ndarray:
        """Vector of p(g) for every member; the empty graph has weight 1."""
        q = np.asarray(q)
        if not self.domain:
            return np.ones(len(self))
        return np.prod(q[list(self.domain), self.succ], axis=1)

    def log_weights(self, q: np.ndarray) -> np.ndarray:
        """Log-space weights, for chains with entries small enough to underflow."""
        q = np.asarray(q)
        if not self.domain:
            return np.zeros(len(self))
        with np.errstate(divide="ignore"):
            return np.log(q[list(self.domain), self.succ]).sum(axis=1)

    def select(self, mask: np.ndarray) -> "GraphFamily":
        mask = np.asarray(mask, dtype=bool)
        return GraphFamily(self.n, self.domain, self.succ[mask], self.ends[mask])

    def leading_mask(self, s: int, t: int) -> np.ndarray:
        """Members along which ``s`` leads to ``t``."""
        j = self.domain.index(s)
        return self.ends[:, j] == t

    def index_of(self, g: CGraph) -> int:
        if g.domain != self.domain:
            return -1
        hit = np.flatnonzero((self.succ == np.array(g.successor)).all(axis=1))
        return int(hit[0]) if len(hit) else -1

    def __contains__(self, g: CGraph) -> bool:
        return self.index_of(g) >= 0


def family(n: int, domain: Iterable[int]) -> GraphFamily:
    """G(domain) for any ``domain`` with ``domain != S``; the empty domain is allowed."""
    dom = tuple(sorted(set(domain)))
    if len(dom) >= n:
        raise ValueError("the domain of a C-graph must be a proper subset")
    check_cap(n)
    succ, ends = _enumerate(n, dom)
    return GraphFamily(n, dom, succ, ends)


def enumerate_graphs(C: Iterable[int], n: int) -> GraphFamily:
    """G(C) for a proper nonempty subset ``C`` of ``range(n)``."""
    C = frozenset(C)
    if not C:
        raise ValueError("C must be nonempty")
    if len(C) >= n or not C <= set(range(n)):
        raise ValueError("C must be a proper subset of the state space")
    return family(n, C)


def weight(g: CGraph, chain: Chain) -> float:
    return g.weight(chain.q)


def eta_maximal_set(C: Iterable[int], chain: Chain, eta: float) -> GraphFamily:
    """Graphs whose weight is at least ``eta`` times the largest weight in G(C)."""
    fam = enumerate_graphs(C, chain.n)
    w = fam.weights(chain.q)
    return fam.select(w >= eta * w.max())


def leads_to(g: CGraph, s: int) -> int:
    return g.leads_to(s)


def restrict(g: CGraph, D: Iterable[int]) -> CGraph:
    return g.restrict(D)


def graphs_leading(C: Iterable[int], s: int, t: int, n: int) -> GraphFamily:
    """G_{s,t}(C): graphs of G(C) along which ``s`` leads to ``t``."""
    C = frozenset(C)
    if s not in C:
        raise ValueError("s must belong to C")
    if t in C:
        raise ValueError("t must lie outside C")
    fam = enumerate_graphs(C, n)
    return fam.select(fam.leading_mask(s, t))


def all_paths_lead_outside(g: CGraph, target_complement_of: Iterable[int]) -> bool:
    """Whether every path of ``g`` ends outside the given set."""
    block = set(target_complement_of)
    return all(g.leads_to(s) not in block for s in g.domain)


def total_graph_count(n: int) -> int:
    """Sum of |G(C)| over all proper nonempty C."""
    from perturbmc.core import proper_subsets

    return sum(len(enumerate_graphs(C, n)) for C in proper_subsets(n))


def format_family(fam: GraphFamily, chain: Chain) -> list[str]:
    """Lines ``s1->t1, s2->t2 | weight`` in canonical order."""
    w = fam.weights(chain.q)
    return [f"{g.format(chain.labels)} | {float(wi)!r}" for g, wi in zip(fam, w)]

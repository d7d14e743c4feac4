"""State spaces, transition matrices and the chain file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-9


class ChainError(ValueError):
    """Raised for malformed or non-stochastic chain input."""


@dataclass(frozen=True)
class StateSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ChainError("a state space needs at least two states")
        if len(set(labels)) != len(labels):
            dup = sorted({x for x in labels if labels.count(x) > 1})
            raise ChainError(f"duplicate state label(s): {', '.join(dup)}")

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise ChainError(f"unknown state label {label!r}") from None

    def subset(self, labels: Iterable) -> frozenset[int]:
        """Map labels to a frozenset of dense indices."""
        return frozenset(self.index(x) for x in labels)

    def names(self, subset: Iterable[int]) -> list[str]:
        return [self.labels[i] for i in sorted(subset)]

    @classmethod
    def default(cls, n: int) -> "StateSpace":
        return cls(tuple(str(i + 1) for i in range(n)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Chain:
    """A labeled row-stochastic transition matrix; ``q[s, t]`` is q(t|s)."""

    space: StateSpace
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        n = self.space.n
        if q.shape != (n, n):
            raise ChainError(f"matrix shape {q.shape} does not match {n} states")
        if not np.all(np.isfinite(q)):
            raise ChainError("matrix contains non-finite entries")
        if np.any(q < 0):
            s, t = np.argwhere(q < 0)[0]
            raise ChainError(
                f"negative entry q({self.space.labels[t]}|{self.space.labels[s]}) = {q[s, t]}"
            )
        if np.any(q > 1 + ROW_SUM_TOL):
            raise ChainError("matrix entry exceeds 1")
        sums = q.sum(axis=1)
        for s, total in enumerate(sums):
            if total == 0:
                raise ChainError(f"row {self.space.labels[s]!r} is all zeros")
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ChainError(
                    f"non-stochastic row {self.space.labels[s]!r}: sums to {total!r}"
                )
        object.__setattr__(self, "q", _readonly(q / sums[:, None]))

    @classmethod
    def from_matrix(cls, q, labels: Sequence | None = None) -> "Chain":
        q = np.asarray(q, dtype=float)
        space = StateSpace(tuple(labels)) if labels is not None else StateSpace.default(len(q))
        return cls(space, q)

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def labels(self) -> tuple[str, ...]:
        return self.space.labels

    def with_matrix(self, q) -> "Chain":
        return Chain(self.space, q)

    def __eq__(self, other):
        if not isinstance(other, Chain):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.q, other.q)

    def __hash__(self):
        return hash((self.space, self.q.tobytes()))

    def __repr__(self):
        return f"Chain(labels={list(self.labels)}, q={self.q.tolist()})"


@dataclass(frozen=True, eq=False)
class Distribution:
    space: StateSpace
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (self.space.n,):
            raise ChainError("distribution length does not match state space")
        if np.any(p < 0) or abs(p.sum() - 1.0) > ROW_SUM_TOL:
            raise ChainError("not a probability vector")
        object.__setattr__(self, "p", _readonly(p))

    def __getitem__(self, label) -> float:
        return float(self.p[self.space.index(label)])

    def as_dict(self) -> dict[str, float]:
        return {lab: float(x) for lab, x in zip(self.space.labels, self.p)}

    def mass(self, subset: Iterable[int]) -> float:
        return float(sum(self.p[i] for i in subset))


def parse_chain(text: str) -> Chain:
    """Parse a chain document: a JSON object with ``states`` and ``matrix``.

    Entries may be numbers or strings holding simple fractions such as
    ``"1/10"``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChainError(f"malformed chain document: {exc}") from None
    if not isinstance(doc, dict) or "states" not in doc or "matrix" not in doc:
        raise ChainError("chain document needs 'states' and 'matrix' fields")
    states, matrix = doc["states"], doc["matrix"]
    if not isinstance(states, list) or not all(isinstance(s, str) for s in states):
        raise ChainError("'states' must be an array of strings")
    if not isinstance(matrix, list) or not all(isinstance(r, list) for r in matrix):
        raise ChainError("'matrix' must be an array of rows")
    if len(matrix) != len(states) or any(len(r) != len(states) for r in matrix):
        raise ChainError("'matrix' must be square with one row per state")
    rows = [[parse_number(x) for x in row] for row in matrix]
    return Chain(StateSpace(tuple(states)), np.array(rows, dtype=float))


def parse_number(x) -> float:
    """Accept ints, floats, and strings such as ``"0.1"`` or ``"1/10"``."""
    from fractions import Fraction

    if isinstance(x, bool):
        raise ChainError(f"not a number: {x!r}")
    if isinstance(x, (int, float)):
        return float(x)
    if isinstance(x, str):
        try:
            return float(Fraction(x.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ChainError(f"not a number: {x!r}")


def serialize_chain(chain: Chain) -> str:
    """Inverse of :func:`parse_chain`; floats are written with ``repr`` precision."""
    rows = ",\n    ".join(json.dumps([float(x) for x in row]) for row in chain.q)
    return f'{{\n  "states": {json.dumps(list(chain.labels))},\n  "matrix": [\n    {rows}\n  ]\n}}\n'


def chain_hash(chain: Chain) -> str:
    """Short content hash; entries are rounded to 12 significant digits so
    that renormalization noise from a parse round trip does not change it."""
    matrix = [[f"{x:.12g}" for x in row] for row in chain.q]
    payload = json.dumps({"states": list(chain.labels), "matrix": matrix}, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _components(q: np.ndarray) -> tuple[int, np.ndarray]:
    return connected_components(q > 0, directed=True, connection="strong")


def is_irreducible(chain: Chain) -> bool:
    """True iff the digraph of positive entries is strongly connected."""
    ncomp, _ = _components(chain.q)
    return ncomp == 1


def communicating_classes(q: np.ndarray) -> list[tuple[frozenset[int], bool]]:
    """Strong components of the positive-entry digraph with a closed flag.

    A class is closed (recurrent) when no positive transition leaves it.
    Classes are returned ordered by their smallest member.
    """
    ncomp, lab = _components(np.asarray(q))
    out = []
    for k in range(ncomp):
        members = frozenset(np.flatnonzero(lab == k).tolist())
        outside = [i for i in range(len(lab)) if i not in members]
        rows = sorted(members)
        closed = not outside or not np.any(np.asarray(q)[np.ix_(rows, outside)] > 0)
        out.append((members, closed))
    return sorted(out, key=lambda x: min(x[0]))


def closed_classes(chain: Chain) -> list[frozenset[int]]:
    return [c for c, closed in communicating_classes(chain.q) if closed]


def proper_subsets(n: int, within: Iterable[int] | None = None, include_full=False):
    """Yield nonempty subsets of ``within`` (default all states) as frozensets.

    The full set is skipped unless ``include_full``. Order is by size, then
    lexicographic, so reductions over it are deterministic.
    """
    from itertools import combinations

    base = sorted(range(n) if within is None else within)
    top = len(base) if include_full else len(base) - 1
    for k in range(1, top + 1):
        for combo in combinations(base, k):
            yield frozenset(combo)


def random_chain(
    n: int,
    rng: np.random.Generator,
    density: float = 0.6,
    tiny: float = 0.0,
    tiny_scale: tuple[float, float] = (1e-12, 1e-6),
    labels: Sequence | None = None,
) -> Chain:
    """Random irreducible chain.

    A random Hamiltonian cycle guarantees irreducibility; other off-cycle
    entries are switched on with probability ``density``. Each extra entry is
    shrunk to a value in ``tiny_scale`` (log-uniform) with probability
    ``tiny``, which produces the rarely-used transitions the closeness relation
    is designed around.
    """
    order = rng.permutation(n)
    support = np.zeros((n, n), dtype=bool)
    support[order, np.roll(order, -1)] = True
    extra = (rng.random((n, n)) < density) & ~support
    support |= extra
    w = rng.gamma(1.0, size=(n, n)) * support
    small = extra & (rng.random((n, n)) < tiny)
    lo, hi = np.log(tiny_scale[0]), np.log(tiny_scale[1])
    w[small] = np.exp(rng.uniform(lo, hi, size=small.sum()))
    # keep the cycle edges away from zero so the chain is robustly irreducible
    cyc = (order, np.roll(order, -1))
    w[cyc] = np.maximum(w[cyc], 0.05)
    q = w / w.sum(axis=1, keepdims=True)
    space = StateSpace(tuple(labels)) if labels is not None else StateSpace.default(n)
    return Chain(space, q)

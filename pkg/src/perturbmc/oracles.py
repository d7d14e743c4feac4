"""Independent ground truth: dense linear solves, passage times, simulation.

Nothing here touches graph enumeration, so these routines can validate the
graph formulas.

Random streams
--------------
All randomness comes from numpy's PCG64 seeded through ``SeedSequence``.
Run ``r`` of a sweep seeded with ``seed`` uses ``SeedSequence(seed,
spawn_key=(r,))``; within one simulation, state ``s`` draws its successors
from child ``s`` of that sequence. Outputs are therefore reproducible from
``(seed, run index, N)`` alone, independent of scheduling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.linalg

from perturbmc.core import (
    Chain,
    ChainError,
    Distribution,
    StateSpace,
    chain_hash,
    communicating_classes,
)
from perturbmc.formulas import ExitLaw, ReducibleChainError

COND_WARN = 1e12


def _solve(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    """LU solve with partial pivoting; singular systems raise, ill-conditioned ones warn."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu = scipy.linalg.lu_factor(A, check_finite=True)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            raise ReducibleChainError(f"singular system while solving for {what}") from None
    if np.any(np.abs(np.diag(lu[0])) < 1e-300):
        raise ReducibleChainError(f"singular system while solving for {what}")
    cond = np.linalg.cond(A)
    if cond > COND_WARN:
        warnings.warn(f"condition number {cond:.3g} while solving for {what}", RuntimeWarning)
    return scipy.linalg.lu_solve(lu, b)


def stationary_vector(q: np.ndarray) -> np.ndarray:
    """Solve mu (I - q) = 0, sum(mu) = 1, the last equation replaced by normalization."""
    q = np.asarray(q, dtype=float)
    n = len(q)
    if n == 1:
        return np.ones(1)
    A = (np.eye(n) - q).T.copy()
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    mu = _solve(A, b, "the stationary distribution")
    if np.any(mu < -1e-12):
        raise ReducibleChainError("stationary solve returned negative mass (reducible chain?)")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_solve(chain: Chain) -> Distribution:
    closed = [c for c, is_closed in communicating_classes(chain.q) if is_closed]
    if len(closed) != 1 or len(closed[0]) != chain.n:
        names = [chain.space.names(c) for c in closed]
        raise ReducibleChainError(f"chain is reducible; closed classes: {names}")
    return Distribution(chain.space, stationary_vector(chain.q))


def stationary_on_class(chain: Chain, R: Iterable[int]) -> Distribution:
    """Stationary law of the chain restricted to a closed class ``R`` (zero elsewhere)."""
    idx = sorted(R)
    sub = chain.q[np.ix_(idx, idx)]
    if not np.allclose(sub.sum(axis=1), 1.0, atol=1e-12):
        raise ChainError("the given set is not closed")
    mu = np.zeros(chain.n)
    mu[idx] = stationary_vector(sub / sub.sum(axis=1, keepdims=True))
    return Distribution(chain.space, mu)


def absorption(chain: Chain, C: Iterable[int]) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Make the complement of ``C`` absorbing and solve for all starts in ``C``.

    Returns ``(states of C, H, tau)`` where ``H[i, t]`` is the probability
    that the chain started at ``C[i]`` first leaves ``C`` at ``t`` and
    ``tau[i]`` is the expected exit time.
    """
    inside = sorted(set(C))
    if not inside or len(inside) >= chain.n:
        raise ValueError("subset must be proper and nonempty")
    outside = [i for i in range(chain.n) if i not in inside]
    q = chain.q
    A = np.eye(len(inside)) - q[np.ix_(inside, inside)]
    R = np.zeros((len(inside), chain.n))
    R[:, outside] = q[np.ix_(inside, outside)]
    rhs = np.column_stack([R, np.ones(len(inside))])
    try:
        sol = _solve(A, rhs, "absorption probabilities")
    except ReducibleChainError:
        raise ReducibleChainError(
            f"I - Q restricted to {chain.space.names(inside)} is singular: the set contains a closed class"
        ) from None
    return inside, sol[:, :-1], sol[:, -1]


def exit_distribution_solve(chain: Chain, C: Iterable[int], s: int) -> ExitLaw:
    inside, H, _ = absorption(chain, C)
    if s not in inside:
        raise ValueError("start state must lie in C")
    law = np.clip(H[inside.index(s)], 0.0, None)
    return ExitLaw(s, frozenset(inside), Distribution(chain.space, law / law.sum()))


def hitting_time_solve(chain: Chain, C: Iterable[int], s: int) -> float:
    inside, _, tau = absorption(chain, C)
    if s not in inside:
        raise ValueError("start state must lie in C")
    return float(tau[inside.index(s)])


@dataclass(frozen=True, eq=False)
class PassageMatrix:
    """``M[t, s]``: mean first passage time from t to s; diagonal holds mean return times."""

    space: StateSpace
    M: np.ndarray


def mean_first_passage(chain: Chain) -> PassageMatrix:
    mu = stationary_solve(chain).p
    n = chain.n
    M = np.zeros((n, n))
    for s in range(n):
        others = [t for t in range(n) if t != s]
        _, _, tau = absorption(chain, others)
        M[others, s] = tau
        M[s, s] = 1.0 / mu[s]
    return PassageMatrix(chain.space, M)


# Fundamental-matrix conventions. "I-q" is what the Kirkland bound uses: the
# printed deleted-inverse of the three-state example is reproduced by it and
# not by the Kemeny-Snell inverse.
CONVENTIONS = ("kemeny-snell", "I-q")


def fundamental_matrix(chain: Chain, convention: str | None = None) -> np.ndarray:
    """The matrix ``A`` entering the Kirkland bound.

    ``"kemeny-snell"`` is ``Z = (I - q + 1 mu^T)^{-1}``; ``"I-q"`` is ``I - q``.
    The default is the pinned convention (see :func:`pinned_convention`).
    """
    convention = convention or pinned_convention()
    n = chain.n
    if convention == "I-q":
        return np.eye(n) - chain.q
    if convention == "kemeny-snell":
        mu = stationary_solve(chain).p
        return np.linalg.inv(np.eye(n) - chain.q + np.outer(np.ones(n), mu))
    raise ValueError(f"unknown convention {convention!r}")


def deleted_inverse(A: np.ndarray, s: int) -> np.ndarray:
    keep = [i for i in range(len(A)) if i != s]
    sub = np.asarray(A)[np.ix_(keep, keep)]
    if abs(np.linalg.det(sub)) < 1e-300:
        raise ReducibleChainError(f"deleted matrix A_{s} is singular")
    return np.linalg.inv(sub)


def deleted_inverse_norm(A: np.ndarray, s: int) -> float:
    """Max absolute row sum of the inverse of ``A`` with row and column ``s`` removed."""
    return float(np.abs(deleted_inverse(A, s)).sum(axis=1).max())


_pinned: str | None = None


def pinned_convention() -> str:
    """Pick the convention reproducing the printed three-state deleted inverse.

    For q = [[0, 1-d, d], [1, 0, 0], [1, 0, 0]] the inverse of A with state 3
    removed must equal [[1/d, 1/d - 1], [1/d, 1/d]]. Kemeny-Snell is tried
    first. The winner is cached.
    """
    global _pinned
    if _pinned is None:

        def reproduces(convention: str, d: float) -> bool:
            chain = Chain.from_matrix([[0, 1 - d, d], [1, 0, 0], [1, 0, 0]])
            target = np.array([[1 / d, 1 / d - 1], [1 / d, 1 / d]])
            got = deleted_inverse(fundamental_matrix(chain, convention), 2)
            return bool(np.allclose(got, target, rtol=0, atol=1e-9))

        winners = [c for c in CONVENTIONS if all(reproduces(c, d) for d in (0.1, 0.01))]
        if not winners:
            raise RuntimeError("no fundamental-matrix convention reproduces the reference inverse")
        _pinned = winners[0]
    return _pinned


# --- simulation ---------------------------------------------------------------


def seed_sequence(seed: int, run: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(run),))


@dataclass(frozen=True, eq=False)
class Trajectory:
    space: StateSpace
    states: np.ndarray
    seed: int | None = None
    chain_hash: str | None = None

    def __len__(self):
        return len(self.states)

    def labels(self) -> list[str]:
        return [self.space.labels[i] for i in self.states]


def simulate(chain: Chain, s0: int, N: int, seed: int, run: int = 0) -> Trajectory:
    """A length-``N`` path starting at ``s0``, reproducible from ``(seed, run)``.

    Each state owns a pre-drawn stream of successors; the k-th visit to a
    state consumes the k-th entry of its stream.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    n = chain.n
    children = seed_sequence(seed, run).spawn(n)
    streams = []
    for s in range(n):
        rng = np.random.Generator(np.random.PCG64(children[s]))
        streams.append(rng.choice(n, size=N - 1, p=chain.q[s]).tolist() if N > 1 else [])
    ptr = [0] * n
    out = [0] * N
    x = int(s0)
    out[0] = x
    for p in range(1, N):
        k = ptr[x]
        ptr[x] = k + 1
        x = streams[x][k]
        out[p] = x
    return Trajectory(chain.space, np.array(out, dtype=np.int64), seed, chain_hash(chain))


TRAJ_MAGIC = "# perturbmc-trajectory"


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    header = f"{TRAJ_MAGIC} chain={traj.chain_hash} seed={traj.seed} steps={len(traj)}"
    labels = traj.space.labels
    body = "\n".join(labels[i] for i in traj.states)
    Path(path).write_text(f"{header}\n{body}\n")


def read_trajectory(path: str | Path, chain: Chain) -> Trajectory:
    """Read a trajectory file and check it was generated by ``chain``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(TRAJ_MAGIC):
        raise ChainError("not a trajectory file (missing header)")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(TRAJ_MAGIC):].split())
    expected = chain_hash(chain)
    if fields.get("chain") != expected:
        raise ChainError(
            f"trajectory was generated by chain {fields.get('chain')}, not {expected}"
        )
    states = np.array([chain.space.index(x.strip()) for x in lines[1:] if x.strip()], dtype=np.int64)
    if len(states) == 0:
        raise ChainError("trajectory is empty")
    seed = fields.get("seed")
    return Trajectory(
        chain.space, states, None if seed in (None, "None") else int(seed), expected
    )


@dataclass(frozen=True, eq=False)
class EmpiricalEstimate:
    """Transition counts of a trajectory and the derived estimates.

    ``undefined`` lists the states never left along the trajectory; their
    rows of ``matrix`` are NaN and :attr:`chain` refuses to build.
    """

    space: StateSpace
    counts: np.ndarray
    matrix: np.ndarray
    occupancy: Distribution
    closed_loop: bool
    undefined: tuple[int, ...] = field(default=())

    @property
    def chain(self) -> Chain:
        if self.undefined:
            names = self.space.names(self.undefined)
            raise ChainError(f"no outgoing transition observed from state(s) {names}")
        return Chain(self.space, self.matrix)


def empirical_matrix(traj: Trajectory) -> EmpiricalEstimate:
    n = traj.space.n
    x = np.asarray(traj.states)
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (x[:-1], x[1:]), 1)
    rows = counts.sum(axis=1)
    undefined = tuple(int(s) for s in np.flatnonzero(rows == 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = counts / rows[:, None]
    matrix[rows == 0] = np.nan
    occ = np.bincount(x, minlength=n) / len(x)
    return EmpiricalEstimate(
        traj.space, counts, matrix, Distribution(traj.space, occ),
        bool(x[0] == x[-1]), undefined,
    )


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    visits: int


MIN_VISITS = 30


def visit_length_estimate(states: np.ndarray, C: Iterable[int], batches: int = 30) -> MCEstimate:
    """Ratio estimator of the mean visit length from an observed path.

    The point estimate is the number of stages spent in ``C`` divided by the
    number of exits from ``C``. Its standard error comes from batch means over
    consecutive completed visits, which absorbs the serial dependence of
    visit lengths.
    """
    x = np.asarray(states)
    inside = np.isin(x, list(C))
    exits = inside[:-1] & ~inside[1:]
    n_exit = int(exits.sum())
    if n_exit < MIN_VISITS:
        raise ValueError(f"only {n_exit} completed visits observed; need at least {MIN_VISITS}")
    value = inside[:-1].sum() / n_exit
    entries = np.flatnonzero(inside[1:] & ~inside[:-1]) + 1
    if inside[0]:
        entries = np.concatenate([[0], entries])
    ends = np.flatnonzero(exits) + 1
    k = min(len(entries), len(ends))
    lengths = (ends[:k] - entries[:k]).astype(float)
    b = min(batches, k // 2) if k >= 4 else 1
    if b >= 2:
        size = k // b
        means = lengths[: b * size].reshape(b, size).mean(axis=1)
        stderr = float(means.std(ddof=1) / np.sqrt(b))
    else:
        stderr = float(lengths.std(ddof=1) / np.sqrt(k)) if k > 1 else float("inf")
    return MCEstimate(float(value), stderr, n_exit)


def mc_estimate_K(chain: Chain, C: Iterable[int], N: int, seed: int, s0: int = 0, run: int = 0) -> MCEstimate:
    traj = simulate(chain, s0, N, seed, run)
    return visit_length_estimate(traj.states, C)

"""Small hand-built chains used in docs, the ``example`` command and tests."""

from __future__ import annotations

from perturbmc.core import Chain


def three_state(delta: float) -> Chain:
    """1 -> 2 w.p. 1-delta, 1 -> 3 w.p. delta; 2 and 3 return to 1."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return Chain.from_matrix(
        [[0.0, 1 - delta, delta], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], labels=["1", "2", "3"]
    )


def three_state_pair(delta: float, eta: float) -> tuple[Chain, Chain]:
    """The three-state chain and its perturbation out of the rare state 3:
    ``qhat(1|3) = 1 - eta``, ``qhat(2|3) = eta``."""
    q = three_state(delta)
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    qhat = q.with_matrix(
        [[0.0, 1 - delta, delta], [1.0, 0.0, 0.0], [1 - eta, eta, 0.0]]
    )
    return q, qhat


def leaky_pair(eta: float, lam: float) -> Chain:
    """States a, b, c. From a (resp. b): to c w.p. eta, else to b (resp. a).
    From c: stay w.p. 1-lam, else to a or b with lam/2 each."""
    return Chain.from_matrix(
        [
            [0.0, 1 - eta, eta],
            [1 - eta, 0.0, eta],
            [lam / 2, lam / 2, 1 - lam],
        ],
        labels=["a", "b", "c"],
    )


def restriction_counterexample() -> Chain:
    """Four states with q(2|1) = q(1|2) = 2/3, q(3|1) = q(4|2) = 1/3.

    Rows 3 and 4 are uniform; they play no role in the graphs on {1, 2}.
    """
    u = [0.25] * 4
    return Chain.from_matrix(
        [[0, 2 / 3, 1 / 3, 0], [2 / 3, 0, 0, 1 / 3], u, u], labels=["1", "2", "3", "4"]
    )


def two_cycle() -> Chain:
    return Chain.from_matrix([[0.0, 1.0], [1.0, 0.0]], labels=["1", "2"])

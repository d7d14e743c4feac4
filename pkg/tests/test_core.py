import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from perturbmc import catalog
from perturbmc.core import (
    Chain,
    ChainError,
    Distribution,
    StateSpace,
    chain_hash,
    closed_classes,
    is_irreducible,
    parse_chain,
    proper_subsets,
    random_chain,
    serialize_chain,
)
from perturbmc.oracles import stationary_solve

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 6)


def doc(states, matrix):
    return json.dumps({"states": states, "matrix": matrix})


def test_parse_three_state_document():
    c = parse_chain(doc(["1", "2", "3"], [[0, "9/10", "1/10"], [1, 0, 0], [1, 0, 0]]))
    assert c.labels == ("1", "2", "3")
    assert np.array_equal(c.q, catalog.three_state(0.1).q)


def test_parse_two_cycle():
    c = parse_chain(doc(["1", "2"], [[0, 1], [1, 0]]))
    assert c == catalog.two_cycle()


@pytest.mark.parametrize(
    "text, match",
    [
        ("{not json", "malformed"),
        ('{"states": ["1", "2"]}', "fields"),
        (doc(["1", "2"], [[0.5, 0.4], [1, 0]]), "row"),
        (doc(["1", "2"], [[1.5, -0.5], [1, 0]]), "negative"),
        (doc(["1", "1"], [[0, 1], [1, 0]]), "duplicate"),
        (doc(["1", "2"], [[0, 1]]), "square"),
        (doc(["1", "2"], [[0, 0], [1, 0]]), "zero"),
        (doc(["1", "2"], [[0, "x"], [1, 0]]), "number"),
        (doc(["1"], [[1]]), "two states"),
    ],
)
def test_parse_rejects(text, match):
    with pytest.raises(ChainError, match=match):
        parse_chain(text)


def test_rows_renormalized_within_tolerance():
    c = Chain.from_matrix([[0.5, 0.5 + 4e-10], [1, 0]])
    assert c.q.sum(axis=1)[0] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ChainError):
        Chain.from_matrix([[0.5, 0.5 + 1e-8], [1, 0]])


def test_chain_is_read_only(ex3):
    with pytest.raises(ValueError):
        ex3.q[0, 0] = 1.0


def test_state_space_lookup():
    sp = StateSpace(("a", "b", "c"))
    assert sp.index("b") == 1
    assert sp.subset(["c", "a"]) == frozenset({0, 2})
    assert sp.names({2, 0}) == ["a", "c"]
    with pytest.raises(ChainError):
        sp.index("z")


def test_distribution_validation():
    sp = StateSpace.default(2)
    d = Distribution(sp, np.array([0.25, 0.75]))
    assert d["2"] == 0.75 and d.mass({0, 1}) == 1.0
    with pytest.raises(ChainError):
        Distribution(sp, np.array([0.5, 0.6]))


def test_irreducibility_examples(ex3):
    assert is_irreducible(ex3)
    blocks = Chain.from_matrix(
        [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]]
    )
    assert not is_irreducible(blocks)
    assert closed_classes(blocks) == [frozenset({0, 1}), frozenset({2, 3})]
    assert not is_irreducible(catalog.leaky_pair(0.01, 0.0))


def test_proper_subsets_order():
    got = [tuple(sorted(c)) for c in proper_subsets(3)]
    assert got == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)]
    assert len(list(proper_subsets(4, within=[1, 2, 3]))) == 6


@given(seeds, sizes)
def test_serialize_round_trip(seed, n):
    c = random_chain(n, np.random.default_rng(seed), tiny=0.3)
    back = parse_chain(serialize_chain(c))
    assert back.labels == c.labels
    assert np.allclose(back.q, c.q, rtol=0, atol=1e-12)
    assert chain_hash(back) == chain_hash(c)


@given(seeds, sizes, st.floats(0.0, 1.0))
def test_irreducibility_invariant_under_relabeling(seed, n, drop):
    rng = np.random.default_rng(seed)
    q = random_chain(n, rng).q.copy()
    # knock out some entries so both outcomes occur
    mask = rng.random(q.shape) < drop * 0.5
    q[mask] = 0.0
    for s in range(n):
        if q[s].sum() == 0:
            q[s, s] = 1.0
    q /= q.sum(axis=1, keepdims=True)
    perm = rng.permutation(n)
    c = Chain.from_matrix(q)
    cp = Chain.from_matrix(q[np.ix_(perm, perm)])
    assert is_irreducible(c) == is_irreducible(cp)


@given(seeds, sizes)
def test_random_chain_irreducible_with_positive_stationary(seed, n):
    c = random_chain(n, np.random.default_rng(seed), tiny=0.5)
    assert is_irreducible(c)
    assert np.all(stationary_solve(c).p > 0)

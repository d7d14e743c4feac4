import numpy as np
import pytest
from hypothesis import given, strategies as st

from perturbmc import catalog, formulas, oracles
from perturbmc.core import Chain, proper_subsets, random_chain
from perturbmc.graphs import CapExceeded

seeds = st.integers(0, 2**32 - 1)
sizes = st.integers(2, 6)


def test_stationary_example(ex3):
    assert np.allclose(formulas.stationary_fw(ex3).p, [0.5, 0.45, 0.05], atol=1e-12, rtol=0)
    assert np.allclose(formulas.stationary_fw(catalog.two_cycle()).p, [0.5, 0.5])


def test_stationary_rejects_reducible_and_large():
    with pytest.raises(formulas.ReducibleChainError):
        formulas.stationary_fw(catalog.leaky_pair(0.1, 0.0))
    with pytest.raises(CapExceeded):
        formulas.stationary_fw(random_chain(9, np.random.default_rng(0)))


def test_exit_time_examples(ex3):
    assert formulas.exit_time_fw(ex3, {1}, 1) == pytest.approx(1.0)
    assert formulas.exit_time_fw(ex3, {1, 2}, 1) == pytest.approx(1.0)
    assert oracles.hitting_time_solve(ex3, {1, 2}, 1) == pytest.approx(1.0)
    lazy = Chain.from_matrix([[0.7, 0.3], [0.5, 0.5]])
    assert formulas.exit_time_fw(lazy, {0}, 0) == pytest.approx(1 / 0.3)


def test_exit_distribution_examples(ex3):
    law = formulas.exit_distribution_fw(ex3, {0}, 0).law
    assert np.allclose(law.p, [0.0, 0.9, 0.1])
    c = random_chain(4, np.random.default_rng(1))
    law = formulas.exit_distribution_fw(c, {2}, 2).law.p
    expect = c.q[2].copy()
    expect[2] = 0
    assert np.allclose(law, expect / (1 - c.q[2, 2]), rtol=1e-12)


def test_exit_rejects_bad_subset(ex3):
    with pytest.raises(ValueError):
        formulas.exit_time_fw(ex3, {0, 1, 2}, 0)
    with pytest.raises(ValueError):
        formulas.exit_distribution_fw(ex3, {0}, 1)


def test_entry_distribution_examples(ex3):
    nu = formulas.entry_distribution(ex3, {1, 2})
    assert np.allclose(nu.p, [0.0, 0.9, 0.1])
    # state 1 is entered only from state 2 (single edge 2 -> 1 into C = {1})
    c = Chain.from_matrix([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
    nu = formulas.entry_distribution(c, {0, 1})
    assert np.allclose(nu.p, [1.0, 0.0, 0.0])


def test_visit_length_examples(ex3):
    assert formulas.visit_length(ex3, {1, 2}) == pytest.approx(1.0)
    assert formulas.visit_length(ex3, {0}) == pytest.approx(1.0)
    st_ = formulas.visit_stats(ex3, {1, 2})
    assert st_.mean_length == pytest.approx(1.0) and st_.entry.p.sum() == pytest.approx(1.0)


@given(seeds, sizes)
def test_stationary_is_invariant(seed, n):
    c = random_chain(n, np.random.default_rng(seed), tiny=0.3)
    mu = formulas.stationary_fw(c).p
    assert np.allclose(mu @ c.q, mu, atol=1e-10, rtol=0)
    assert mu.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(mu, oracles.stationary_solve(c).p, atol=1e-10, rtol=0)


@given(seeds, sizes)
def test_exit_formulas_match_absorbing_oracle(seed, n):
    c = random_chain(n, np.random.default_rng(seed))
    for C in proper_subsets(n):
        for s in C:
            law = formulas.exit_distribution_fw(c, C, s).law.p
            assert law.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.allclose(law, oracles.exit_distribution_solve(c, C, s).law.p, atol=1e-10, rtol=0)
            T = formulas.exit_time_fw(c, C, s)
            assert T == pytest.approx(oracles.hitting_time_solve(c, C, s), rel=1e-8)


@given(seeds, sizes)
def test_flow_balance_and_entry_weighted_visit_length(seed, n):
    c = random_chain(n, np.random.default_rng(seed), tiny=0.3)
    for C in proper_subsets(n):
        out, inn = formulas.flow_balance(c, C)
        assert out == pytest.approx(inn, abs=1e-12)
        nu = formulas.entry_distribution(c, C)
        assert nu.p.sum() == pytest.approx(1.0, abs=1e-12)
        K = formulas.visit_length(c, C)
        assert K >= 1 - 1e-12
        assert formulas.visit_length_entry_weighted(c, C) == pytest.approx(K, rel=1e-8)


def _exit_law_mp(q, C, s, dps=50):
    import mpmath as mp

    with mp.workdps(dps):
        inside = sorted(C)
        out = [t for t in range(len(q)) if t not in C]
        A = mp.matrix([[int(a == b) - mp.mpf(q[a, b]) for b in inside] for a in inside])
        law = np.zeros(len(q))
        for t in out:
            h = mp.lu_solve(A, mp.matrix([mp.mpf(q[a, t]) for a in inside]))
            law[t] = float(h[inside.index(s)])
    return law


@pytest.mark.parametrize("seed", range(6))
def test_exit_law_entrywise_against_high_precision(seed):
    # rare exits: the graph formula keeps full relative accuracy on tiny targets
    c = random_chain(5, np.random.default_rng(seed), tiny=0.6, tiny_scale=(1e-14, 1e-9))
    for C in [{0, 1}, {1, 2, 3}, {0, 2, 4}]:
        for s in C:
            fw = formulas.exit_distribution_fw(c, C, s).law.p
            ref = _exit_law_mp(c.q, C, s)
            assert np.allclose(fw, ref, rtol=1e-12, atol=0)

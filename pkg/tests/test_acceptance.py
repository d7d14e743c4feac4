"""Acceptance criteria, one test per criterion at its stated tolerance and time limit.

Run ``pytest tests/test_acceptance.py -v`` (the PASS/FAIL lines are repeated
in the terminal summary) or ``python tests/test_acceptance.py``.
"""

import math
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import _props  # noqa: E402
from perturbmc import catalog, formulas, graphs, oracles, perturb  # noqa: E402
from perturbmc.core import proper_subsets, random_chain  # noqa: E402
from perturbmc.perturb import ClosenessParams  # noqa: E402

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # standalone run
    ACCEPTANCE_LINES = []

CRITERIA = {}


def criterion(num, title, limit):
    def wrap(fn):
        CRITERIA[num] = (title, limit, fn)
        return fn

    return wrap


def run_criterion(num):
    title, limit, fn = CRITERIA[num]
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    ok = ok and dt < limit
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {title}: {detail} [{dt:.2f}s, limit {limit}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok, line


# --- three-state example ---------------------------------------------------------------


@criterion(1, "three-state stationary law and conductance", 1)
def c1():
    q = catalog.three_state(0.1)
    target = np.array([0.5, 0.45, 0.05])
    fw = formulas.stationary_fw(q).p
    la = oracles.stationary_solve(q).p
    cut = perturb.zeta(q)
    err = max(np.abs(fw - target).max(), np.abs(la - target).max())
    ok = err <= 1e-12 and abs(cut.value - 0.05) <= 1e-12 and cut.subset == frozenset({2})
    return ok, f"max |mu - target| = {err:.1e}, zeta = {cut.value!r}, argmin {sorted(s + 1 for s in cut.subset)}"


@criterion(2, "mean first passage times M23 = 2/delta, M13 = 2/delta - 1", 1)
def c2():
    errs = []
    for d in (0.1, 0.01):
        M = oracles.mean_first_passage(catalog.three_state(d)).M
        errs += [abs(M[1, 2] - 2 / d), abs(M[0, 2] - (2 / d - 1))]
    return max(errs) <= 1e-9, f"max error {max(errs):.1e}"


@criterion(3, "deleted inverse, Kirkland, Cho-Meyer, O'Cinneide on the example", 1)
def c3():
    conv = oracles.pinned_convention()
    errs = []
    ratios_inf = True
    for d, eta in [(0.1, 1e-3), (0.01, 1e-4), (0.1, 1e-6)]:
        q, qhat = catalog.three_state_pair(d, eta)
        inv = oracles.deleted_inverse(oracles.fundamental_matrix(q, conv), 2)
        errs.append(np.abs(inv - [[1 / d, 1 / d - 1], [1 / d, 1 / d]]).max())
        errs.append(abs(perturb.kirkland_bound(q, qhat, 2) - eta / (2 * d)))
        errs.append(abs(perturb.cho_meyer_bound(q, qhat, 2) - eta / d))
        ratios_inf &= math.isinf(perturb.ocinneide_ratio(q, qhat))
    ok = max(errs) <= 1e-9 and ratios_inf
    return ok, f"convention {conv}, max error {max(errs):.1e}, O'Cinneide infinite: {ratios_inf}"


@criterion(4, "example pair is close when eta < epsilon", 1)
def c4():
    cases = bad = 0
    for d in (0.1, 0.01, 0.3):
        for beta in (0.01, 0.1, 0.124):
            eps = 0.5 * perturb.theorem1_eps_max(beta, 3)
            assert perturb.theorem1_gate(beta, eps, 3)
            for frac in (0.01, 0.5, 0.99):
                q, qhat = catalog.three_state_pair(d, frac * eps)
                rep = perturb.is_close(q, qhat, ClosenessParams(eps, beta))
                cases += 1
                bad += not (rep.verdict and rep.violations == ())
    return bad == 0, f"{cases - bad}/{cases} (delta, beta, eta) cases close with no violations"


# --- theorem property suites --------------------------------------------------------------


@lru_cache(maxsize=1)
def global_pairs():
    rng = np.random.default_rng(20240501)
    return [perturb.random_admissible_pair(2 + i % 3, rng) for i in range(500)]


@lru_cache(maxsize=1)
def global_reports():
    return [
        perturb.deviation_report(p.q, p.qhat, p.params, competing=False) for p in global_pairs()
    ]


@criterion(5, "stationary bound on 500 random admissible pairs", 60)
def c5():
    fails = nonvacuous = 0
    worst = 0.0
    for p in global_pairs():
        rep = perturb.deviation_report(p.q, p.qhat, p.params, subsets=[], competing=False)
        bad = not (rep.hypotheses_hold and rep.qhat_irreducible
                   and rep.max_stationary_deviation <= rep.bounds.stationary)
        fails += bad
        nonvacuous += not rep.bounds.stationary_vacuous
        worst = max(worst, rep.max_stationary_deviation / rep.bounds.stationary)
    return fails == 0, (f"{500 - fails}/500 hold ({nonvacuous} with a non-vacuous bound), "
                        f"worst actual/bound = {worst:.3g}")


@criterion(6, "exit-law and visit-length bounds on the same pairs", 120)
def c6():
    fails = checks = 0
    worst_exit = 0.0
    k_lo, k_hi = math.inf, 0.0
    for rep in global_reports():
        for e in rep.exits:
            checks += 1
            fails += not e.sup < rep.bounds.exit
            worst_exit = max(worst_exit, e.sup / rep.bounds.exit)
        for v in rep.visits:
            checks += 1
            fails += not (1 / v.c <= v.ratio <= v.c)
            k_lo, k_hi = min(k_lo, v.ratio), max(k_hi, v.ratio)
        fails += not rep.hypotheses_hold
    return fails == 0, (f"{checks - fails}/{checks} (C, s) checks hold, worst exit sup/bound = "
                        f"{worst_exit:.3g}, Khat/K in [{k_lo:.4g}, {k_hi:.4g}]")


@criterion(7, "subset-mode bounds on 100 random two-block pairs", 120)
def c7():
    rng = np.random.default_rng(777)
    fails = 0
    branches = {}
    disconnected = 0
    for i in range(100):
        p = perturb.random_block_pair(3 + i % 3, rng)
        rep = perturb.deviation_report(p.q, p.qhat, p.params, competing=False)
        ok = (rep.hypotheses_hold and rep.recurrent_class is not None
              and p.params.subset <= set(rep.recurrent_class)
              and all(c.ok for c in rep.stationary)
              and rep.dichotomy is not None and rep.dichotomy.ok and rep.theorem_holds)
        fails += not ok
        disconnected += not rep.qhat_irreducible
        if rep.dichotomy is not None:
            branches[rep.dichotomy.branch] = branches.get(rep.dichotomy.branch, 0) + 1
    return fails == 0, f"{100 - fails}/100 hold; dichotomy branches {branches}; reducible qhat in {disconnected}"


# --- oracle equivalence and graph machinery ---------------------------------------------------


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(scale > 0, np.abs(a - b) / scale, 0.0)
    return float(np.max(r))


def _rel_norm(a, b):
    """Normwise relative error for probability vectors. The LU oracle carries
    absolute round-off near 1e-17, so entries far below that are not
    resolved entrywise by it."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / np.abs(b).max())


@criterion(8, "graph formulas equal linear-algebra oracles on 200 random chains", 120)
def c8():
    rng = np.random.default_rng(8080)
    worst = {"stationary": 0.0, "exit law": 0.0, "exit time": 0.0, "matrix-tree": 0.0}
    for i in range(200):
        n = 2 + i % 5
        c = random_chain(n, rng, tiny=0.2)
        worst["stationary"] = max(worst["stationary"],
                                  _rel(formulas.stationary_fw(c).p, oracles.stationary_solve(c).p))
        for C in proper_subsets(n):
            for s in C:
                worst["exit law"] = max(worst["exit law"], _rel_norm(
                    formulas.exit_distribution_fw(c, C, s).law.p,
                    oracles.exit_distribution_solve(c, C, s).law.p))
                worst["exit time"] = max(worst["exit time"], _rel(
                    formulas.exit_time_fw(c, C, s), oracles.hitting_time_solve(c, C, s)))
        sums = formulas.tree_sums(c)
        worst["matrix-tree"] = max(worst["matrix-tree"], max(
            _rel(sums[s], _props.matrix_tree_sum(c.q, s)) for s in range(n)))
    ok = max(worst["stationary"], worst["exit law"], worst["exit time"]) <= 1e-8 \
        and worst["matrix-tree"] <= 1e-10
    return ok, "worst relative errors " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


@criterion(9, "P0, P1, P2 and the partial-sum lemma on 200 instances; graph counts", 60)
def c9():
    rng = np.random.default_rng(9090)
    fails = 0
    for i in range(200):
        try:
            _props.check_P0(rng)
            _props.check_P1(rng, [0.1, 0.5, 1.0][i % 3])
            _props.check_P2(rng)
            _props.check_lemma_h(rng)
        except AssertionError:
            fails += 1
    n3 = {len(graphs.enumerate_graphs(set(range(3)) - {s}, 3)) for s in range(3)}
    n4 = {len(graphs.enumerate_graphs(set(range(4)) - {s}, 4)) for s in range(4)}
    ok = fails == 0 and n3 == {3} and n4 == {16}
    return ok, f"{200 - fails}/200 instances hold; |G(S-s)| = {n3} for 3 states, {n4} for 4"


# --- Monte Carlo -----------------------------------------------------------------------


@criterion(10, "empirical matrix from 1e6 steps is close and within the stationary bound", 30)
def c10():
    q = catalog.three_state(0.1)
    beta = 0.05
    eps = perturb.theorem1_eps_max(beta, 3) / 2
    traj = oracles.simulate(q, 0, 10**6, seed=2024)
    est = oracles.empirical_matrix(traj)
    qhat = est.chain
    rep = perturb.is_close(q, qhat, ClosenessParams(eps, beta))
    dev = np.abs(1 - perturb.stationary(qhat).p / perturb.stationary(q).p).max()
    bound = perturb.theorem_bounds(beta, 3).stationary
    ok = perturb.theorem1_gate(beta, eps, 3) and rep.verdict and dev <= bound
    return ok, f"close: {rep.verdict}, max |1 - muhat/mu| = {dev:.2e} <= {bound:.3g}"


@criterion(11, "Monte Carlo visit length within 3 standard errors on 20 instances", 180)
def c11():
    rng = np.random.default_rng(1111)
    worst = 0.0
    fails = 0
    for i in range(20):
        n = 3 + i % 4
        c = random_chain(n, rng)
        subsets = list(proper_subsets(n))
        C = subsets[int(rng.integers(len(subsets)))]
        est = oracles.mc_estimate_K(c, C, 10**6, seed=i)
        z = abs(est.value - formulas.visit_length(c, C)) / est.stderr
        worst = max(worst, z)
        fails += z > 3
    return fails == 0, f"{20 - fails}/20 within 3 SE, largest |z| = {worst:.2f}"


@pytest.mark.parametrize("num", sorted(CRITERIA))
def test_acceptance(num):
    ok, line = run_criterion(num)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(k)[0] for k in sorted(CRITERIA)]
    sys.exit(0 if all(results) else 1)

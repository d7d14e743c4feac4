"""Command-line front end.

Commands: analyze, compare, simulate, estimate, graphs, example. Human tables
by default; ``--output structured`` prints JSON instead. Exit status is 0 on
success, 1 when a theorem inequality fails under its hypotheses, 2 on bad
input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from perturbmc import catalog, formulas, graphs, oracles, perturb
from perturbmc.core import (
    Chain,
    ChainError,
    closed_classes,
    is_irreducible,
    parse_chain,
    parse_number,
)

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _num(text: str) -> float:
    try:
        return parse_number(text)
    except ChainError:
        raise argparse.ArgumentTypeError(f"not a number or fraction: {text!r}") from None


def _load(path: str) -> Chain:
    try:
        return parse_chain(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _subset(chain: Chain, text: str) -> frozenset[int]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    if not names:
        raise InputError("empty subset")
    return chain.space.subset(names)


def _require_irreducible(chain: Chain, what: str = "chain") -> None:
    if not is_irreducible(chain):
        closed = [chain.space.names(c) for c in closed_classes(chain)]
        desc = "; ".join("{" + ",".join(c) + "}" for c in closed)
        raise InputError(f"{what} is reducible; closed class(es): {desc}")


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return f"{x:.6g}"
    return str(x)


def _json_default(x):
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(type(x))


def _finite(x):
    return x if not isinstance(x, float) or math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _emit(args, data: dict, lines: list[str]) -> None:
    if args.output == "structured":
        sys.stdout.write(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    else:
        sys.stdout.write("\n".join(lines) + "\n")


def _table(rows: list[list], header: list[str]) -> list[str]:
    cells = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    return out


def _matrix(chain_labels, M) -> list[list]:
    return [[lab, *[float(x) for x in row]] for lab, row in zip(chain_labels, M)]


# --- analyze ----------------------------------------------------------------------


def cmd_analyze(args) -> int:
    chain = _load(args.chain)
    _require_irreducible(chain)
    labels = chain.labels
    mu_fw = formulas.stationary_fw(chain)
    mu_la = oracles.stationary_solve(chain)
    cut = perturb.zeta(chain, mu_fw)
    L = perturb.L_const(chain.n)
    data = {
        "states": list(labels),
        "stationary": {"graph_formula": mu_fw.as_dict(), "linear_solve": mu_la.as_dict()},
        "zeta": {"value": cut.value, "argmin": chain.space.names(cut.subset)},
        "L": L,
        "subsets": [],
    }
    lines = [f"states: {', '.join(labels)}", ""]
    lines += _table(
        [[lab, mu_fw.p[i], mu_la.p[i]] for i, lab in enumerate(labels)],
        ["state", "mu (graph formula)", "mu (linear solve)"],
    )
    lines += ["", f"zeta = {_fmt(cut.value)} at C = {{{','.join(chain.space.names(cut.subset))}}}", f"L = {L}"]
    for text in args.subset or []:
        C = _subset(chain, text)
        nu = formulas.entry_distribution(chain, C, mu_fw)
        K = formulas.visit_length(chain, C, mu_fw)
        names = chain.space.names(C)
        entry = {labels[s]: float(nu.p[s]) for s in sorted(C)}
        exits = {}
        tables = []
        for s in sorted(C):
            law = formulas.exit_distribution_fw(chain, C, s).law
            T = formulas.exit_time_fw(chain, C, s)
            exits[labels[s]] = {
                "law": {labels[t]: float(law.p[t]) for t in range(chain.n) if t not in C},
                "expected_exit_time": T,
            }
            tables.append([labels[s], T, *[law.p[t] for t in range(chain.n) if t not in C]])
        data["subsets"].append({"subset": names, "entry": entry, "K": K, "exit": exits})
        lines += ["", f"C = {{{','.join(names)}}}: K_C = {_fmt(K)}"]
        lines += _table([[labels[s], nu.p[s]] for s in sorted(C)], ["state", "entry law"])
        lines.append("")
        outside = [labels[t] for t in range(chain.n) if t not in C]
        lines += _table(tables, ["from", "E[exit time]", *[f"exit at {t}" for t in outside]])
    _emit(args, data, lines)
    return EXIT_OK


# --- compare ----------------------------------------------------------------------


def _report_lines(rep: perturb.DeviationReport, labels) -> list[str]:
    p = rep.params
    lines = [
        f"mode: {rep.mode}   epsilon = {_fmt(p.epsilon)}   beta = {_fmt(p.beta)}"
        + (f"   S1 = {{{','.join(labels[i] for i in sorted(p.subset))}}}" if p.subset else ""),
        f"parameters admissible: {_fmt(rep.gate)}"
        + (f"   (mixing parameter a = {_fmt(rep.mixing)})" if rep.mixing is not None else ""),
        f"close: {_fmt(rep.closeness.verdict)}   zeta = {_fmt(rep.closeness.zeta_used)}"
        f"   threshold epsilon*zeta = {_fmt(rep.closeness.threshold)}",
    ]
    if rep.closeness.coincides_outside is not None:
        lines.append(f"qhat equals q outside S1: {_fmt(rep.closeness.coincides_outside)}")
    if rep.closeness.violations:
        lines.append("")
        lines += _table(
            [[labels[v.s], labels[v.t], v.ratio, v.trigger] for v in rep.closeness.violations],
            ["s", "t", "|1 - qhat/q|", "trigger"],
        )
    lines.append("")
    lines.append(f"qhat irreducible: {_fmt(rep.qhat_irreducible)}")
    if rep.recurrent_class is not None:
        lines.append(f"recurrent class of qhat containing S1: {{{','.join(labels[i] for i in rep.recurrent_class)}}}")
    b = rep.bounds
    vac = " (vacuous)" if b.stationary_vacuous else ""
    lines.append(f"stationary bound 18*beta*L = {_fmt(b.stationary)}{vac}")
    head = "|1 - muhat(s|S1)/mu(s|S1)|" if rep.mode == "subset" else "|1 - muhat/mu|"
    rows = []
    for c in rep.stationary:
        s = c.state
        rows.append([labels[s], c.actual, c.bound, rep.cho_meyer.get(s), rep.kirkland.get(s)])
    if rows:
        lines += _table(rows, ["state", head, "18*beta*L", "Cho-Meyer", "Kirkland"])
    lines.append(f"O'Cinneide ratio: {_fmt(rep.ocinneide)}   (norm: {rep.norm}, A convention: {rep.convention})")
    if rep.exits:
        worst = max(rep.exits, key=lambda e: e.sup)
        lines.append(
            f"exit laws: max sup deviation {_fmt(worst.sup)} (tv {_fmt(worst.tv)}) "
            f"vs bound 12*beta*L = {_fmt(b.exit)} over {len(rep.exits)} (C, s) pairs"
        )
    if rep.visits:
        lo = min(v.ratio for v in rep.visits)
        hi = max(v.ratio for v in rep.visits)
        lines.append(f"visit lengths: Khat/K in [{_fmt(lo)}, {_fmt(hi)}] vs [1/{_fmt(b.c)}, {_fmt(b.c)}]")
    if rep.dichotomy is not None:
        d = rep.dichotomy
        lines.append(
            f"S1 visit length: K = {_fmt(d.K)}, Khat = {_fmt(d.Khat)}, threshold {_fmt(d.threshold)}: "
            f"{'holds' if d.ok else 'FAILS'} ({d.branch})"
        )
    lines.append("")
    if not rep.hypotheses_hold:
        lines.append("hypotheses not met: bounds are informational")
    lines += rep.violations or ["all applicable inequalities hold"]
    return lines


def _compare(args, q: Chain, qhat: Chain) -> tuple[perturb.DeviationReport, list[str], dict]:
    if q.space != qhat.space:
        raise InputError("q and qhat have different state spaces")
    _require_irreducible(q, "q")
    subset = _subset(q, args.subset) if args.subset else None
    a = None
    if subset is not None and args.a not in (None, "auto"):
        a = _num(args.a)
    params = perturb.ClosenessParams(args.eps, args.beta, subset, a)
    rep = perturb.deviation_report(q, qhat, params, engine=args.engine, norm=args.norm)
    return rep, _report_lines(rep, q.labels), rep.to_dict(q.labels)


def cmd_compare(args) -> int:
    q, qhat = _load(args.q), _load(args.qhat)
    rep, lines, data = _compare(args, q, qhat)
    _emit(args, data, lines)
    return EXIT_OK if rep.theorem_holds else EXIT_VIOLATION


# --- simulate / estimate ------------------------------------------------------------


def cmd_simulate(args) -> int:
    chain = _load(args.chain)
    start = chain.space.index(args.start) if args.start else 0
    traj = oracles.simulate(chain, start, args.steps, args.seed)
    oracles.write_trajectory(traj, args.out)
    data = {"out": str(args.out), "steps": len(traj), "seed": args.seed, "chain": traj.chain_hash}
    _emit(args, data, [f"wrote {len(traj)} states to {args.out} (seed {args.seed}, chain {traj.chain_hash})"])
    return EXIT_OK


def cmd_estimate(args) -> int:
    chain = _load(args.chain)
    _require_irreducible(chain)
    traj = oracles.read_trajectory(args.trajectory, chain)
    est = oracles.empirical_matrix(traj)
    labels = chain.labels
    data = {
        "steps": len(traj),
        "seed": traj.seed,
        "empirical_matrix": [[_finite(float(x)) if not np.isnan(x) else None for x in row] for row in est.matrix],
        "counts": est.counts.tolist(),
        "occupancy": est.occupancy.as_dict(),
        "closed_loop": est.closed_loop,
        "undefined_rows": chain.space.names(est.undefined),
    }
    lines = [f"{len(traj)} states, seed {traj.seed}", ""]
    lines += _table(_matrix(labels, est.matrix), ["from", *[f"to {t}" for t in labels]])
    lines.append("")
    lines.append(f"path returns to its start (occupancy equals muhat): {_fmt(est.closed_loop)}")
    if est.undefined:
        lines.append(f"rows never left, left undefined: {', '.join(chain.space.names(est.undefined))}")
        data["closeness"] = None
        _emit(args, data, lines)
        return EXIT_OK
    qhat = est.chain
    mu = perturb.stationary(chain)
    params = perturb.ClosenessParams(args.eps, args.beta)
    close = perturb.is_close(chain, qhat, params, mu)
    gate = perturb.theorem1_gate(args.beta, args.eps, chain.n)
    bound = perturb.theorem_bounds(args.beta, chain.n).stationary
    data["closeness"] = {"verdict": close.verdict, "gate": gate, "violations": len(close.violations)}
    data["stationary_bound"] = bound
    lines.append(f"close to q at epsilon={_fmt(args.eps)}, beta={_fmt(args.beta)}: {_fmt(close.verdict)}"
                 f"   (parameters admissible: {_fmt(gate)})")
    status = EXIT_OK
    if is_irreducible(qhat):
        muhat = perturb.stationary(qhat)
        dev = np.abs(1 - muhat.p / mu.p)
        data["muhat"] = muhat.as_dict()
        data["deviation"] = {lab: float(d) for lab, d in zip(labels, dev)}
        lines.append("")
        lines += _table(
            [[lab, est.occupancy.p[i], muhat.p[i], mu.p[i], dev[i]] for i, lab in enumerate(labels)],
            ["state", "occupancy", "muhat", "mu", "|1 - muhat/mu|"],
        )
        lines.append(f"bound 18*beta*L = {_fmt(bound)}")
        if gate and close.verdict and dev.max() > bound:
            lines.append("THEOREM VIOLATION: stationary deviation exceeds the bound")
            status = EXIT_VIOLATION
    else:
        data["muhat"] = None
        lines.append("empirical matrix is reducible")
        if gate and close.verdict:
            lines.append("THEOREM VIOLATION: close empirical matrix is reducible")
            status = EXIT_VIOLATION
    _emit(args, data, lines)
    return status


# --- graphs / example ---------------------------------------------------------------


def cmd_graphs(args) -> int:
    chain = _load(args.chain)
    C = _subset(chain, args.set)
    fam = graphs.enumerate_graphs(C, chain.n)
    w = fam.weights(chain.q)
    labels = chain.labels
    items = []
    lines = [f"G({{{','.join(chain.space.names(C))}}}): {len(fam)} graphs", ""]
    for g, wi in zip(fam, w):
        leads = {labels[s]: labels[g.leads_to(s)] for s in g.domain}
        items.append({"edges": {labels[s]: labels[t] for s, t in g.edges.items()},
                      "weight": float(wi), "leads_to": leads})
        lead_txt = " ".join(f"{s}=>{t}" for s, t in leads.items())
        lines.append(f"{g.format(labels)} | {float(wi)!r} | {lead_txt}")
    _emit(args, {"subset": chain.space.names(C), "graphs": items}, lines)
    return EXIT_OK


def cmd_example(args) -> int:
    d, eta = args.delta, args.eta
    if not 0 < d < 0.5:
        raise InputError("delta must lie in (0, 1/2)")
    if not 0 < eta < 1:
        raise InputError("eta must lie in (0, 1)")
    q, qhat = catalog.three_state_pair(d, eta)
    beta = args.beta
    eps = args.eps if args.eps is not None else 0.99 * perturb.theorem1_eps_max(beta, 3)
    M = oracles.mean_first_passage(q).M
    Ainv = oracles.deleted_inverse(oracles.fundamental_matrix(q), 2)
    args.eps, args.subset, args.a = eps, None, None
    rep, lines, data = _compare(args, q, qhat)
    ours = rep.stationary[2].actual
    rows = [
        ["actual |1 - muhat_3/mu_3|", ours, "eta*delta/(2+eta*delta)", eta * d / (2 + eta * d)],
        ["graph bound 18*beta*L", rep.bounds.stationary, "18*L*beta", 18 * 27 * beta],
        ["Cho-Meyer", rep.cho_meyer[2], "eta/delta", eta / d],
        ["Kirkland et al.", rep.kirkland[2], "eta/(2*delta)", eta / (2 * d)],
        ["O'Cinneide ratio", rep.ocinneide, "inf since q(2|3)=0 < qhat(2|3)", math.inf],
    ]
    head = [
        f"three-state example, delta = {_fmt(d)}, eta = {_fmt(eta)}",
        f"mu = (1/2, (1-delta)/2, delta/2) = {tuple(round(float(x), 12) for x in perturb.stationary(q).p)}",
        f"zeta = delta/2 = {_fmt(rep.closeness.zeta_used)}",
        f"M[2,3] = 2/delta = {_fmt(M[1, 2])}   M[1,3] = 2/delta - 1 = {_fmt(M[0, 2])}",
        f"A_3^-1 = [{'; '.join(' '.join(_fmt(float(x)) for x in row) for row in Ainv)}]"
        "  (expected [1/delta 1/delta-1; 1/delta 1/delta])",
    ]
    if eta >= eps:
        head.append(f"note: eta >= epsilon = {_fmt(eps)}, so the closeness hypothesis needs not hold")
    head.append("")
    head += _table(rows, ["quantity", "value", "expression", "expression value"])
    data["example"] = {
        "delta": d,
        "eta": eta,
        "M23": float(M[1, 2]),
        "M13": float(M[0, 2]),
        "A3_inverse": Ainv.tolist(),
        "table": [{"quantity": r[0], "value": _finite(float(r[1])), "expression": r[2],
                   "expression_value": _finite(float(r[3]))} for r in rows],
    }
    _emit(args, data, head + [""] + lines)
    return EXIT_OK if rep.theorem_holds else EXIT_VIOLATION


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", choices=("table", "structured"), default="table")
    common.add_argument("--cap", type=int, default=graphs.DEFAULT_CAP,
                        help="largest state count for graph enumeration (default %(default)s)")
    common.add_argument("--seed", type=int, default=0)

    p = argparse.ArgumentParser(prog="perturbmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="stationary law, conductance, visit statistics")
    a.add_argument("chain")
    a.add_argument("--subset", action="append", help="comma-separated labels; repeatable")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", parents=[common], help="closeness test and deviation report")
    c.add_argument("q")
    c.add_argument("qhat")
    c.add_argument("--eps", type=_num, required=True)
    c.add_argument("--beta", type=_num, required=True)
    c.add_argument("--subset", help="S1 as comma-separated labels (subset mode)")
    c.add_argument("--a", default="auto", help="mixing parameter, or 'auto' to compute it")
    c.add_argument("--engine", choices=("fw", "solve"), default="fw")
    c.add_argument("--norm", choices=perturb.NORMS, default="max-entry")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("simulate", parents=[common], help="write a seeded trajectory file")
    s.add_argument("chain")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--start", help="start state label (default: the first state)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="empirical matrix from a trajectory file")
    e.add_argument("chain")
    e.add_argument("trajectory")
    e.add_argument("--eps", type=_num, required=True)
    e.add_argument("--beta", type=_num, required=True)
    e.set_defaults(func=cmd_estimate)

    g = sub.add_parser("graphs", parents=[common], help="list the C-graphs of a subset")
    g.add_argument("chain")
    g.add_argument("--set", required=True, help="C as comma-separated labels")
    g.set_defaults(func=cmd_graphs)

    x = sub.add_parser("example", parents=[common], help="reproduce the three-state comparison")
    x.add_argument("--delta", type=_num, default=0.1)
    x.add_argument("--eta", type=_num, default=1e-6)
    x.add_argument("--beta", type=_num, default=0.1)
    x.add_argument("--eps", type=_num, default=None, help="default: 0.99 of the admissible maximum")
    x.add_argument("--engine", choices=("fw", "solve"), default="fw")
    x.add_argument("--norm", choices=perturb.NORMS, default="max-entry")
    x.set_defaults(func=cmd_example)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    graphs.set_cap(args.cap)
    try:
        return args.func(args)
    except (InputError, ChainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        graphs.set_cap(graphs.DEFAULT_CAP)


if __name__ == "__main__":
    sys.exit(main())

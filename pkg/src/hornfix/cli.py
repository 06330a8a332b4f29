"""Command-line front end.  Every command prints one JSON object on stdout."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import abstraction, affine, imp, sip
from .clauses import (
    ClauseShapeError,
    approximate_so,
    build_phi,
    clause_text,
    dualize_feq,
    parse_feq,
    print_feq,
    split_clauses,
)
from .formula import ParseError, parse_formula, print_canonical
from .semantics import (
    BudgetExceeded,
    FiniteStructure,
    FormulaSizeError,
    MissingInterpretation,
    NoLeastSolution,
    PositivityError,
    eval_so,
    holds_with,
    lfp_iterate,
    unfold_sigma,
)

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

DOMAIN_ERRORS = (
    ParseError,
    ClauseShapeError,
    BudgetExceeded,
    MissingInterpretation,
    PositivityError,
    FormulaSizeError,
    NoLeastSolution,
    affine.AffineError,
    imp.ProgramError,
    sip.SipError,
    abstraction.NonTerminatingChain,
    abstraction.CarrierNotEnumerable,
    ValueError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------- input


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _structure(path: str) -> FiniteStructure:
    try:
        return FiniteStructure.from_json(json.loads(_read(path)))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid structure JSON: {exc}") from None


def _rels_json(rels) -> dict:
    return {name: sorted(list(t) for t in rel) for name, rel in rels.items()}


def _states_json(names: Sequence[str], states) -> dict:
    return {"variables": list(names), "states": sorted(list(s) for s in states)}


# ------------------------------------------------------------ feq group


def cmd_feq_classify(args) -> dict:
    fe = parse_feq(_read(args.file))
    kinds = fe.kinds()
    return {
        "status": "ok",
        "clauses": [
            {"clause": clause_text(c), "kind": k.kind.value, "role": k.role.value if k.role else None}
            for c, k in zip(fe.clauses, kinds)
        ],
        "horn": fe.is_horn(),
        "dual_horn": fe.is_dual_horn(),
        "linear_horn": fe.is_linear_horn(),
    }


def _phi_json(phi) -> dict:
    return {
        name: {"args": list(params), "formula": print_canonical(comp)}
        for (name, _), params, comp in zip(phi.predvars, phi.formal_args, phi.components)
    }


def cmd_feq_phi(args) -> dict:
    return {"status": "ok", "phi": _phi_json(build_phi(parse_feq(_read(args.file))))}


def cmd_feq_dualize(args) -> dict:
    return {"status": "ok", "feq": print_feq(dualize_feq(parse_feq(_read(args.file))))}


def cmd_feq_split(args) -> dict:
    phi, ends = split_clauses(parse_feq(_read(args.file)))
    return {"status": "ok", "phi": _phi_json(phi), "ends": [clause_text(c) for c in ends]}


def cmd_feq_unfold(args) -> dict:
    phi = build_phi(parse_feq(_read(args.file)))
    sigma = unfold_sigma(phi, args.depth)
    return {
        "status": "ok",
        "depth": args.depth,
        "sigma": {name: {"args": list(params), "formula": print_canonical(f)}
                  for (name, _), params, f in zip(phi.predvars, phi.formal_args, sigma)},
    }


def cmd_feq_approx(args) -> dict:
    fe = parse_feq(_read(args.file))
    return {"status": "ok", "depth": args.depth,
            "approximants": [print_canonical(f) for f in approximate_so(fe, args.depth)]}


def cmd_feq_solve(args) -> dict:
    fe = parse_feq(_read(args.file))
    M = _structure(args.structure)
    if not fe.is_horn():
        raise ValueError("feq solve needs a Horn formula equation")
    mu = lfp_iterate(M, build_phi(fe))
    out = {"status": "ok", "least_solution": _rels_json(mu.as_dict()), "solvable": holds_with(M, fe, mu)}
    if args.check:
        out["exhaustive"] = eval_so(M, fe)
    return out


# ------------------------------------------------------------ imp group


def cmd_imp_vcgen(args) -> dict:
    t = imp.parse_triple(_read(args.file))
    vc = imp.vcgen_full(t)
    return {"status": "ok", "state": list(vc.state), "fresh": vc.fresh, "feq": print_feq(vc.fe)}


def _initial_state(text: str | None, names: Sequence[str], M: FiniteStructure) -> dict:
    state = {n: 0 for n in names}
    if text:
        for item in text.split(","):
            if "=" not in item:
                raise UsageError(f"state entries look like name=value, got {item!r}")
            name, value = item.split("=", 1)
            try:
                v = int(value)
            except ValueError:
                raise UsageError(f"state value {value!r} is not an integer") from None
            if not 0 <= v < M.size:
                raise ValueError(f"state value {v} outside the domain of size {M.size}")
            state[name.strip()] = v
    return state


def _program_and_sig(path: str):
    text = _read(path)
    if "{" in text:
        t = imp.parse_triple(text)
        return t.prog, t
    return imp.parse_program(text), None


def cmd_imp_run(args) -> dict:
    M = _structure(args.structure)
    prog, _ = _program_and_sig(args.file)
    names = sorted(imp.program_vars(prog))
    res = imp.interpret(M, prog, _initial_state(args.state, names, M), args.fuel)
    if res is imp.BOTTOM:
        return {"status": "ok", "result": "bottom"}
    if res is imp.FUEL_EXHAUSTED:
        return {"status": "indeterminate", "result": "fuel-exhausted"}
    return {"status": "ok", "result": dict(sorted(res.items()))}


def _indeterminate(exc: imp.IndeterminateRun) -> dict:
    return {"status": "indeterminate", "message": str(exc), "exhausted": [dict(sorted(s.items())) for s in exc.states]}


def cmd_imp_wp(args) -> dict:
    M = _structure(args.structure)
    t = imp.parse_triple(_read(args.file))
    names = imp.state_vars(t)
    try:
        states = imp.wp_set(M, t.prog, t.post, args.fuel, names)
    except imp.IndeterminateRun as exc:
        return _indeterminate(exc)
    fixed = imp.wp_lfp(M, t.prog, t.post, names, t.sig)
    return {"status": "ok", **_states_json(names, states), "fixed_point_agrees": fixed == states}


def cmd_imp_sp(args) -> dict:
    M = _structure(args.structure)
    t = imp.parse_triple(_read(args.file))
    names = imp.state_vars(t)
    try:
        states = imp.sp_set(M, t.prog, t.pre, args.fuel, names)
    except imp.IndeterminateRun as exc:
        return _indeterminate(exc)
    fixed = imp.sp_lfp(M, t.prog, t.pre, names, t.sig)
    return {"status": "ok", **_states_json(names, states), "fixed_point_agrees": fixed == states}


def cmd_imp_check(args) -> dict:
    t = imp.parse_triple(_read(args.file))
    M = _structure(args.structure) if args.structure else None
    report = imp.check_hoare_calculus(M, t, args.invariant_class)
    out = {
        "status": "ok",
        "provable": report.ok,
        "failures": [{"rule": rule, "condition": print_canonical(f), "counterexample": _cex_json(cex)}
                     for rule, f, cex in report.failures],
    }
    if M is not None:
        sem = imp.check_hoare_semantic(M, t, args.fuel)
        out["semantic"] = {True: "valid", False: "invalid", None: "indeterminate"}[sem.holds]
    return out


def _cex_json(cex):
    if cex is None:
        return None
    return {k: str(v) for k, v in sorted(cex.items())}


# --------------------------------------------------------- affine group


def cmd_affine_solve(args) -> dict:
    fe = parse_feq(_read(args.file))
    sol = affine.affine_solve(fe, drop_all=args.drop_all, cap=args.projections_cap)
    if not sol.solvable:
        return {"status": "ok", "solvable": False}
    out = {"status": "ok", "solvable": True,
           "witness": {n: affine.system_text(sol.witness[n]) for n in fe.names}}
    if args.format == "full":
        out["witness_sexpr"] = {n: [affine.equation_sexpr(e) for e in sol.witness[n]] for n in fe.names}
        out["projection"] = sol.projection
        out["iterations"] = sol.iterations
    return out


def _parse_solution(spec: str, fe) -> tuple[str, list]:
    if ":" not in spec:
        raise UsageError(f"solutions look like NAME:FORMULA, got {spec!r}")
    name, text = spec.split(":", 1)
    name = name.strip()
    if name not in fe.names:
        raise ValueError(f"unknown predicate variable {name}")
    f = parse_formula(text, fe.sig)
    eqs = affine.constraint_equations(f)
    k = fe.arity(name)
    allowed = set(affine.witness_names(k))
    if eqs is None:
        return name, [affine.LinearEquation.of(affine.LinearTerm((), 1))]
    for e in eqs:
        extra = set(e.lhs.as_dict()) - allowed
        if extra:
            raise ValueError(f"solution for {name} may only use {sorted(allowed)}, found {sorted(extra)}")
    return name, eqs


def cmd_affine_check(args) -> dict:
    fe = parse_feq(_read(args.file))
    witness = {n: [] for n in fe.names}
    for spec in args.solution or []:
        name, eqs = _parse_solution(spec, fe)
        witness[name] = eqs
    ok, clause, cex = affine.check_solution(fe, witness)
    out = {"status": "ok", "valid": ok}
    if not ok:
        out["clause"] = clause_text(clause)
        out["counterexample"] = _cex_json(cex)
    karr = affine.karr_fixpoint(fe) if fe.is_horn() else None
    if karr is not None:
        out["least"] = {n: affine.system_text(affine.space_equations(karr.spaces[n], affine.witness_names(k)))
                        for n, k in fe.predvars}
        out["iterations"] = karr.iterations
    return out


# ------------------------------------------------------------ sip group


def cmd_sip_canonical(args) -> dict:
    S = sip.parse_sip(_read(args.file)).sip
    return {"status": "ok", "q": args.q, "formula": print_canonical(sip.canonical_solution(S, args.q))}


def cmd_sip_check(args) -> dict:
    parsed = sip.parse_sip(_read(args.file))
    if not args.structure:
        raise UsageError("sip check needs at least one --structure")
    fixtures = [_structure(p) for p in args.structure]
    equivalence, implication = [], []
    for q in range(args.q + 1):
        rep = sip.check_canonical_equivalence(parsed.sip, q, fixtures)
        equivalence.append({"q": q, "ok": rep.ok, "failures": [_sip_failure(f) for f in rep.failures]})
        if parsed.solution is not None:
            rep = sip.check_solution_implication(parsed.sip, parsed.solution, q, fixtures)
            implication.append({"q": q, "ok": rep.ok, "failures": [_sip_failure(f) for f in rep.failures]})
    out = {"status": "ok", "equivalence": equivalence}
    if parsed.solution is not None:
        out["implication"] = implication
    out["ok"] = all(r["ok"] for r in equivalence + implication)
    return out


def _sip_failure(f) -> dict:
    i, q, what, env = f
    return {"fixture": i, "q": q, "reason": what, "environment": env}


# ------------------------------------------------------------ corpus


def _run_case(case: dict) -> tuple[str, dict, int]:
    code, out = run_args(case["args"])
    return case["name"], out, code


def cmd_corpus(args) -> dict:
    """Run a manifest [{"name", "args", "expect"}...]; expect is a subset of the JSON output."""
    manifest_path = Path(args.manifest)
    cases = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    for case in cases:
        case["args"] = [str(base / a[1:]) if a.startswith("@") else a for a in case["args"]]
    cases.sort(key=lambda c: c["name"])
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_case, cases))
    else:
        results = [_run_case(c) for c in cases]
    report = []
    for case, (name, out, code) in zip(cases, results):
        expect = case.get("expect", {})
        mismatched = sorted(k for k, v in expect.items() if out.get(k) != v)
        report.append({"name": name, "exit": code, "ok": not mismatched, "mismatched": mismatched})
    return {"status": "ok", "passed": sum(r["ok"] for r in report), "total": len(report), "cases": report}


# ------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hornfix", description="Horn formula equations, fixed points and verification conditions.")
    p.add_argument("--budget", type=int, help="override the enumeration budget (also HORNFIX_BUDGET)")
    p.add_argument("--format", choices=["json", "full"], default="json",
                   help="json prints the primary fields only; full adds diagnostics")
    groups = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def sub(g, name, fn, help_text, file_help="input file"):
        sp = g.add_parser(name, help=help_text)
        sp.add_argument("file", help=file_help)
        sp.set_defaults(fn=fn)
        return sp

    feq = groups.add_parser("feq", help="formula equation operations").add_subparsers(
        dest="cmd", required=True, parser_class=_Parser)
    sub(feq, "classify", cmd_feq_classify, "classify every clause")
    sub(feq, "phi", cmd_feq_phi, "print the fixed-point system")
    sub(feq, "dualize", cmd_feq_dualize, "swap bodies and heads")
    sub(feq, "split", cmd_feq_split, "fixed-point system plus end clauses")
    sp = sub(feq, "unfold", cmd_feq_unfold, "print the depth-l unfolding")
    sp.add_argument("--depth", type=_natural, required=True)
    sp = sub(feq, "approx", cmd_feq_approx, "first-order approximants up to a depth")
    sp.add_argument("--depth", type=_natural, required=True)
    sp = sub(feq, "solve", cmd_feq_solve, "least solution over a finite structure")
    sp.add_argument("--structure", required=True)
    sp.add_argument("--check", action="store_true", help="also decide solvability by exhaustive search")

    ig = groups.add_parser("imp", help="WHILE programs").add_subparsers(dest="cmd", required=True,
                                                                       parser_class=_Parser)
    sub(ig, "vcgen", cmd_imp_vcgen, "verification condition of a triple", "triple file")
    sp = sub(ig, "run", cmd_imp_run, "run a program", "program or triple file")
    sp.add_argument("--structure", required=True)
    sp.add_argument("--fuel", type=_natural, default=imp.DEFAULT_FUEL)
    sp.add_argument("--state", help="initial values, e.g. x=1,y=0 (unlisted variables start at 0)")
    for name, fn in (("wp", cmd_imp_wp), ("sp", cmd_imp_sp)):
        sp = sub(ig, name, fn, f"{name} set of a triple's program", "triple file")
        sp.add_argument("--structure", required=True)
        sp.add_argument("--fuel", type=_natural, default=imp.DEFAULT_FUEL)
    sp = sub(ig, "check", cmd_imp_check, "check the annotated Hoare derivation", "triple file")
    sp.add_argument("--class", dest="invariant_class", choices=["All", "LinearEq"], default="All")
    sp.add_argument("--structure", help="finite structure; omit to decide over the rationals")
    sp.add_argument("--fuel", type=_natural, default=imp.DEFAULT_FUEL)

    ag = groups.add_parser("affine", help="affine formula equations over Q").add_subparsers(
        dest="cmd", required=True, parser_class=_Parser)
    sp = sub(ag, "solve", cmd_affine_solve, "decide solvability by linear equation systems")
    sp.add_argument("--projections-cap", type=_natural, default=1024)
    sp.add_argument("--drop-all", action="store_true", help="also try dropping every head literal")
    sp = sub(ag, "check", cmd_affine_check, "check a candidate solution")
    sp.add_argument("--solution", action="append", help="NAME:FORMULA over x, y, z (or x1..xk)")

    sg = groups.add_parser("sip", help="schematic simple induction proofs").add_subparsers(
        dest="cmd", required=True, parser_class=_Parser)
    sp = sub(sg, "canonical", cmd_sip_canonical, "q-th canonical solution")
    sp.add_argument("--q", type=_natural, required=True)
    sp = sub(sg, "check", cmd_sip_check, "check the canonical-solution lemmas up to q")
    sp.add_argument("--q", type=_natural, required=True)
    sp.add_argument("--structure", action="append")

    cp = groups.add_parser("corpus", help="run a manifest of commands")
    cp.add_argument("manifest")
    cp.add_argument("--jobs", type=_natural, default=1)
    cp.set_defaults(fn=cmd_corpus)
    return p


def _natural(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a natural number") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"{text!r} is negative")
    return v


def run_args(argv: Sequence[str]) -> tuple[int, dict]:
    try:
        args = build_parser().parse_args(list(argv))
    except UsageError as exc:
        return EXIT_USAGE, {"status": "error", "error": "usage", "message": str(exc)}
    if args.budget is not None:
        os.environ["HORNFIX_BUDGET"] = str(args.budget)
    try:
        return EXIT_OK, args.fn(args)
    except UsageError as exc:
        return EXIT_USAGE, {"status": "error", "error": "usage", "message": str(exc)}
    except DOMAIN_ERRORS as exc:
        return EXIT_DOMAIN, {"status": "error", "error": type(exc).__name__, "message": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if any(a in ("-h", "--help") for a in argv):
        try:
            build_parser().parse_args(list(argv))
        except SystemExit as exc:
            return int(exc.code or 0)
    code, out = run_args(argv)
    print(dumps(out))
    if code == EXIT_USAGE:
        print(build_parser().format_usage(), file=sys.stderr, end="")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Schematic simple induction proofs and their canonical solutions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from .clauses import ConstrainedClause, FormulaEquation, build_phi, parse_lang
from .formula import (
    Const,
    Formula,
    FormulaParser,
    ParseError,
    PredVarAtom,
    SAtom,
    SList,
    Signature,
    Term,
    Var,
    App,
    conj,
    formula_size,
    free_predvars,
    free_vars,
    is_quantifier_free,
    neg,
    numeral,
    read_sexpr,
    substitute_in_term,
    substitute_terms,
    term_vars,
)
from .semantics import (
    Evaluator,
    FiniteStructure,
    FormulaSizeError,
    holds_with,
    satisfying_tuples,
    unfold_sigma,
)

ALPHA, BETA, NU, GAMMA = "alpha", "beta", "nu", "gamma"
PREDVAR = "X"
SOLUTION_VARS = ("x", "y", "z")
DEFAULT_MAX_SIZE = 200_000


class SipError(ValueError):
    pass


@dataclass(frozen=True)
class SchematicSip:
    gamma0: tuple  # formulas over alpha, beta
    gamma1: tuple  # over alpha, nu, gamma
    gamma2: tuple  # over alpha
    goal: Formula  # over alpha
    steps: tuple  # terms t_i(alpha, nu, gamma)
    ends: tuple  # terms u_j(alpha)
    sig: Signature = field(default_factory=Signature)

    def __post_init__(self):
        if not self.steps or not self.ends:
            raise SipError("a schematic s.i.p. needs at least one step term and one end term")
        if "0" not in self.sig.constants or self.sig.functions.get("s") != 1:
            raise SipError("the signature must contain the constant 0 and the unary function s")
        checks = [
            (self.gamma0, {ALPHA, BETA}, "gamma0"),
            (self.gamma1, {ALPHA, NU, GAMMA}, "gamma1"),
            (self.gamma2, {ALPHA}, "gamma2"),
            ((self.goal,), {ALPHA}, "goal"),
        ]
        for fs, allowed, where in checks:
            for f in fs:
                if not is_quantifier_free(f) or free_predvars(f):
                    raise SipError(f"{where} formulas must be quantifier-free first-order formulas")
                extra = set(free_vars(f)) - allowed
                if extra:
                    raise SipError(f"{where} uses variables {sorted(extra)} outside {sorted(allowed)}")
        for t in self.steps:
            extra = term_vars(t) - {ALPHA, NU, GAMMA}
            if extra:
                raise SipError(f"step term uses variables {sorted(extra)}")
        for u in self.ends:
            extra = term_vars(u) - {ALPHA}
            if extra:
                raise SipError(f"end term uses variables {sorted(extra)}")


def _x(*args: Term) -> PredVarAtom:
    return PredVarAtom(PREDVAR, tuple(args))


def sip_to_feq(S: SchematicSip) -> FormulaEquation:
    a, b, n, g = Var(ALPHA), Var(BETA), Var(NU), Var(GAMMA)
    zero = Const("0")
    base = ConstrainedClause(conj(*S.gamma0), (), (_x(a, zero, b),), (ALPHA, BETA))
    induction = ConstrainedClause(
        conj(*S.gamma1), tuple(_x(a, n, t) for t in S.steps), (_x(a, App("s", (n,)), g),), (ALPHA, NU, GAMMA)
    )
    end = ConstrainedClause(conj(*S.gamma2, neg(S.goal)), tuple(_x(a, a, u) for u in S.ends), (), (ALPHA,))
    return FormulaEquation(S.sig, ((PREDVAR, 3),), (base, induction, end))


def _check_size(f: Formula, max_size: int) -> Formula:
    if formula_size(f) > max_size:
        raise FormulaSizeError(f"canonical solution exceeds {max_size} formula nodes")
    return f


def canonical_solution(S: SchematicSip, q: int, max_size: int = DEFAULT_MAX_SIZE) -> Formula:
    """C_{S,q}(x, z)."""
    if q < 0:
        raise ValueError("q must be a natural number")
    x, z = Var("x"), Var("z")
    current = _check_size(conj(*(substitute_terms(f, {ALPHA: x, BETA: z}) for f in S.gamma0)), max_size)
    for level in range(q):
        qbar = numeral(level)
        at = {ALPHA: x, NU: qbar, GAMMA: z}
        parts = [substitute_terms(f, at) for f in S.gamma1]
        for t in S.steps:
            t_at = substitute_in_term(t, at)
            parts.append(substitute_terms(current, {"z": t_at}))
        current = _check_size(conj(*parts), max_size)
    return current


def sigma_at(S: SchematicSip, q: int, y: Term | None = None) -> Formula:
    """σ^{q+1}(x, y, z) of the fixed-point system of S, with y defaulting to q̄."""
    phi = build_phi(sip_to_feq(S))
    (sigma,) = unfold_sigma(phi, q + 1)
    (params,) = phi.formal_args
    args = (Var("x"), numeral(q) if y is None else y, Var("z"))
    return substitute_terms(sigma, dict(zip(params, args)))


# -------------------------------------------------------------- checking


@dataclass
class SipReport:
    ok: bool
    checked: int = 0
    failures: list = field(default_factory=list)  # (fixture index, q, description, environment)

    def __bool__(self) -> bool:
        return self.ok


def find_inequivalence(M: FiniteStructure, f: Formula, g: Formula, variables: Sequence[str],
                       evaluator: Evaluator | None = None) -> dict | None:
    """An assignment to `variables` where f and g differ, or None."""
    ev = evaluator or Evaluator(M)
    ff, gg = ev.compile(f), ev.compile(g)
    for values in itertools.product(range(M.size), repeat=len(variables)):
        e = dict(zip(variables, values))
        if ff(dict(e), {}) != gg(dict(e), {}):
            return e
    return None


def find_non_implication(M: FiniteStructure, f: Formula, g: Formula, variables: Sequence[str],
                         evaluator: Evaluator | None = None) -> dict | None:
    ev = evaluator or Evaluator(M)
    ff, gg = ev.compile(f), ev.compile(g)
    for values in itertools.product(range(M.size), repeat=len(variables)):
        e = dict(zip(variables, values))
        if ff(dict(e), {}) and not gg(dict(e), {}):
            return e
    return None


def check_canonical_equivalence(S: SchematicSip, q: int, fixtures: Sequence[FiniteStructure]) -> SipReport:
    """C_{S,q}(x,z) against σ^{q+1}(x, q̄, z) on every assignment of each fixture."""
    left = canonical_solution(S, q)
    right = sigma_at(S, q)
    report = SipReport(True)
    for i, M in enumerate(fixtures):
        report.checked += 1
        witness = find_inequivalence(M, left, right, ("x", "z"))
        if witness is not None:
            report.ok = False
            report.failures.append((i, q, "canonical solution and unfolding differ", witness))
    return report


def solves(M: FiniteStructure, S: SchematicSip, F: Formula) -> bool:
    """All three sequents hold on M with X read as F(x, y, z)."""
    rel = satisfying_tuples(M, F, SOLUTION_VARS)
    return holds_with(M, sip_to_feq(S), {PREDVAR: rel})


def check_solution_implication(S: SchematicSip, F: Formula, q: int, fixtures: Sequence[FiniteStructure]
                               ) -> SipReport:
    extra = set(free_vars(F)) - set(SOLUTION_VARS)
    if extra or free_predvars(F) or not is_quantifier_free(F):
        raise SipError("a candidate solution is a quantifier-free formula over x, y, z")
    report = SipReport(True)
    left = canonical_solution(S, q)
    right = substitute_terms(F, {"y": numeral(q)})
    for i, M in enumerate(fixtures):
        report.checked += 1
        if not solves(M, S, F):
            report.ok = False
            report.failures.append((i, q, "candidate does not solve the s.i.p.", None))
            continue
        witness = find_non_implication(M, left, right, ("x", "z"))
        if witness is not None:
            report.ok = False
            report.failures.append((i, q, "canonical solution does not imply the candidate", witness))
    return report


# ------------------------------------------------------------------- I/O


@dataclass(frozen=True)
class SipFile:
    sip: SchematicSip
    solution: Formula | None = None


def parse_sip(text: str) -> SipFile:
    """(sip (lang ...) (gamma0 f...) (gamma1 f...) (gamma2 f...) (goal f) (steps t...) (ends u...) [(solution F)])"""
    root = read_sexpr(text)
    if not (isinstance(root, SList) and root.items and isinstance(root.items[0], SAtom)
            and root.items[0].text == "sip"):
        raise ParseError("expected (sip ...)", text, getattr(root, "pos", 0))
    entries = {}
    for item in root.items[1:]:
        if not isinstance(item, SList) or not item.items or not isinstance(item.items[0], SAtom):
            raise ParseError("malformed sip entry", text, item.pos)
        tag = item.items[0].text
        if tag in entries:
            raise ParseError(f"duplicate sip entry {tag!r}", text, item.pos)
        entries[tag] = item
    if "lang" not in entries:
        raise ParseError("a sip file must declare its signature with (lang ...)", text, root.pos)
    try:
        sig = parse_lang(entries.pop("lang"))
    except ParseError as exc:
        raise ParseError(str(exc), text, root.pos) from None
    parser = FormulaParser(sig, text)

    def formulas(tag):
        node = entries.pop(tag, None)
        return tuple(parser.formula(f) for f in node.items[1:]) if node is not None else ()

    def terms(tag):
        node = entries.pop(tag, None)
        return tuple(parser.term(t) for t in node.items[1:]) if node is not None else ()

    g0, g1, g2 = formulas("gamma0"), formulas("gamma1"), formulas("gamma2")
    goal = formulas("goal")
    if len(goal) != 1:
        raise ParseError("(goal f) takes exactly one formula", text, root.pos)
    steps, ends = terms("steps"), terms("ends")
    solution = formulas("solution")
    if len(solution) > 1:
        raise ParseError("(solution F) takes exactly one formula", text, root.pos)
    if entries:
        tag, node = next(iter(entries.items()))
        raise ParseError(f"unknown sip entry {tag!r}", text, node.pos)
    try:
        S = SchematicSip(g0, g1, g2, goal[0], steps, ends, sig)
    except SipError as exc:
        raise ParseError(str(exc), text, root.pos) from None
    return SipFile(S, solution[0] if solution else None)

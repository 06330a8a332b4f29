"""Constrained clauses and formula equations.

A clause is read as  ∀ȳ (constraint ∧ ⋀body → ⋁head); an empty head means ⊥.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .formula import (
    FALSE,
    TRUE,
    And,
    Eq,
    Exists,
    Forall,
    Formula,
    FormulaParser,
    Not,
    Or,
    ParseError,
    PhiSystem,
    PredVarAtom,
    SAtom,
    Signature,
    SList,
    Var,
    Verum,
    AFFINE_SIGNATURE,
    ExistsSO,
    free_predvars,
    free_vars_ordered,
    neg,
    print_raw,
    print_term,
    read_sexpr,
    substitute_terms,
    _term_vars_ordered,
    conj,
)


class Kind(enum.Enum):
    HORN = "Horn"
    DUAL_HORN = "DualHorn"
    LINEAR_HORN = "LinearHorn"
    GENERAL = "General"


class Role(enum.Enum):
    BASE = "Base"
    INDUCTION = "Induction"
    END = "End"


@dataclass(frozen=True)
class ClauseKind:
    kind: Kind
    role: Role | None  # only for Horn clauses

    @property
    def horn(self) -> bool:
        return self.kind in (Kind.HORN, Kind.LINEAR_HORN)

    @property
    def dual_horn(self) -> bool:
        return self.kind in (Kind.DUAL_HORN, Kind.LINEAR_HORN)


@dataclass(frozen=True)
class ConstrainedClause:
    constraint: Formula
    body: tuple  # PredVarAtom, negative occurrences
    head: tuple  # PredVarAtom, positive occurrences
    free_vars: tuple = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "head", tuple(self.head))
        if free_predvars(self.constraint):
            raise ValueError("clause constraint mentions a predicate variable")
        found: list[str] = []
        for v in free_vars_ordered(self.constraint):
            if v not in found:
                found.append(v)
        for atom in self.body + self.head:
            for a in atom.args:
                _term_vars_ordered(a, found)
        if self.free_vars is None:
            object.__setattr__(self, "free_vars", tuple(found))
        else:
            declared = tuple(self.free_vars)
            missing = [v for v in found if v not in declared]
            if missing:
                raise ValueError(f"clause uses undeclared variables {missing}")
            object.__setattr__(self, "free_vars", declared)

    def predvars(self) -> set[str]:
        return {a.pv for a in self.body + self.head}


def classify_clause(c: ConstrainedClause) -> ClauseKind:
    horn = len(c.head) <= 1
    dual = len(c.body) <= 1
    if horn and dual:
        kind = Kind.LINEAR_HORN
    elif horn:
        kind = Kind.HORN
    elif dual:
        kind = Kind.DUAL_HORN
    else:
        kind = Kind.GENERAL
    role = None
    if horn:
        if not c.head:
            role = Role.END
        elif c.body:
            role = Role.INDUCTION
        else:
            role = Role.BASE
    return ClauseKind(kind, role)


def clause_formula(c: ConstrainedClause) -> Formula:
    """∀ȳ (¬(γ ∧ ⋀body) ∨ ⋁head)."""
    antecedent = conj(c.constraint, *c.body)
    parts = (Not(antecedent), *c.head)
    f: Formula = parts[0] if len(parts) == 1 else Or(parts)
    for v in reversed(c.free_vars):
        f = Forall(v, f)
    return f


def dualize_clause(c: ConstrainedClause) -> ConstrainedClause:
    """ψ[X\\¬X] of a clause: body and head trade places."""
    return ConstrainedClause(c.constraint, c.head, c.body, c.free_vars)


@dataclass(frozen=True)
class FormulaEquation:
    sig: Signature
    predvars: tuple
    clauses: tuple

    def __post_init__(self):
        object.__setattr__(self, "predvars", tuple((n, int(k)) for n, k in self.predvars))
        object.__setattr__(self, "clauses", tuple(self.clauses))
        arity = dict(self.predvars)
        if len(arity) != len(self.predvars):
            raise ValueError("predicate variable declared twice")
        for c in self.clauses:
            for atom in c.body + c.head:
                if atom.pv not in arity:
                    raise ValueError(f"undeclared predicate variable {atom.pv}")
                if arity[atom.pv] != len(atom.args):
                    raise ValueError(
                        f"arity mismatch: {atom.pv} declared {arity[atom.pv]}, used with {len(atom.args)}"
                    )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.predvars)

    def arity(self, pv: str) -> int:
        return dict(self.predvars)[pv]

    def matrix(self) -> Formula:
        """ψ: the conjunction of the universally closed clauses."""
        parts = tuple(clause_formula(c) for c in self.clauses)
        return parts[0] if len(parts) == 1 else And(parts)

    def formula(self) -> Formula:
        """∃X̄ ψ."""
        f = self.matrix()
        for name, k in reversed(self.predvars):
            f = ExistsSO(name, k, f)
        return f

    def kinds(self) -> list[ClauseKind]:
        return [classify_clause(c) for c in self.clauses]

    def is_horn(self) -> bool:
        return all(k.horn for k in self.kinds())

    def is_dual_horn(self) -> bool:
        return all(k.dual_horn for k in self.kinds())

    def is_linear_horn(self) -> bool:
        return all(k.kind is Kind.LINEAR_HORN for k in self.kinds())

    def with_clauses(self, clauses: Iterable[ConstrainedClause]) -> "FormulaEquation":
        return FormulaEquation(self.sig, self.predvars, tuple(clauses))


def dualize_feq(fe: FormulaEquation) -> FormulaEquation:
    return fe.with_clauses(dualize_clause(c) for c in fe.clauses)


# ------------------------------------------------------ normalization


class ClauseShapeError(ValueError):
    pass


def normalize_to_clauses(f: Formula, predvars: Sequence[tuple[str, int]],
                         sig: Signature | None = None) -> FormulaEquation:
    """Read a conjunction of universally closed clauses as a clause set."""
    names = {n for n, _ in predvars}
    clauses = []
    for conjunct in _top_conjuncts(f):
        bound: list[str] = []
        g = conjunct
        while isinstance(g, Forall):
            bound.append(g.var)
            g = g.body
        if isinstance(g, And) and free_predvars(g) & names:
            # ∀ȳ(A ∧ B): one clause per conjunct
            for part in g.parts:
                wrapped = part
                for v in reversed(bound):
                    wrapped = Forall(v, wrapped)
                clauses.append(_clause_of(wrapped, names))
            continue
        clauses.append(_clause_of(conjunct, names))
    return FormulaEquation(sig or Signature(), tuple(predvars), tuple(clauses))


def _top_conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        out = []
        for p in f.parts:
            out.extend(_top_conjuncts(p))
        return out
    if isinstance(f, Verum):
        return []
    return [f]


def _clause_of(f: Formula, names: set[str]) -> ConstrainedClause:
    bound: list[str] = []
    while isinstance(f, Forall):
        if f.var not in bound:
            bound.append(f.var)
        f = f.body

    constraint_parts: list[Formula] = []  # pv-free disjuncts of the clause
    body, head = [], []

    def disjuncts(g: Formula) -> None:
        if not (free_predvars(g) & names):
            constraint_parts.append(g)
        elif isinstance(g, Or):
            for p in g.parts:
                disjuncts(p)
        elif isinstance(g, PredVarAtom):
            head.append(g)
        elif isinstance(g, Not):
            inner = g.body
            if isinstance(inner, PredVarAtom):
                body.append(inner)
            elif isinstance(inner, Not):
                disjuncts(inner.body)
            elif isinstance(inner, And):
                for p in inner.parts:
                    disjuncts(neg(p))
            else:
                raise ClauseShapeError(
                    f"predicate variable in non-literal position: {print_raw(g)}"
                )
        else:
            raise ClauseShapeError(f"predicate variable in non-literal position: {print_raw(g)}")

    disjuncts(f)
    # the clause is ⋁d ∨ ⋁¬body ∨ ⋁head, so the antecedent constraint is ⋀¬d
    negated = [neg(d) for d in constraint_parts]
    constraint: Formula = TRUE if not negated else negated[0] if len(negated) == 1 else And(tuple(negated))
    found = list(bound)
    for v in free_vars_ordered(f):
        if v not in found:
            found.append(v)
    return ConstrainedClause(constraint, tuple(body), tuple(head), tuple(found))


# ---------------------------------------------- translated clauses, Φ


def translate_clause(c: ConstrainedClause, target_pv: str, result_vars: Sequence[str]) -> Formula:
    """T_C(x̄) = γ ∧ ⋀body ∧ x̄ = s̄."""
    kind = classify_clause(c)
    if kind.role not in (Role.BASE, Role.INDUCTION):
        raise ValueError("translate_clause needs a Base or Induction clause")
    (h,) = c.head
    if h.pv != target_pv:
        raise ValueError(f"clause head is {h.pv}, not {target_pv}")
    if len(result_vars) != len(h.args):
        raise ValueError("result variable tuple does not match head arity")
    parts = [c.constraint, *c.body, *(Eq(Var(x), s) for x, s in zip(result_vars, h.args))]
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def formal_names(arity: int, avoid: Iterable[str]) -> tuple[str, ...]:
    avoid = set(avoid)
    base = ["x"] if arity == 1 else [f"x{i}" for i in range(1, arity + 1)]
    out = []
    for b in base:
        name = b
        while name in avoid:
            name += "'"
        out.append(name)
    return tuple(out)


def build_phi(fe: FormulaEquation) -> PhiSystem:
    kinds = fe.kinds()
    for c, k in zip(fe.clauses, kinds):
        if not k.horn:
            raise ValueError(f"non-Horn clause: {clause_text(c)}")
    used = set()
    for c in fe.clauses:
        used |= set(c.free_vars)
    components, params_all = [], []
    for name, arity in fe.predvars:
        params = formal_names(arity, used)
        contributing = [c for c, k in zip(fe.clauses, kinds)
                        if k.role in (Role.BASE, Role.INDUCTION) and c.head[0].pv == name]
        disjuncts = [translate_clause(c, name, params) for c in contributing]
        if not disjuncts:
            comp: Formula = FALSE
        else:
            comp = disjuncts[0] if len(disjuncts) == 1 else Or(tuple(disjuncts))
            ys: list[str] = []
            for c in contributing:
                ys.extend(v for v in c.free_vars if v not in ys)
            for v in reversed(ys):
                comp = Exists(v, comp)
        components.append(comp)
        params_all.append(params)
    return PhiSystem(fe.predvars, tuple(components), tuple(params_all))


def split_clauses(fe: FormulaEquation) -> tuple[PhiSystem, list[ConstrainedClause]]:
    phi = build_phi(fe)
    ends = [c for c, k in zip(fe.clauses, fe.kinds()) if k.role is Role.END]
    return phi, ends


def split_formula(phi: PhiSystem, ends: Sequence[ConstrainedClause]) -> Formula:
    """⋀_j ∀x̄_j(φ_j → X_j(x̄_j)) ∧ ⋀E."""
    parts: list[Formula] = []
    for (name, _), params, comp in zip(phi.predvars, phi.formal_args, phi.components):
        g: Formula = Or((Not(comp), PredVarAtom(name, tuple(Var(p) for p in params))))
        for p in reversed(params):
            g = Forall(p, g)
        parts.append(g)
    parts.extend(clause_formula(c) for c in ends)
    return conj(*parts) if len(parts) != 1 else parts[0]


DEFAULT_SIZE_LIMIT = 500_000


def approximate_so(fe: FormulaEquation, depth: int, max_size: int = DEFAULT_SIZE_LIMIT) -> list[Formula]:
    """First-order consequences of ∃X̄ψ from the σ-approximants up to depth.

    Each end clause ∀ȳ(γ ∧ ⋀X_i(t̄_i) → ⊥) yields  ∀ȳ ¬(γ ∧ ⋀σ^{l_i}_i(t̄_i))
    for every choice of levels l_i ≤ depth.  Output is grouped by the maximal
    level, so the list for depth d is a prefix of the list for d+1.
    """
    from .semantics import sigma_levels

    phi, ends = split_clauses(fe)
    levels = sigma_levels(phi, depth, max_size)
    out: list[Formula] = []
    for top in range(depth + 1):
        for e in ends:
            m = len(e.body)
            choices = [()] if m == 0 else [
                t for t in itertools.product(range(top + 1), repeat=m) if max(t) == top
            ]
            if m == 0 and top > 0:
                continue
            for choice in choices:
                parts = [e.constraint]
                for atom, lvl in zip(e.body, choice):
                    j = phi.index(atom.pv)
                    parts.append(substitute_terms(levels[lvl][j], dict(zip(phi.formal_args[j], atom.args))))
                g: Formula = Not(parts[0] if len(parts) == 1 else And(tuple(parts)))
                for v in reversed(e.free_vars):
                    g = Forall(v, g)
                out.append(g)
    return out


# ---------------------------------------------------------- FEQ format


def parse_lang(node) -> Signature:
    if not (isinstance(node, SList) and node.items and isinstance(node.items[0], SAtom)
            and node.items[0].text == "lang"):
        raise ParseError("expected (lang ...)")
    consts, funs, preds = set(), {}, {}
    rationals = False
    for decl in node.items[1:]:
        if isinstance(decl, SAtom) and decl.text == "affine":
            rationals = True
            funs.update(AFFINE_SIGNATURE.functions)
            continue
        if not isinstance(decl, SList) or not decl.items or not all(isinstance(x, SAtom) for x in decl.items):
            raise ParseError("malformed lang declaration")
        kind = decl.items[0].text
        if kind == "const" and len(decl.items) == 2:
            consts.add(decl.items[1].text)
        elif kind in ("fun", "pred") and len(decl.items) == 3 and decl.items[2].text.isdigit():
            (funs if kind == "fun" else preds)[decl.items[1].text] = int(decl.items[2].text)
        else:
            raise ParseError(f"malformed lang declaration ({kind} ...)")
    return Signature(frozenset(consts), funs, preds, rationals)


def _pv_atoms(parser: FormulaParser, node, arity: dict[str, int]) -> list[PredVarAtom]:
    out = []
    for item in node.items[1:]:
        if isinstance(item, SAtom):
            item = SList([item], item.pos)
        if not item.items or not isinstance(item.items[0], SAtom):
            raise parser.error("expected (PV term...)", item)
        name = item.items[0].text
        if name not in arity:
            raise parser.error(f"undeclared predicate variable {name}", item)
        args = tuple(parser.term(a) for a in item.items[1:])
        if len(args) != arity[name]:
            raise parser.error(f"arity mismatch: {name} expects {arity[name]} arguments", item)
        out.append(PredVarAtom(name, args))
    return out


def parse_feq(text: str) -> FormulaEquation:
    root = read_sexpr(text)
    if not (isinstance(root, SList) and root.items and isinstance(root.items[0], SAtom)
            and root.items[0].text == "feq"):
        raise ParseError("expected (feq ...)", text, getattr(root, "pos", 0))
    sig = Signature()
    predvars: list[tuple[str, int]] = []
    clause_nodes, formula_nodes = [], []
    for item in root.items[1:]:
        if not isinstance(item, SList) or not item.items or not isinstance(item.items[0], SAtom):
            raise ParseError("malformed feq entry", text, item.pos)
        tag = item.items[0].text
        if tag == "lang":
            try:
                sig = parse_lang(item)
            except ParseError as exc:
                raise ParseError(str(exc), text, item.pos) from None
        elif tag == "predvars":
            for d in item.items[1:]:
                if not (isinstance(d, SList) and len(d.items) == 2 and all(isinstance(x, SAtom) for x in d.items)
                        and d.items[1].text.isdigit()):
                    raise ParseError("expected (NAME arity)", text, d.pos)
                predvars.append((d.items[0].text, int(d.items[1].text)))
        elif tag == "clause":
            clause_nodes.append(item)
        elif tag == "formula":
            formula_nodes.append(item)
        else:
            raise ParseError(f"unknown feq entry {tag!r}", text, item.pos)
    arity = dict(predvars)
    parser = FormulaParser(sig, text, arity)
    clauses = []
    for node in clause_nodes:
        declared = None
        constraint: Formula = TRUE
        body: list[PredVarAtom] = []
        head: list[PredVarAtom] = []
        for part in node.items[1:]:
            if not isinstance(part, SList) or not part.items or not isinstance(part.items[0], SAtom):
                raise parser.error("malformed clause entry", part)
            tag = part.items[0].text
            if tag == "vars":
                declared = parser._var_list(SList(part.items[1:], part.pos))
            elif tag == "constraint":
                if len(part.items) != 2:
                    raise parser.error("constraint takes one formula", part)
                constraint = parser.formula(part.items[1], {})
            elif tag == "body":
                body = _pv_atoms(parser, part, arity)
            elif tag == "head":
                head = _pv_atoms(parser, part, arity)
            else:
                raise parser.error(f"unknown clause entry {tag!r}", part)
        try:
            clauses.append(ConstrainedClause(constraint, tuple(body), tuple(head),
                                             None if declared is None else tuple(declared)))
        except ValueError as exc:
            raise parser.error(str(exc), node) from None
    for node in formula_nodes:
        if len(node.items) != 2:
            raise parser.error("formula takes one argument", node)
        f = parser.formula(node.items[1])
        try:
            clauses.extend(normalize_to_clauses(f, predvars, sig).clauses)
        except ClauseShapeError as exc:
            raise parser.error(str(exc), node) from None
    return FormulaEquation(sig, tuple(predvars), tuple(clauses))


def _atom_text(a: PredVarAtom) -> str:
    return "(" + " ".join([a.pv, *map(print_term, a.args)]) + ")"


def clause_text(c: ConstrainedClause) -> str:
    parts = ["clause"]
    if c.free_vars:
        parts.append("(vars " + " ".join(c.free_vars) + ")")
    if not isinstance(c.constraint, Verum):
        parts.append(f"(constraint {print_raw(c.constraint)})")
    if c.body:
        parts.append("(body " + " ".join(map(_atom_text, c.body)) + ")")
    if c.head:
        parts.append("(head " + " ".join(map(_atom_text, c.head)) + ")")
    return "(" + " ".join(parts) + ")"


def print_feq(fe: FormulaEquation) -> str:
    lines = ["(feq", "  " + fe.sig.to_sexpr(),
             "  (predvars" + "".join(f" ({n} {k})" for n, k in fe.predvars) + ")"]
    lines += ["  " + clause_text(c) for c in fe.clauses]
    return "\n".join(lines) + ")"

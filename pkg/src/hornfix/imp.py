"""A small WHILE language: parser, interpreter, verification conditions, wp/sp, Hoare rules."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import affine
from .clauses import (
    ConstrainedClause,
    FormulaEquation,
    build_phi,
    classify_clause,
    dualize_feq,
    parse_lang,
)
from .formula import (
    And,
    Formula,
    FormulaParser,
    ParseError,
    PredVarAtom,
    Reader,
    SAtom,
    SList,
    Signature,
    Term,
    Var,
    conj,
    free_predvars,
    free_vars,
    implies,
    is_quantifier_free,
    neg,
    print_raw,
    print_term,
    substitute_predicates,
    substitute_terms,
    term_vars,
)
from .semantics import (
    BudgetExceeded,
    Evaluator,
    FiniteStructure,
    complement,
    holds_with,
    lfp_iterate,
    satisfying_tuples,
)

DEFAULT_FUEL = 50
STATE_BUDGET = 1 << 16
KEYWORDS = frozenset({"skip", "if", "then", "else", "fi", "while", "invariant", "do", "od"})


class ProgramError(ValueError):
    pass


class MissingAnnotation(ProgramError):
    pass


class InvariantClassError(ProgramError):
    pass


class IndeterminateRun(RuntimeError):
    """Some run exhausted its fuel, so a set-valued answer would be unreliable."""

    def __init__(self, message: str, states: list):
        super().__init__(message)
        self.states = states


# ------------------------------------------------------------------ AST


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    term: Term


@dataclass(frozen=True)
class Seq:
    first: "Program"
    second: "Program"


@dataclass(frozen=True)
class If:
    cond: Formula
    then: "Program"
    orelse: "Program"


@dataclass(frozen=True)
class While:
    cond: Formula
    body: "Program"
    invariant: Formula | None = None


Program = Skip | Assign | Seq | If | While


@dataclass(frozen=True)
class HoareTriple:
    pre: Formula
    prog: Program
    post: Formula
    sig: Signature = field(default_factory=Signature)


class Special(enum.Enum):
    BOTTOM = "bottom"
    FUEL_EXHAUSTED = "fuel-exhausted"


BOTTOM = Special.BOTTOM
FUEL_EXHAUSTED = Special.FUEL_EXHAUSTED


def _check_condition(f: Formula, where: str) -> None:
    if not is_quantifier_free(f):
        raise ProgramError(f"{where} must be quantifier-free")
    if free_predvars(f):
        raise ProgramError(f"{where} must not contain predicate variables")


def program_vars(p: Program) -> set[str]:
    if isinstance(p, Skip):
        return set()
    if isinstance(p, Assign):
        return {p.var} | term_vars(p.term)
    if isinstance(p, Seq):
        return program_vars(p.first) | program_vars(p.second)
    if isinstance(p, If):
        return set(free_vars(p.cond)) | program_vars(p.then) | program_vars(p.orelse)
    if isinstance(p, While):
        out = set(free_vars(p.cond)) | program_vars(p.body)
        if p.invariant is not None:
            out |= free_vars(p.invariant)
        return out
    raise TypeError(f"not a program: {p!r}")


def state_vars(t: HoareTriple) -> tuple[str, ...]:
    return tuple(sorted(program_vars(t.prog) | free_vars(t.pre) | free_vars(t.post)))


# --------------------------------------------------------------- parser


class _ProgramParser:
    def __init__(self, reader: Reader, sig: Signature):
        self.r = reader
        self.fp = FormulaParser(sig, reader.text)

    def formula(self) -> Formula:
        node = self.r.read()
        f = self.fp.formula(node)
        return f

    def program(self) -> Program:
        first = self.statement()
        tok = self.r.peek()
        if tok is not None and tok.text == ";":
            self.r.next()
            return Seq(first, self.program())
        return first

    def statement(self) -> Program:
        tok = self.r.peek()
        if tok is None:
            raise self.r.error("expected a statement")
        word = tok.text
        if word == "skip":
            self.r.next()
            return Skip()
        if word == "if":
            self.r.next()
            cond = self._condition("if condition")
            self.r.expect("then")
            then = self.program()
            self.r.expect("else")
            orelse = self.program()
            self.r.expect("fi")
            return If(cond, then, orelse)
        if word == "while":
            self.r.next()
            cond = self._condition("loop condition")
            invariant = None
            nxt = self.r.peek()
            if nxt is not None and nxt.text == "invariant":
                self.r.next()
                invariant = self.formula()
            self.r.expect("do")
            body = self.program()
            self.r.expect("od")
            return While(cond, body, invariant)
        if word in KEYWORDS or word in ("(", ")", ";", ":=", "{", "}", ","):
            raise self.r.error(f"unexpected {word!r}", tok.pos)
        self.r.next()
        target = self.fp.atom_term(SAtom(word, tok.pos))
        if not isinstance(target, Var):
            raise self.r.error(f"cannot assign to {word}", tok.pos)
        self.r.expect(":=")
        node = self.r.read()
        return Assign(target.name, self.fp.term(node))

    def _condition(self, where: str) -> Formula:
        start = self.r.peek()
        f = self.formula()
        try:
            _check_condition(f, where)
        except ProgramError as exc:
            raise self.r.error(str(exc), start.pos) from None
        return f


def _leading_lang(reader: Reader, sig: Signature | None) -> Signature:
    tok = reader.peek()
    if tok is not None and tok.text == "(":
        save = reader.i
        node = reader.read()
        if isinstance(node, SList) and node.items and isinstance(node.items[0], SAtom) \
                and node.items[0].text == "lang":
            try:
                return parse_lang(node)
            except ParseError as exc:
                raise ParseError(str(exc), reader.text, node.pos) from None
        reader.i = save
    return sig if sig is not None else Signature()


def parse_program(text: str, sig: Signature | None = None) -> Program:
    """Parse a program; an optional leading (lang ...) declares the signature."""
    r = Reader(text)
    sig = _leading_lang(r, sig)
    p = _ProgramParser(r, sig).program()
    if not r.at_end():
        raise r.error(f"unexpected {r.peek().text!r} after program")
    return p


def parse_triple(text: str, sig: Signature | None = None) -> HoareTriple:
    """(lang ...) {pre} program {post}"""
    r = Reader(text)
    sig = _leading_lang(r, sig)
    pp = _ProgramParser(r, sig)
    r.expect("{")
    pre = pp.formula()
    r.expect("}")
    prog = pp.program()
    r.expect("{")
    post = pp.formula()
    r.expect("}")
    if not r.at_end():
        raise r.error(f"unexpected {r.peek().text!r} after the postcondition")
    return HoareTriple(pre, prog, post, sig)


def print_program(p: Program) -> str:
    if isinstance(p, Skip):
        return "skip"
    if isinstance(p, Assign):
        return f"{p.var} := {print_term(p.term)}"
    if isinstance(p, Seq):
        return f"{print_program(p.first)} ; {print_program(p.second)}"
    if isinstance(p, If):
        return f"if {print_raw(p.cond)} then {print_program(p.then)} else {print_program(p.orelse)} fi"
    if isinstance(p, While):
        inv = f" invariant {print_raw(p.invariant)}" if p.invariant is not None else ""
        return f"while {print_raw(p.cond)}{inv} do {print_program(p.body)} od"
    raise TypeError(f"not a program: {p!r}")


def print_triple(t: HoareTriple) -> str:
    return f"{{{print_raw(t.pre)}}} {print_program(t.prog)} {{{print_raw(t.post)}}}"


# ---------------------------------------------------------- interpreter


class Interpreter:
    def __init__(self, M: FiniteStructure, evaluator: Evaluator | None = None):
        self.M = M
        self.ev = evaluator or Evaluator(M)
        self._terms: dict = {}
        self._conds: dict = {}

    def _term(self, t: Term):
        fn = self._terms.get(t)
        if fn is None:
            fn = self._terms[t] = self.ev.term(t)
        return fn

    def _cond(self, f: Formula):
        fn = self._conds.get(f)
        if fn is None:
            fn = self._conds[f] = self.ev.compile(f)
        return fn

    def run(self, p: Program, state: Mapping[str, int], fuel: int = DEFAULT_FUEL):
        """Final state dict, BOTTOM for detected divergence, or FUEL_EXHAUSTED."""
        env = dict(state)
        budget = [fuel]
        try:
            self._exec(p, env, budget)
        except _Diverges:
            return BOTTOM
        except _OutOfFuel:
            return FUEL_EXHAUSTED
        return env

    def _exec(self, p: Program, env: dict, budget: list) -> None:
        if isinstance(p, Skip):
            return
        if isinstance(p, Assign):
            env[p.var] = self._term(p.term)(env)
            return
        if isinstance(p, Seq):
            self._exec(p.first, env, budget)
            self._exec(p.second, env, budget)
            return
        if isinstance(p, If):
            self._exec(p.then if self._cond(p.cond)(env, {}) else p.orelse, env, budget)
            return
        if isinstance(p, While):
            cond = self._cond(p.cond)
            seen = set()
            keys = sorted(env)
            while cond(env, {}):
                # deterministic: a repeated loop-head state means the loop never exits
                snapshot = tuple(env[k] for k in keys)
                if snapshot in seen:
                    raise _Diverges
                seen.add(snapshot)
                if budget[0] <= 0:
                    raise _OutOfFuel
                budget[0] -= 1
                self._exec(p.body, env, budget)
            return
        raise TypeError(f"not a program: {p!r}")


class _Diverges(Exception):
    pass


class _OutOfFuel(Exception):
    pass


def interpret(M: FiniteStructure, p: Program, state: Mapping[str, int], fuel: int = DEFAULT_FUEL):
    return Interpreter(M).run(p, state, fuel)


def all_states(M: FiniteStructure, names: Sequence[str]) -> list[tuple]:
    if M.size ** len(names) > STATE_BUDGET:
        raise BudgetExceeded(f"{M.size}^{len(names)} states exceed the budget {STATE_BUDGET}")
    return list(itertools.product(range(M.size), repeat=len(names)))


# ------------------------------------------------------ semantic checks


@dataclass
class HoareCheck:
    holds: bool | None  # None when fuel ran out and no counterexample was found
    counterexample: dict | None = None
    exhausted: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.holds is True


def _assignment_fn(ev: Evaluator, f: Formula):
    fn = ev.compile(f)
    return lambda state: fn(dict(state), {})


def check_hoare_semantic(M: FiniteStructure, t: HoareTriple, fuel: int = DEFAULT_FUEL) -> HoareCheck:
    names = state_vars(t)
    interp = Interpreter(M)
    pre = _assignment_fn(interp.ev, t.pre)
    post = _assignment_fn(interp.ev, t.post)
    exhausted = []
    for values in all_states(M, names):
        sigma = dict(zip(names, values))
        if not pre(sigma):
            continue
        out = interp.run(t.prog, sigma, fuel)
        if out is BOTTOM:
            continue
        if out is FUEL_EXHAUSTED:
            exhausted.append(sigma)
            continue
        if not post(out):
            return HoareCheck(False, sigma, exhausted)
    return HoareCheck(None if exhausted else True, None, exhausted)


def _state_names(p: Program, f: Formula, variables: Sequence[str] | None) -> tuple[str, ...]:
    if variables is not None:
        return tuple(variables)
    return tuple(sorted(program_vars(p) | free_vars(f)))


def wp_set(M: FiniteStructure, p: Program, post: Formula, fuel: int = DEFAULT_FUEL,
           variables: Sequence[str] | None = None) -> frozenset:
    """{σ : C(p)(σ) ⊨ post}, divergence counting as satisfying; states are value tuples."""
    names = _state_names(p, post, variables)
    interp = Interpreter(M)
    psi = _assignment_fn(interp.ev, post)
    out, exhausted = [], []
    for values in all_states(M, names):
        sigma = dict(zip(names, values))
        res = interp.run(p, sigma, fuel)
        if res is FUEL_EXHAUSTED:
            exhausted.append(sigma)
        elif res is BOTTOM or psi(res):
            out.append(values)
    if exhausted:
        raise IndeterminateRun(f"{len(exhausted)} runs exhausted their fuel", exhausted)
    return frozenset(out)


def sp_set(M: FiniteStructure, p: Program, pre: Formula, fuel: int = DEFAULT_FUEL,
           variables: Sequence[str] | None = None) -> frozenset:
    """{C(p)(σ) : σ ⊨ pre and the run terminates}."""
    names = _state_names(p, pre, variables)
    interp = Interpreter(M)
    phi = _assignment_fn(interp.ev, pre)
    out, exhausted = set(), []
    for values in all_states(M, names):
        sigma = dict(zip(names, values))
        if not phi(sigma):
            continue
        res = interp.run(p, sigma, fuel)
        if res is FUEL_EXHAUSTED:
            exhausted.append(sigma)
        elif res is not BOTTOM:
            out.add(tuple(res[n] for n in names))
    if exhausted:
        raise IndeterminateRun(f"{len(exhausted)} runs exhausted their fuel", exhausted)
    return frozenset(out)


# --------------------------------------------- verification conditions


@dataclass
class VC:
    fe: FormulaEquation
    state: tuple  # state variable names, the argument order of every fresh predicate variable
    fresh: list  # fresh predicate variable names in creation order
    witnesses: dict  # fresh name -> annotation-derived formula, or None when a loop is unannotated


class _VcBuilder:
    def __init__(self, state: Sequence[str], taken: set[str]):
        self.args = tuple(Var(v) for v in state)
        self.taken = set(taken)
        self.fresh: list[str] = []
        self.witness: dict = {}
        self.implications: list[tuple[list[Formula], Formula]] = []

    def new_pv(self, witness: Formula | None) -> PredVarAtom:
        i = len(self.fresh) + 1
        while f"I{i}" in self.taken:
            i += 1
        name = f"I{i}"
        self.taken.add(name)
        self.fresh.append(name)
        self.witness[name] = witness
        return PredVarAtom(name, self.args)

    def emit(self, antecedent: Formula, consequent: Formula) -> None:
        self.implications.append((_conjuncts(antecedent), consequent))

    def vct(self, phi: Formula, p: Program, psi: Formula) -> None:
        if isinstance(p, Skip):
            self.emit(phi, psi)
        elif isinstance(p, Assign):
            self.emit(phi, substitute_terms(psi, {p.var: p.term}))
        elif isinstance(p, Seq):
            try:
                mid = annotated_wp(p.second, psi)
            except MissingAnnotation:
                mid = None
            inv = self.new_pv(mid)
            self.vct(phi, p.first, inv)
            self.vct(inv, p.second, psi)
        elif isinstance(p, If):
            self.vct(conj(phi, p.cond), p.then, psi)
            self.vct(conj(phi, neg(p.cond)), p.orelse, psi)
        elif isinstance(p, While):
            inv = self.new_pv(p.invariant)
            self.vct(conj(inv, p.cond), p.body, inv)
            self.emit(phi, inv)
            self.emit(conj(inv, neg(p.cond)), psi)
        else:
            raise TypeError(f"not a program: {p!r}")


def _conjuncts(f: Formula) -> list[Formula]:
    if isinstance(f, And):
        return [g for p in f.parts for g in _conjuncts(p)]
    return [f]


def _to_clause(antecedent: list[Formula], consequent: Formula) -> ConstrainedClause:
    body = tuple(a for a in antecedent if isinstance(a, PredVarAtom))
    fo = [a for a in antecedent if not isinstance(a, PredVarAtom)]
    for a in fo:
        if free_predvars(a):
            raise ProgramError("predicate variables may only occur as atoms in pre and postconditions")
    if isinstance(consequent, PredVarAtom):
        return ConstrainedClause(conj(*fo), body, (consequent,))
    if free_predvars(consequent):
        raise ProgramError("a postcondition with predicate variables must be a single atom")
    return ConstrainedClause(conj(*fo, neg(consequent)), body, ())


def _pv_decls(fs: Sequence[Formula]) -> list[tuple[str, int]]:
    out: dict[str, int] = {}
    for f in fs:
        for a in _pv_atoms(f):
            out.setdefault(a.pv, len(a.args))
    return list(out.items())


def _pv_atoms(f: Formula):
    if isinstance(f, PredVarAtom):
        yield f
    elif isinstance(f, And):
        for p in f.parts:
            yield from _pv_atoms(p)


def vcgen_full(t: HoareTriple, state: Sequence[str] | None = None) -> VC:
    names = tuple(state) if state is not None else state_vars(t)
    outer = _pv_decls([t.pre, t.post])
    builder = _VcBuilder(names, {n for n, _ in outer})
    builder.vct(t.pre, t.prog, t.post)
    clauses = []
    for ante, cons in builder.implications:
        c = _to_clause(ante, cons)
        if not classify_clause(c).horn or len(c.body) > 1:
            raise AssertionError("verification condition clause is not linear-Horn")
        clauses.append(c)
    predvars = outer + [(n, len(names)) for n in builder.fresh]
    fe = FormulaEquation(t.sig, tuple(predvars), tuple(clauses))
    witnesses = _resolve_witnesses(builder.fresh, builder.witness, names)
    return VC(fe, names, list(builder.fresh), witnesses)


def vcgen(t: HoareTriple) -> FormulaEquation:
    return vcgen_full(t).fe


def _resolve_witnesses(order: list[str], raw: dict, names: tuple) -> dict:
    """Replace fresh predicate variables inside witnesses by their own (earlier) witnesses."""
    resolved: dict = {}
    for n in order:
        w = raw[n]
        if w is not None:
            inner = free_predvars(w)
            if any(resolved.get(m) is None for m in inner if m in raw):
                w = None
            else:
                subst = {m: (names, resolved[m]) for m in inner if m in raw}
                w = substitute_predicates(w, subst) if subst else w
        resolved[n] = w
    return resolved


# ------------------------------------------------------------- wp / sp via fixed points


def _fresh_name(base: str, taken: set[str]) -> str:
    name, i = base, 0
    while name in taken:
        i += 1
        name = f"{base}{i}"
    return name


def wp_lfp(M: FiniteStructure, p: Program, post: Formula, variables: Sequence[str] | None = None,
           sig: Signature | None = None) -> frozenset:
    """wp as the complement of the least solution of the dualized vc({Y} p {post})."""
    names = _state_names(p, post, variables)
    y = _fresh_name("Y", set(free_predvars(post)))
    triple = HoareTriple(PredVarAtom(y, tuple(Var(v) for v in names)), p, post, sig or Signature())
    fe = vcgen_full(triple, names).fe
    dual = dualize_feq(fe)
    mu = lfp_iterate(M, build_phi(dual))
    return complement(M, mu[y], len(names))


def sp_lfp(M: FiniteStructure, p: Program, pre: Formula, variables: Sequence[str] | None = None,
           sig: Signature | None = None) -> frozenset:
    """sp as the least solution for X of vc({pre} p {X})."""
    names = _state_names(p, pre, variables)
    x = _fresh_name("X", set(free_predvars(pre)))
    triple = HoareTriple(pre, p, PredVarAtom(x, tuple(Var(v) for v in names)), sig or Signature())
    fe = vcgen_full(triple, names).fe
    return lfp_iterate(M, build_phi(fe))[x]


def witness_relations(M: FiniteStructure, vc: VC) -> dict:
    missing = [n for n, w in vc.witnesses.items() if w is None]
    if missing:
        raise MissingAnnotation(f"no annotation-derived witness for {', '.join(missing)}")
    ev = Evaluator(M)
    return {n: satisfying_tuples(M, w, vc.state, evaluator=ev) for n, w in vc.witnesses.items()}


def vc_holds_with_annotations(M: FiniteStructure, t: HoareTriple) -> bool:
    """Evaluate vct with every fresh predicate variable replaced by its annotation-derived formula."""
    vc = vcgen_full(t)
    return holds_with(M, vc.fe, witness_relations(M, vc))


# --------------------------------------------------------- Hoare rules


def annotated_wp(p: Program, post: Formula) -> Formula:
    """Syntactic weakest precondition, using loop annotations as loop preconditions."""
    if isinstance(p, Skip):
        return post
    if isinstance(p, Assign):
        return substitute_terms(post, {p.var: p.term})
    if isinstance(p, Seq):
        return annotated_wp(p.first, annotated_wp(p.second, post))
    if isinstance(p, If):
        return conj(implies(p.cond, annotated_wp(p.then, post)), implies(neg(p.cond), annotated_wp(p.orelse, post)))
    if isinstance(p, While):
        if p.invariant is None:
            raise MissingAnnotation(f"loop 'while {print_raw(p.cond)}' has no invariant annotation")
        return p.invariant
    raise TypeError(f"not a program: {p!r}")


class InvariantClass(enum.Enum):
    ALL = "All"
    LINEAR_EQ = "LinearEq"


def in_class(f: Formula, cls: InvariantClass) -> bool:
    if cls is InvariantClass.ALL:
        return True
    try:
        affine.constraint_equations(f)
    except affine.AffineError:
        return False
    return True


@dataclass
class CalculusReport:
    ok: bool
    failures: list = field(default_factory=list)  # (rule, side condition formula, counterexample)

    def __bool__(self) -> bool:
        return self.ok


def check_hoare_calculus(M: FiniteStructure | None, t: HoareTriple, invariant_class: str | InvariantClass = "All"
                         ) -> CalculusReport:
    """Rebuild a derivation from the loop annotations and check every side condition.

    With M given, side conditions are evaluated on M; with M None they are
    decided over the rationals (the formulas must then be linear).
    """
    cls = InvariantClass(invariant_class) if isinstance(invariant_class, str) else invariant_class
    names = state_vars(t)
    failures: list = []
    ev = Evaluator(M) if M is not None else None

    def side(rule: str, ante: Formula, cons: Formula) -> None:
        f = implies(ante, cons)
        if ev is not None:
            fn = ev.compile(f)
            for values in all_states(M, names):
                sigma = dict(zip(names, values))
                if not fn(dict(sigma), {}):
                    failures.append((rule, f, sigma))
                    return
        else:
            res = affine.qflra_valid(f)
            if not res:
                failures.append((rule, f, res.counterexample))

    def require(f: Formula, what: str) -> None:
        if not in_class(f, cls):
            raise InvariantClassError(f"{what} {print_raw(f)} is outside the class {cls.value}")

    def prove(phi: Formula, p: Program, psi: Formula) -> None:
        if isinstance(p, Skip):
            side("skip+consequence", phi, psi)
        elif isinstance(p, Assign):
            side("assign+consequence", phi, substitute_terms(psi, {p.var: p.term}))
        elif isinstance(p, Seq):
            mid = annotated_wp(p.second, psi)
            require(mid, "sequence intermediate")
            prove(phi, p.first, mid)
            prove(mid, p.second, psi)
        elif isinstance(p, If):
            prove(conj(phi, p.cond), p.then, psi)
            prove(conj(phi, neg(p.cond)), p.orelse, psi)
        elif isinstance(p, While):
            if p.invariant is None:
                raise MissingAnnotation(f"loop 'while {print_raw(p.cond)}' has no invariant annotation")
            inv = p.invariant
            require(inv, "loop invariant")
            side("while: precondition implies invariant", phi, inv)
            prove(conj(inv, p.cond), p.body, inv)
            side("while: invariant and exit imply postcondition", conj(inv, neg(p.cond)), psi)
        else:
            raise TypeError(f"not a program: {p!r}")

    prove(t.pre, t.prog, t.post)
    return CalculusReport(not failures, failures)

"""Terms and formulas: first-order, least-fixed-point atoms and second-order
quantifiers over predicate variables.

Concrete syntax is an s-expression language; function applications may also
be written in call style, ``s(s(0))``.  Implication and biconditional are
expanded by the parser, so the core grammar only knows ``not``/``and``/``or``.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence


class ParseError(ValueError):
    def __init__(self, message: str, text: str | None = None, pos: int | None = None):
        if text is not None and pos is not None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
            message = f"{line}:{col}: {message}"
        super().__init__(message)
        self.pos = pos


def _node(cls):
    # frozen dataclass with a memoised hash; formulas are deep, shared trees
    cls = dataclass(frozen=True)(cls)
    raw_hash = cls.__hash__

    def __hash__(self):
        try:
            return self.__dict__["_hash"]
        except KeyError:
            h = raw_hash(self)
            object.__setattr__(self, "_hash", h)
            return h

    cls.__hash__ = __hash__
    return cls


def _freeze(obj, name):
    value = getattr(obj, name)
    if not isinstance(value, tuple):
        object.__setattr__(obj, name, tuple(value))


# ---------------------------------------------------------------- terms


class Term:
    pass


@_node
class Var(Term):
    name: str


@_node
class Const(Term):
    name: str


@_node
class App(Term):
    fun: str
    args: tuple

    def __post_init__(self):
        _freeze(self, "args")


def numeral(n: int) -> Term:
    """The term s^n(0)."""
    t: Term = Const("0")
    for _ in range(n):
        t = App("s", (t,))
    return t


def term_vars(t: Term) -> frozenset[str]:
    if isinstance(t, Var):
        return frozenset((t.name,))
    if isinstance(t, Const):
        return frozenset()
    cached = t.__dict__.get("_fv")
    if cached is None:
        cached = frozenset().union(*(term_vars(a) for a in t.args))
        object.__setattr__(t, "_fv", cached)
    return cached


def _term_vars_ordered(t: Term, out: list[str]) -> None:
    if isinstance(t, Var):
        if t.name not in out:
            out.append(t.name)
    elif isinstance(t, App):
        for a in t.args:
            _term_vars_ordered(a, out)


def substitute_in_term(t: Term, subst: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return subst.get(t.name, t)
    if isinstance(t, Const):
        return t
    if not (term_vars(t) & subst.keys()):
        return t
    return App(t.fun, tuple(substitute_in_term(a, subst) for a in t.args))


# ------------------------------------------------------------- formulas


class Formula:
    pass


@_node
class Verum(Formula):
    pass


@_node
class Falsum(Formula):
    pass


TRUE = Verum()
FALSE = Falsum()


@_node
class Atom(Formula):
    pred: str
    args: tuple

    def __post_init__(self):
        _freeze(self, "args")


@_node
class Eq(Formula):
    lhs: Term
    rhs: Term


@_node
class PredVarAtom(Formula):
    pv: str
    args: tuple

    def __post_init__(self):
        _freeze(self, "args")


@_node
class Not(Formula):
    body: Formula


@_node
class And(Formula):
    parts: tuple

    def __post_init__(self):
        _freeze(self, "parts")


@_node
class Or(Formula):
    parts: tuple

    def __post_init__(self):
        _freeze(self, "parts")


@_node
class Exists(Formula):
    var: str
    body: Formula


@_node
class Forall(Formula):
    var: str
    body: Formula


@_node
class ExistsSO(Formula):
    pv: str
    arity: int
    body: Formula


@_node
class ForallSO(Formula):
    pv: str
    arity: int
    body: Formula


@_node
class PhiSystem:
    """Simultaneous operator tuple: component j defines predvars[j] over formal_args[j]."""

    predvars: tuple
    components: tuple
    formal_args: tuple

    def __post_init__(self):
        object.__setattr__(self, "predvars", tuple((n, int(k)) for n, k in self.predvars))
        _freeze(self, "components")
        object.__setattr__(self, "formal_args", tuple(tuple(a) for a in self.formal_args))
        if not (len(self.predvars) == len(self.components) == len(self.formal_args)):
            raise ValueError("PhiSystem: predvars, components and formal_args differ in length")
        for (name, arity), params in zip(self.predvars, self.formal_args):
            if len(params) != arity:
                raise ValueError(f"PhiSystem: {name} has arity {arity} but {len(params)} formal args")
            if len(set(params)) != len(params):
                raise ValueError(f"PhiSystem: repeated formal argument for {name}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.predvars)

    def index(self, pv: str) -> int:
        return self.names.index(pv)

    def positivity_violations(self) -> list[tuple[str, str]]:
        """Pairs (component predvar, offending predvar) that occur non-positively."""
        bad = []
        for (name, _), comp in zip(self.predvars, self.components):
            for other in self.names:
                if polarity(comp, other) in (Polarity.NEGATIVE, Polarity.MIXED):
                    bad.append((name, other))
        return bad


@_node
class LfpAtom(Formula):
    target_pv: str
    system: PhiSystem
    args: tuple

    def __post_init__(self):
        _freeze(self, "args")
        if self.target_pv not in self.system.names:
            raise ValueError(f"lfp target {self.target_pv} is not a predvar of its system")


QUANTIFIERS = (Exists, Forall)
SO_QUANTIFIERS = (ExistsSO, ForallSO)


def conj(*parts: Formula) -> Formula:
    """And with empty/singleton collapse and flattening of nested Ands."""
    flat: list[Formula] = []
    for p in parts:
        if isinstance(p, And):
            flat.extend(p.parts)
        elif not isinstance(p, Verum):
            flat.append(p)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(*parts: Formula) -> Formula:
    flat: list[Formula] = []
    for p in parts:
        if isinstance(p, Or):
            flat.extend(p.parts)
        elif not isinstance(p, Falsum):
            flat.append(p)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def neg(f: Formula) -> Formula:
    """Negation with double-negation elimination."""
    if isinstance(f, Not):
        return f.body
    return Not(f)


def implies(a: Formula, b: Formula) -> Formula:
    return Or((Not(a), b))


def equations(lhs: Sequence[Term], rhs: Sequence[Term]) -> list[Formula]:
    return [Eq(a, b) for a, b in zip(lhs, rhs, strict=True)]


# ------------------------------------------------------ free variables


def free_vars(f: Formula) -> frozenset[str]:
    cached = f.__dict__.get("_fv")
    if cached is not None:
        return cached
    if isinstance(f, (Verum, Falsum)):
        out = frozenset()
    elif isinstance(f, (Atom, PredVarAtom)):
        out = frozenset().union(*(term_vars(a) for a in f.args))
    elif isinstance(f, Eq):
        out = term_vars(f.lhs) | term_vars(f.rhs)
    elif isinstance(f, Not):
        out = free_vars(f.body)
    elif isinstance(f, (And, Or)):
        out = frozenset().union(*(free_vars(p) for p in f.parts))
    elif isinstance(f, QUANTIFIERS):
        out = free_vars(f.body) - {f.var}
    elif isinstance(f, SO_QUANTIFIERS):
        out = free_vars(f.body)
    elif isinstance(f, LfpAtom):
        out = system_free_vars(f.system).union(*(term_vars(a) for a in f.args))
    else:
        raise TypeError(f"not a formula: {f!r}")
    object.__setattr__(f, "_fv", out)
    return out


def system_free_vars(phi: PhiSystem) -> frozenset[str]:
    """Free variables of the components other than their formal arguments."""
    cached = phi.__dict__.get("_fv")
    if cached is None:
        cached = frozenset().union(
            *(free_vars(c) - set(params) for c, params in zip(phi.components, phi.formal_args))
        )
        object.__setattr__(phi, "_fv", cached)
    return cached


def free_vars_ordered(f: Formula) -> list[str]:
    """Free variables in order of first occurrence (left to right)."""
    out: list[str] = []

    def walk(g: Formula, bound: frozenset[str]) -> None:
        if isinstance(g, (Atom, PredVarAtom)):
            for a in g.args:
                _collect(a, bound)
        elif isinstance(g, Eq):
            _collect(g.lhs, bound)
            _collect(g.rhs, bound)
        elif isinstance(g, Not):
            walk(g.body, bound)
        elif isinstance(g, (And, Or)):
            for p in g.parts:
                walk(p, bound)
        elif isinstance(g, QUANTIFIERS):
            walk(g.body, bound | {g.var})
        elif isinstance(g, SO_QUANTIFIERS):
            walk(g.body, bound)
        elif isinstance(g, LfpAtom):
            for comp, params in zip(g.system.components, g.system.formal_args):
                walk(comp, bound | set(params))
            for a in g.args:
                _collect(a, bound)

    def _collect(t: Term, bound: frozenset[str]) -> None:
        names: list[str] = []
        _term_vars_ordered(t, names)
        for n in names:
            if n not in bound and n not in out:
                out.append(n)

    walk(f, frozenset())
    return out


def free_predvars(f: Formula) -> frozenset[str]:
    cached = f.__dict__.get("_fpv")
    if cached is not None:
        return cached
    if isinstance(f, PredVarAtom):
        out = frozenset((f.pv,))
    elif isinstance(f, Not):
        out = free_predvars(f.body)
    elif isinstance(f, (And, Or)):
        out = frozenset().union(*(free_predvars(p) for p in f.parts))
    elif isinstance(f, QUANTIFIERS):
        out = free_predvars(f.body)
    elif isinstance(f, SO_QUANTIFIERS):
        out = free_predvars(f.body) - {f.pv}
    elif isinstance(f, LfpAtom):
        out = frozenset().union(*(free_predvars(c) for c in f.system.components)) - set(f.system.names)
    else:
        out = frozenset()
    object.__setattr__(f, "_fpv", out)
    return out


def is_quantifier_free(f: Formula) -> bool:
    if isinstance(f, (Verum, Falsum, Atom, Eq, PredVarAtom)):
        return True
    if isinstance(f, Not):
        return is_quantifier_free(f.body)
    if isinstance(f, (And, Or)):
        return all(is_quantifier_free(p) for p in f.parts)
    return False


def formula_size(f: Formula, limit: int | None = None) -> int:
    """Number of formula nodes of the tree (shared subtrees counted each time)."""
    memo: dict[int, int] = {}

    def size(g) -> int:
        key = id(g)
        if key in memo:
            return memo[key]
        if isinstance(g, Not):
            n = 1 + size(g.body)
        elif isinstance(g, (And, Or)):
            n = 1 + sum(size(p) for p in g.parts)
        elif isinstance(g, (*QUANTIFIERS, *SO_QUANTIFIERS)):
            n = 1 + size(g.body)
        elif isinstance(g, LfpAtom):
            n = 1 + sum(size(c) for c in g.system.components)
        else:
            n = 1
        memo[key] = n
        return n

    return size(f)


# -------------------------------------------------------- substitution


def _fresh(base: str, avoid: Iterable[str]) -> str:
    avoid = set(avoid)
    name = base + "'"
    while name in avoid:
        name += "'"
    return name


def substitute_terms(f: Formula, subst: Mapping[str, Term]) -> Formula:
    """Simultaneous capture-avoiding substitution of terms for free variables."""
    subst = {v: t for v, t in subst.items() if not (isinstance(t, Var) and t.name == v)}
    if not subst:
        return f
    return _subst(f, subst)


def _subst(f: Formula, s: Mapping[str, Term]) -> Formula:
    fv = free_vars(f)
    if not (fv & s.keys()):
        return f
    s = {v: t for v, t in s.items() if v in fv}
    if isinstance(f, Atom):
        return Atom(f.pred, tuple(substitute_in_term(a, s) for a in f.args))
    if isinstance(f, PredVarAtom):
        return PredVarAtom(f.pv, tuple(substitute_in_term(a, s) for a in f.args))
    if isinstance(f, Eq):
        return Eq(substitute_in_term(f.lhs, s), substitute_in_term(f.rhs, s))
    if isinstance(f, Not):
        return Not(_subst(f.body, s))
    if isinstance(f, And):
        return And(tuple(_subst(p, s) for p in f.parts))
    if isinstance(f, Or):
        return Or(tuple(_subst(p, s) for p in f.parts))
    if isinstance(f, QUANTIFIERS):
        var, body = _rename_binder(f.var, f.body, s)
        return type(f)(var, _subst(body, s))
    if isinstance(f, SO_QUANTIFIERS):
        return type(f)(f.pv, f.arity, _subst(f.body, s))
    if isinstance(f, LfpAtom):
        return LfpAtom(
            f.target_pv,
            _subst_system(f.system, s),
            tuple(substitute_in_term(a, s) for a in f.args),
        )
    raise TypeError(f"not a formula: {f!r}")


def _range_vars(s: Mapping[str, Term]) -> set[str]:
    out: set[str] = set()
    for t in s.values():
        out |= term_vars(t)
    return out


def _rename_binder(var: str, body: Formula, s: Mapping[str, Term]) -> tuple[str, Formula]:
    # rename only when the binder would capture a variable of the substituted terms
    clash = _range_vars(s)
    if var not in clash:
        return var, body
    new = _fresh(var, clash | free_vars(body) | set(s))
    return new, substitute_terms(body, {var: Var(new)})


def _subst_system(phi: PhiSystem, s: Mapping[str, Term]) -> PhiSystem:
    if not (system_free_vars(phi) & s.keys()):
        return phi
    clash = _range_vars(s)
    comps, params_out = [], []
    for comp, params in zip(phi.components, phi.formal_args):
        inner = {v: t for v, t in s.items() if v not in params}
        renaming = {}
        new_params = []
        for p in params:
            if p in clash:
                new = _fresh(p, clash | free_vars(comp) | set(s) | set(params) | set(new_params))
                renaming[p] = Var(new)
                new_params.append(new)
            else:
                new_params.append(p)
        body = substitute_terms(comp, renaming) if renaming else comp
        comps.append(_subst(body, inner) if inner else body)
        params_out.append(tuple(new_params))
    return PhiSystem(phi.predvars, tuple(comps), tuple(params_out))


def substitute_predicates(
    f: Formula, subst: Mapping[str, tuple[Sequence[str], Formula]]
) -> Formula:
    """Replace every X(t̄) by body[params\\t̄] for X in subst.

    Individual binders of f that would capture a free variable of a
    replacement body are renamed first.
    """
    if not subst:
        return f
    norm = {pv: (tuple(params), body) for pv, (params, body) in subst.items()}
    return _psubst(f, norm)


def _replacement_vars(s) -> set[str]:
    out: set[str] = set()
    for params, body in s.values():
        out |= free_vars(body) - set(params)
    return out


def _psubst(f: Formula, s) -> Formula:
    if not (free_predvars(f) & s.keys()):
        return f
    if isinstance(f, PredVarAtom):
        params, body = s[f.pv]
        if len(params) != len(f.args):
            raise ValueError(
                f"arity mismatch substituting {f.pv}: {len(params)} params, {len(f.args)} args"
            )
        return substitute_terms(body, dict(zip(params, f.args)))
    if isinstance(f, Not):
        return Not(_psubst(f.body, s))
    if isinstance(f, And):
        return And(tuple(_psubst(p, s) for p in f.parts))
    if isinstance(f, Or):
        return Or(tuple(_psubst(p, s) for p in f.parts))
    if isinstance(f, QUANTIFIERS):
        var, body = f.var, f.body
        clash = _replacement_vars(s)
        if var in clash:
            new = _fresh(var, clash | free_vars(body))
            var, body = new, substitute_terms(body, {f.var: Var(new)})
        return type(f)(var, _psubst(body, s))
    if isinstance(f, SO_QUANTIFIERS):
        inner = {k: v for k, v in s.items() if k != f.pv}
        return type(f)(f.pv, f.arity, _psubst(f.body, inner) if inner else f.body)
    if isinstance(f, LfpAtom):
        inner = {k: v for k, v in s.items() if k not in f.system.names}
        if not inner:
            return f
        clash = _replacement_vars(inner)
        comps, params_out = [], []
        for comp, params in zip(f.system.components, f.system.formal_args):
            renaming, new_params = {}, []
            for p in params:
                if p in clash:
                    new = _fresh(p, clash | free_vars(comp) | set(params) | set(new_params))
                    renaming[p] = Var(new)
                    new_params.append(new)
                else:
                    new_params.append(p)
            body = substitute_terms(comp, renaming) if renaming else comp
            comps.append(_psubst(body, inner))
            params_out.append(tuple(new_params))
        return LfpAtom(f.target_pv, PhiSystem(f.system.predvars, tuple(comps), tuple(params_out)), f.args)
    return f


# ------------------------------------------------------------- polarity


class Polarity(enum.Enum):
    ABSENT = "absent"
    POSITIVE = "positive"
    NEGATIVE = "negative"
    MIXED = "mixed"

    def flipped(self) -> "Polarity":
        if self is Polarity.POSITIVE:
            return Polarity.NEGATIVE
        if self is Polarity.NEGATIVE:
            return Polarity.POSITIVE
        return self


def polarity(f: Formula, pv: str) -> Polarity:
    signs: set[bool] = set()

    def walk(g: Formula, positive: bool) -> None:
        if len(signs) == 2:
            return
        if isinstance(g, PredVarAtom):
            if g.pv == pv:
                signs.add(positive)
        elif isinstance(g, Not):
            walk(g.body, not positive)
        elif isinstance(g, (And, Or)):
            for p in g.parts:
                walk(p, positive)
        elif isinstance(g, QUANTIFIERS):
            walk(g.body, positive)
        elif isinstance(g, SO_QUANTIFIERS):
            if g.pv != pv:
                walk(g.body, positive)
        elif isinstance(g, LfpAtom):
            # the atom is monotone in pv when pv occurs positively in its components
            if pv not in g.system.names:
                for c in g.system.components:
                    walk(c, positive)

    walk(f, True)
    if not signs:
        return Polarity.ABSENT
    if signs == {True}:
        return Polarity.POSITIVE
    if signs == {False}:
        return Polarity.NEGATIVE
    return Polarity.MIXED


def dualize(f: Formula, pvs: Iterable[str] | None = None) -> Formula:
    """Replace X(t̄) by ¬X(t̄) for the given (default: all free) predicate variables."""
    targets = frozenset(free_predvars(f) if pvs is None else pvs)
    if not targets:
        return f

    def walk(g: Formula, live: frozenset[str]) -> Formula:
        if not (free_predvars(g) & live):
            return g
        if isinstance(g, PredVarAtom):
            return Not(g)
        if isinstance(g, Not):
            if isinstance(g.body, PredVarAtom) and g.body.pv in live:
                return g.body
            return Not(walk(g.body, live))
        if isinstance(g, And):
            return And(tuple(walk(p, live) for p in g.parts))
        if isinstance(g, Or):
            return Or(tuple(walk(p, live) for p in g.parts))
        if isinstance(g, QUANTIFIERS):
            return type(g)(g.var, walk(g.body, live))
        if isinstance(g, SO_QUANTIFIERS):
            return type(g)(g.pv, g.arity, walk(g.body, live - {g.pv}))
        if isinstance(g, LfpAtom):
            inner = live - set(g.system.names)
            comps = tuple(walk(c, inner) for c in g.system.components)
            return LfpAtom(g.target_pv, PhiSystem(g.system.predvars, comps, g.system.formal_args), g.args)
        return g

    return walk(f, targets)


# ------------------------------------------------------------ signature


@dataclass(frozen=True)
class Signature:
    constants: frozenset = frozenset()
    functions: Mapping[str, int] = None  # type: ignore[assignment]
    predicates: Mapping[str, int] = None  # type: ignore[assignment]
    # affine language: rational literals are constants, plus/minus/neg/mul and (lin ...) terms
    rationals: bool = False

    def __post_init__(self):
        object.__setattr__(self, "constants", frozenset(self.constants))
        object.__setattr__(self, "functions", dict(self.functions or {}))
        object.__setattr__(self, "predicates", dict(self.predicates or {}))
        kinds = [set(self.constants), set(self.functions), set(self.predicates)]
        for i in range(3):
            for j in range(i + 1, 3):
                both = kinds[i] & kinds[j]
                if both:
                    raise ValueError(f"symbol declared with two kinds: {sorted(both)}")

    def __hash__(self):
        return hash((self.constants, tuple(sorted(self.functions.items())),
                     tuple(sorted(self.predicates.items())), self.rationals))

    def has_numerals(self) -> bool:
        return "0" in self.constants and self.functions.get("s") == 1

    def to_sexpr(self) -> str:
        if self.rationals and not (self.constants or self.predicates):
            return "(lang affine)"
        items = [f"(const {c})" for c in sorted(self.constants)]
        items += [f"(fun {n} {k})" for n, k in sorted(self.functions.items())]
        items += [f"(pred {n} {k})" for n, k in sorted(self.predicates.items())]
        return "(lang" + "".join(" " + i for i in items) + ")"


AFFINE_SIGNATURE = Signature(functions={"plus": 2, "minus": 2, "neg": 1, "mul": 2}, rationals=True)


def merge_signatures(a: Signature, b: Signature) -> Signature:
    return Signature(
        a.constants | b.constants,
        {**a.functions, **b.functions},
        {**a.predicates, **b.predicates},
        a.rationals or b.rationals,
    )


# ------------------------------------------------------- s-expressions

_TOKEN = re.compile(r"\s+|#[^\n]*|:=|[(),;{}]|[^\s(),;{}#:]+|:")
_RATIONAL = re.compile(r"^-?\d+(/\d+)?$")
_NATURAL = re.compile(r"^\d+$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_'.\-]*$")


@dataclass
class Token:
    text: str
    pos: int
    attached: bool  # no whitespace before this token


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    attached = False
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the pattern matches any character
            raise ParseError("unexpected character", text, pos)
        s = m.group(0)
        if s[0].isspace() or s[0] == "#":
            attached = False
        else:
            tokens.append(Token(s, pos, attached))
            attached = True
        pos = m.end()
    return tokens


@dataclass
class SAtom:
    text: str
    pos: int


@dataclass
class SList:
    items: list
    pos: int


class Reader:
    """Token stream reader for s-expressions with call-style applications."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    def error(self, message: str, pos: int | None = None) -> ParseError:
        if pos is None:
            pos = self.tokens[self.i].pos if self.i < len(self.tokens) else len(self.text)
        return ParseError(message, self.text, pos)

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise self.error("unexpected end of input")
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.next()
        if tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text!r}", tok.pos)
        return tok

    def at_end(self) -> bool:
        return self.i >= len(self.tokens)

    def read(self):
        tok = self.next()
        if tok.text == "(":
            items = []
            while True:
                nxt = self.peek()
                if nxt is None:
                    raise self.error("unclosed parenthesis", tok.pos)
                if nxt.text == ")":
                    self.i += 1
                    return SList(items, tok.pos)
                if nxt.text in (",", ";", ":=", "{", "}"):
                    raise self.error(f"unexpected {nxt.text!r}", nxt.pos)
                items.append(self.read())
        if tok.text in (")", ",", ";", ":=", "{", "}", ":"):
            raise self.error(f"unexpected {tok.text!r}", tok.pos)
        atom = SAtom(tok.text, tok.pos)
        nxt = self.peek()
        if nxt is not None and nxt.text == "(" and nxt.attached:
            self.i += 1
            args = []
            if self.peek() is not None and self.peek().text == ")":
                self.i += 1
                return SList([atom], tok.pos)
            while True:
                args.append(self.read())
                sep = self.next()
                if sep.text == ")":
                    break
                if sep.text != ",":
                    raise self.error(f"expected ',' or ')', found {sep.text!r}", sep.pos)
            return SList([atom, *args], tok.pos)
        return atom


def read_sexpr(text: str):
    r = Reader(text)
    node = r.read()
    if not r.at_end():
        raise r.error("trailing input")
    return node


def read_all(text: str) -> list:
    r = Reader(text)
    out = []
    while not r.at_end():
        out.append(r.read())
    return out


# --------------------------------------------------------------- parser

_KEYWORDS = {
    "and", "or", "not", "implies", "iff", "eq", "exists", "forall",
    "so-exists", "so-forall", "pv", "lfp", "true", "false", "lin",
}


class FormulaParser:
    def __init__(self, sig: Signature, text: str = "", predvars: Mapping[str, int] | None = None):
        self.sig = sig
        self.text = text
        self.predvars = dict(predvars or {})

    def error(self, message: str, node) -> ParseError:
        return ParseError(message, self.text or None, node.pos if self.text else None)

    # terms

    def term(self, node) -> Term:
        if isinstance(node, SAtom):
            return self.atom_term(node)
        if not node.items:
            raise self.error("empty term", node)
        head = node.items[0]
        if not isinstance(head, SAtom):
            raise self.error("term application needs a function symbol", node)
        name = head.text
        args = node.items[1:]
        if name == "lin" and self.sig.rationals:
            return self.lin_term(node)
        if name not in self.sig.functions:
            if name in self.sig.predicates:
                raise self.error(f"predicate {name} used as a function", head)
            raise self.error(f"undeclared function symbol {name}", head)
        arity = self.sig.functions[name]
        if len(args) != arity:
            raise self.error(f"arity mismatch: {name} expects {arity} arguments, got {len(args)}", node)
        return App(name, tuple(self.term(a) for a in args))

    def atom_term(self, node: SAtom) -> Term:
        name = node.text
        if name in self.sig.constants:
            return Const(name)
        if self.sig.rationals and _RATIONAL.match(name):
            return Const(str(Fraction(name)))
        if _NATURAL.match(name):
            if self.sig.has_numerals():
                return numeral(int(name))
            raise self.error(f"undeclared constant {name}", node)
        if name in self.sig.functions:
            if self.sig.functions[name] == 0:
                return App(name, ())
            raise self.error(f"function {name} used without arguments", node)
        if name in self.sig.predicates or name in _KEYWORDS:
            raise self.error(f"{name} is not a term", node)
        if not _IDENT.match(name):
            raise self.error(f"invalid identifier {name!r}", node)
        return Var(name)

    def lin_term(self, node: SList) -> Term:
        # (lin (c v) ... [const]) is sugar for a sum of scaled variables
        parts: list[Term] = []
        for item in node.items[1:]:
            if isinstance(item, SAtom):
                parts.append(self.atom_term(item))
                continue
            if len(item.items) != 2 or not all(isinstance(x, SAtom) for x in item.items):
                raise self.error("lin expects (coefficient variable) pairs", item)
            coeff = item.items[0].text
            if not _RATIONAL.match(coeff):
                raise self.error(f"coefficient {coeff!r} is not a rational literal", item)
            parts.append(App("mul", (Const(str(Fraction(coeff))), self.atom_term(item.items[1]))))
        if not parts:
            return Const("0")
        out = parts[0]
        for p in parts[1:]:
            out = App("plus", (out, p))
        return out

    # formulas

    def formula(self, node, pvs: Mapping[str, int] | None = None) -> Formula:
        pvs = self.predvars if pvs is None else pvs
        if isinstance(node, SAtom):
            name = node.text
            if name == "true":
                return TRUE
            if name == "false":
                return FALSE
            if self.sig.predicates.get(name) == 0:
                return Atom(name, ())
            if pvs.get(name) == 0:
                return PredVarAtom(name, ())
            raise self.error(f"expected a formula, found {name!r}", node)
        if not node.items:
            raise self.error("empty formula", node)
        head = node.items[0]
        if not isinstance(head, SAtom):
            raise self.error("formula must start with an operator or predicate", node)
        op = head.text
        args = node.items[1:]

        if op == "true" and not args:
            return TRUE
        if op == "false" and not args:
            return FALSE
        if op == "not":
            self._count(node, args, 1)
            return Not(self.formula(args[0], pvs))
        if op == "and":
            return And(tuple(self.formula(a, pvs) for a in args))
        if op == "or":
            return Or(tuple(self.formula(a, pvs) for a in args))
        if op == "implies":
            self._count(node, args, 2)
            return Or((Not(self.formula(args[0], pvs)), self.formula(args[1], pvs)))
        if op == "iff":
            self._count(node, args, 2)
            a, b = self.formula(args[0], pvs), self.formula(args[1], pvs)
            return And((Or((Not(a), b)), Or((Not(b), a))))
        if op == "eq":
            self._count(node, args, 2)
            return Eq(self.term(args[0]), self.term(args[1]))
        if op in ("exists", "forall"):
            self._count(node, args, 2)
            names = self._var_list(args[0])
            body = self.formula(args[1], pvs)
            cls = Exists if op == "exists" else Forall
            for v in reversed(names):
                body = cls(v, body)
            return body
        if op in ("so-exists", "so-forall"):
            self._count(node, args, 2)
            name, arity = self._pv_decl(args[0])
            body = self.formula(args[1], {**pvs, name: arity})
            return (ExistsSO if op == "so-exists" else ForallSO)(name, arity, body)
        if op == "pv":
            if len(args) != 2 or not isinstance(args[0], SAtom) or not isinstance(args[1], SList):
                raise self.error("expected (pv NAME (args...))", node)
            name = args[0].text
            terms = tuple(self.term(a) for a in args[1].items)
            self._check_pv(name, len(terms), pvs, node)
            return PredVarAtom(name, terms)
        if op == "lfp":
            return self.lfp(node, args, pvs)
        if op in self.sig.predicates:
            arity = self.sig.predicates[op]
            if len(args) != arity:
                raise self.error(f"arity mismatch: {op} expects {arity} arguments, got {len(args)}", node)
            return Atom(op, tuple(self.term(a) for a in args))
        if op in pvs:
            self._check_pv(op, len(args), pvs, node)
            return PredVarAtom(op, tuple(self.term(a) for a in args))
        if op in self.sig.functions:
            raise self.error(f"function {op} used as a formula", head)
        raise self.error(f"undeclared predicate symbol {op}", head)

    def lfp(self, node, args, pvs) -> Formula:
        if len(args) != 3 or not isinstance(args[0], SAtom) or not isinstance(args[1], SList) \
                or not isinstance(args[2], SList):
            raise self.error("expected (lfp TARGET ((PV (params) body)...) (args...))", node)
        decls = []
        for comp in args[1].items:
            if not isinstance(comp, SList) or len(comp.items) != 3 or not isinstance(comp.items[0], SAtom):
                raise self.error("lfp component must be (PV (params) body)", comp)
            decls.append((comp.items[0].text, self._var_list(comp.items[1]), comp.items[2]))
        inner = {**pvs, **{name: len(params) for name, params, _ in decls}}
        system = PhiSystem(
            tuple((name, len(params)) for name, params, _ in decls),
            tuple(self.formula(body, inner) for _, _, body in decls),
            tuple(tuple(params) for _, params, _ in decls),
        )
        target = args[0].text
        if target not in system.names:
            raise self.error(f"lfp target {target} is not defined by the system", args[0])
        bad = system.positivity_violations()
        if bad:
            raise self.error(f"predicate variable {bad[0][1]} occurs non-positively in lfp component", node)
        terms = tuple(self.term(a) for a in args[2].items)
        if len(terms) != system.predvars[system.index(target)][1]:
            raise self.error(f"arity mismatch in lfp atom for {target}", node)
        return LfpAtom(target, system, terms)

    def _count(self, node, args, n):
        if len(args) != n:
            raise self.error(f"{node.items[0].text} expects {n} arguments, got {len(args)}", node)

    def _var_list(self, node) -> list[str]:
        items = [node] if isinstance(node, SAtom) else node.items
        names = []
        for it in items:
            if not isinstance(it, SAtom) or not _IDENT.match(it.text) or it.text in _KEYWORDS:
                raise self.error("expected a variable name", it)
            if it.text in self.sig.constants or it.text in self.sig.functions:
                raise self.error(f"{it.text} is not a variable", it)
            names.append(it.text)
        return names

    def _pv_decl(self, node) -> tuple[str, int]:
        if isinstance(node, SList) and len(node.items) == 2 and all(isinstance(x, SAtom) for x in node.items) \
                and _NATURAL.match(node.items[1].text):
            return node.items[0].text, int(node.items[1].text)
        raise self.error("expected (NAME arity)", node)

    def _check_pv(self, name, n, pvs, node):
        if name in pvs and pvs[name] != n:
            raise self.error(f"arity mismatch: predicate variable {name} has arity {pvs[name]}", node)
        if name not in pvs:
            raise self.error(f"undeclared predicate variable {name}", node)


def parse_formula(text: str, sig: Signature, predvars: Mapping[str, int] | None = None) -> Formula:
    return FormulaParser(sig, text, predvars).formula(read_sexpr(text))


def parse_term(text: str, sig: Signature) -> Term:
    return FormulaParser(sig, text).term(read_sexpr(text))


# ------------------------------------------------------------- printing


def normalize_bound(f: Formula) -> Formula:
    """Rename individual binders to _1, _2, ... by nesting depth."""
    avoid = free_vars(f)

    def name_at(depth: int, taken: set[str]) -> str:
        n = depth + 1
        while f"_{n}" in avoid or f"_{n}" in taken:
            n += 1
        return f"_{n}"

    def walk(g: Formula, ren: dict[str, Term], depth: int, used: frozenset[str]) -> Formula:
        if isinstance(g, (Verum, Falsum)):
            return g
        if isinstance(g, Atom):
            return Atom(g.pred, tuple(substitute_in_term(a, ren) for a in g.args))
        if isinstance(g, PredVarAtom):
            return PredVarAtom(g.pv, tuple(substitute_in_term(a, ren) for a in g.args))
        if isinstance(g, Eq):
            return Eq(substitute_in_term(g.lhs, ren), substitute_in_term(g.rhs, ren))
        if isinstance(g, Not):
            return Not(walk(g.body, ren, depth, used))
        if isinstance(g, (And, Or)):
            return type(g)(tuple(walk(p, ren, depth, used) for p in g.parts))
        if isinstance(g, QUANTIFIERS):
            new = name_at(depth, set(used))
            return type(g)(new, walk(g.body, {**ren, g.var: Var(new)}, depth + 1, used | {new}))
        if isinstance(g, SO_QUANTIFIERS):
            return type(g)(g.pv, g.arity, walk(g.body, ren, depth, used))
        if isinstance(g, LfpAtom):
            comps, params_out = [], []
            for comp, params in zip(g.system.components, g.system.formal_args):
                inner = dict(ren)
                d, u = depth, set(used)
                names = []
                for p in params:
                    new = name_at(d, u)
                    u.add(new)
                    names.append(new)
                    inner[p] = Var(new)
                    d += 1
                comps.append(walk(comp, inner, d, frozenset(u)))
                params_out.append(tuple(names))
            system = PhiSystem(g.system.predvars, tuple(comps), tuple(params_out))
            return LfpAtom(g.target_pv, system, tuple(substitute_in_term(a, ren) for a in g.args))
        raise TypeError(f"not a formula: {g!r}")

    return walk(f, {}, 0, frozenset())


def print_term(t: Term) -> str:
    if isinstance(t, (Var, Const)):
        return t.name
    if not t.args:
        return f"({t.fun})"
    return "(" + t.fun + " " + " ".join(print_term(a) for a in t.args) + ")"


def _render(f: Formula) -> str:
    if isinstance(f, Verum):
        return "true"
    if isinstance(f, Falsum):
        return "false"
    if isinstance(f, Atom):
        return "(" + " ".join([f.pred, *map(print_term, f.args)]) + ")"
    if isinstance(f, Eq):
        return f"(eq {print_term(f.lhs)} {print_term(f.rhs)})"
    if isinstance(f, PredVarAtom):
        return f"(pv {f.pv} (" + " ".join(map(print_term, f.args)) + "))"
    if isinstance(f, Not):
        return f"(not {_render(f.body)})"
    if isinstance(f, (And, Or)):
        op = "and" if isinstance(f, And) else "or"
        return "(" + " ".join([op, *map(_render, f.parts)]) + ")"
    if isinstance(f, QUANTIFIERS):
        op = "exists" if isinstance(f, Exists) else "forall"
        return f"({op} ({f.var}) {_render(f.body)})"
    if isinstance(f, SO_QUANTIFIERS):
        op = "so-exists" if isinstance(f, ExistsSO) else "so-forall"
        return f"({op} ({f.pv} {f.arity}) {_render(f.body)})"
    if isinstance(f, LfpAtom):
        comps = " ".join(
            f"({name} (" + " ".join(params) + f") {_render(c)})"
            for (name, _), params, c in zip(f.system.predvars, f.system.formal_args, f.system.components)
        )
        return f"(lfp {f.target_pv} ({comps}) (" + " ".join(map(print_term, f.args)) + "))"
    raise TypeError(f"not a formula: {f!r}")


def print_canonical(f: Formula) -> str:
    return _render(normalize_bound(f))


def print_raw(f: Formula) -> str:
    """Printing without bound-variable renaming."""
    return _render(f)

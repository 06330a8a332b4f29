"""Finite-structure semantics: the brute-force oracle.

Formulas are compiled to closures over a mutable variable frame that is
restored on exit from every binder, so callers observe persistent
environments.  The compiler applies truth-preserving evaluation shortcuts
(negation normal form, pushing ∃ through ∨, independent conjuncts hoisted
out of quantifiers, and the one-point rule ∃v(v = t ∧ A) ≡ A[v\\t]).
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .clauses import FormulaEquation
from .formula import (
    FALSE,
    TRUE,
    And,
    Atom,
    Const,
    Eq,
    Exists,
    ExistsSO,
    Falsum,
    Forall,
    ForallSO,
    Formula,
    LfpAtom,
    Not,
    Or,
    PhiSystem,
    PredVarAtom,
    Signature,
    Term,
    Var,
    Verum,
    formula_size,
    free_predvars,
    free_vars,
    substitute_predicates,
    system_free_vars,
    term_vars,
)

DEFAULT_BUDGET = 16  # positions size^arity per second-order quantified predicate variable
DEFAULT_TOTAL_POSITIONS = 24  # joint positions for exhaustive relation-tuple search
SEARCH_POSITIONS = 1 << 14  # joint positions for the propositional search fallback of eval_so
CHUNK = 1 << 18


class BudgetExceeded(RuntimeError):
    pass


class MissingInterpretation(KeyError):
    def __str__(self):
        return f"missing interpretation: {self.args[0]}"


class PositivityError(ValueError):
    pass


class FormulaSizeError(RuntimeError):
    pass


class NoLeastSolution(ValueError):
    pass


def enumeration_budget() -> int:
    raw = os.environ.get("HORNFIX_BUDGET")
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"HORNFIX_BUDGET must be an integer, got {raw!r}") from None
    return DEFAULT_BUDGET


# ----------------------------------------------------------- structures


@dataclass
class FiniteStructure:
    size: int
    consts: dict = field(default_factory=dict)
    funs: dict = field(default_factory=dict)  # name -> (arity, nested list table)
    preds: dict = field(default_factory=dict)  # name -> frozenset of tuples

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("structure domain must be nonempty")
        for name, v in self.consts.items():
            if not 0 <= v < self.size:
                raise ValueError(f"constant {name} = {v} outside the domain")
        for name, (k, table) in self.funs.items():
            for args in itertools.product(range(self.size), repeat=k):
                v = _lookup(table, args)
                if not (isinstance(v, int) and 0 <= v < self.size):
                    raise ValueError(f"function {name}{args} = {v!r} is not a domain element")
        self.preds = {n: frozenset(tuple(t) for t in rel) for n, rel in self.preds.items()}
        for name, rel in self.preds.items():
            for t in rel:
                if not all(0 <= x < self.size for x in t):
                    raise ValueError(f"predicate {name} tuple {t} outside the domain")
        self._tuples: dict[int, list[tuple]] = {}

    @property
    def domain(self) -> range:
        return range(self.size)

    def tuples(self, k: int) -> list[tuple]:
        out = self._tuples.get(k)
        if out is None:
            out = list(itertools.product(range(self.size), repeat=k))
            self._tuples[k] = out
        return out

    def apply(self, fun: str, args: Sequence[int]) -> int:
        return _lookup(self.funs[fun][1], args)

    @classmethod
    def build(cls, size: int, consts=None, funs=None, preds=None) -> "FiniteStructure":
        """Tables from Python callables: funs = {name: (arity, fn)}, preds = {name: (arity, fn)}."""
        tables = {}
        for name, (k, fn) in (funs or {}).items():
            tables[name] = (k, _tabulate(size, k, fn))
        rels = {}
        for name, (k, fn) in (preds or {}).items():
            rels[name] = frozenset(t for t in itertools.product(range(size), repeat=k) if fn(*t))
        return cls(size, dict(consts or {}), tables, rels)

    @classmethod
    def from_json(cls, obj: Mapping) -> "FiniteStructure":
        size = int(obj["size"])
        funs = {}
        for name, table in obj.get("funs", {}).items():
            funs[name] = (_depth(table), table)
        preds = {name: frozenset(tuple(t) for t in rel) for name, rel in obj.get("preds", {}).items()}
        return cls(size, dict(obj.get("consts", {})), funs, preds)

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "consts": dict(sorted(self.consts.items())),
            "funs": {n: t for n, (_, t) in sorted(self.funs.items())},
            "preds": {n: sorted(list(t) for t in rel) for n, rel in sorted(self.preds.items())},
        }

    def signature(self) -> Signature:
        arities = {}
        for name, rel in self.preds.items():
            arities[name] = len(next(iter(rel))) if rel else 0
        return Signature(frozenset(self.consts), {n: k for n, (k, _) in self.funs.items()}, arities)


def _lookup(table, args):
    for a in args:
        table = table[a]
    return table


def _tabulate(size: int, k: int, fn, prefix=()):
    if k == 0:
        return fn(*prefix)
    return [_tabulate(size, k - 1, fn, prefix + (a,)) for a in range(size)]


def _depth(table) -> int:
    d = 0
    while isinstance(table, list):
        d += 1
        table = table[0] if table else None
    return d


def all_structures(sig: Signature, size: int):
    """Every sig-structure with domain {0..size-1}, in a fixed order."""
    consts = sorted(sig.constants)
    funs = sorted(sig.functions.items())
    preds = sorted(sig.predicates.items())
    const_choices = itertools.product(range(size), repeat=len(consts))
    fun_choices = [list(itertools.product(range(size), repeat=size ** k)) for _, k in funs]
    pred_choices = [range(1 << (size ** k)) for _, k in preds]
    for cvals in const_choices:
        for fvals in itertools.product(*fun_choices):
            for pmasks in itertools.product(*pred_choices):
                tables = {}
                for (name, k), flat in zip(funs, fvals):
                    tables[name] = (k, _unflatten(list(flat), size, k))
                rels = {}
                for (name, k), mask in zip(preds, pmasks):
                    positions = list(itertools.product(range(size), repeat=k))
                    rels[name] = frozenset(p for i, p in enumerate(positions) if mask >> i & 1)
                yield FiniteStructure(size, dict(zip(consts, cvals)), tables, rels)


def _unflatten(flat: list, size: int, k: int):
    if k == 0:
        return flat[0]
    step = size ** (k - 1)
    return [_unflatten(flat[i * step:(i + 1) * step], size, k - 1) for i in range(size)]


# --------------------------------------------------------- environments


@dataclass(frozen=True)
class Environment:
    var_assign: Mapping = field(default_factory=dict)
    pv_assign: Mapping = field(default_factory=dict)

    def bind(self, var: str, value: int) -> "Environment":
        return Environment({**self.var_assign, var: value}, self.pv_assign)

    def bind_pv(self, pv: str, rel: Iterable[tuple]) -> "Environment":
        return Environment(self.var_assign, {**self.pv_assign, pv: frozenset(rel)})


EMPTY_ENV = Environment()


@dataclass(frozen=True)
class RelationTuple:
    names: tuple
    rels: tuple

    def __getitem__(self, key):
        if isinstance(key, int):
            return self.rels[key]
        return self.rels[self.names.index(key)]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.rels))

    def leq(self, other: "RelationTuple") -> bool:
        return all(a <= b for a, b in zip(self.rels, other.rels))

    def to_json(self) -> dict:
        return {n: sorted(list(t) for t in r) for n, r in zip(self.names, self.rels)}


def complement(M: FiniteStructure, rel: frozenset, arity: int) -> frozenset:
    return frozenset(t for t in M.tuples(arity) if t not in rel)


# ------------------------------------------------------------ compiler

_MISSING = object()


def _nnf(f: Formula, positive: bool, memo: dict) -> Formula:
    key = (id(f), positive)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    if isinstance(f, Verum):
        out = TRUE if positive else FALSE
    elif isinstance(f, Falsum):
        out = FALSE if positive else TRUE
    elif isinstance(f, (Atom, Eq, PredVarAtom, LfpAtom)):
        out = f if positive else Not(f)
    elif isinstance(f, Not):
        out = _nnf(f.body, not positive, memo)
    elif isinstance(f, (And, Or)):
        conjunctive = isinstance(f, And) == positive
        cls = And if conjunctive else Or
        parts: list[Formula] = []
        for p in f.parts:
            q = _nnf(p, positive, memo)
            if isinstance(q, cls):
                parts.extend(q.parts)
            else:
                parts.append(q)
        out = cls(tuple(parts))
    elif isinstance(f, (Exists, Forall)):
        cls = Exists if isinstance(f, Exists) == positive else Forall
        out = cls(f.var, _nnf(f.body, positive, memo))
    elif isinstance(f, (ExistsSO, ForallSO)):
        cls = ExistsSO if isinstance(f, ExistsSO) == positive else ForallSO
        out = cls(f.pv, f.arity, _nnf(f.body, positive, memo))
    else:
        raise TypeError(f"not a formula: {f!r}")
    memo[key] = (f, out)
    return out


def _cost(f: Formula, memo: dict) -> int:
    key = id(f)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    if isinstance(f, (Verum, Falsum, Eq, Atom, PredVarAtom)):
        c = 1
    elif isinstance(f, Not):
        c = _cost(f.body, memo)
    elif isinstance(f, (And, Or)):
        c = 1 + sum(_cost(p, memo) for p in f.parts)
    elif isinstance(f, (Exists, Forall)):
        c = 8 * _cost(f.body, memo)
    elif isinstance(f, LfpAtom):
        c = 10_000
    else:
        c = 1_000_000
    memo[key] = (f, c)
    return c


class Evaluator:
    """Compiles formulas against one structure.  Not shared across threads."""

    def __init__(self, M: FiniteStructure, budget: int | None = None):
        self.M = M
        self.budget = enumeration_budget() if budget is None else budget
        self._nnf_memo: dict = {}
        self._cost_memo: dict = {}
        self._compiled: dict = {}
        self._lfp_cache: dict = {}

    # terms

    def term(self, t: Term) -> Callable[[dict], int]:
        M = self.M
        if isinstance(t, Var):
            name = t.name
            return lambda e: e[name]
        if isinstance(t, Const):
            if t.name not in M.consts:
                raise MissingInterpretation(f"constant {t.name}")
            value = M.consts[t.name]
            return lambda e: value
        if t.fun not in M.funs:
            raise MissingInterpretation(f"function {t.fun}")
        k, table = M.funs[t.fun]
        if k != len(t.args):
            raise ValueError(f"function {t.fun} has arity {k} in the structure")
        args = [self.term(a) for a in t.args]
        if k == 0:
            return lambda e: table
        if k == 1:
            (a,) = args
            return lambda e: table[a(e)]
        if k == 2:
            a, b = args
            return lambda e: table[a(e)][b(e)]

        def app(e):
            v = table
            for a in args:
                v = v[a(e)]
            return v
        return app

    # formulas

    def compile(self, f: Formula) -> Callable[[dict, dict], bool]:
        return self._compile(_nnf(f, True, self._nnf_memo))

    def _compile(self, f: Formula):
        key = id(f)
        hit = self._compiled.get(key)
        if hit is not None:
            return hit[1]
        fn = self._build(f)
        self._compiled[key] = (f, fn)
        return fn

    def _build(self, f: Formula):
        M = self.M
        if isinstance(f, Verum):
            return lambda e, p: True
        if isinstance(f, Falsum):
            return lambda e, p: False
        if isinstance(f, Not):
            inner = self._compile(f.body)
            return lambda e, p: not inner(e, p)
        if isinstance(f, Eq):
            a, b = self.term(f.lhs), self.term(f.rhs)
            return lambda e, p: a(e) == b(e)
        if isinstance(f, Atom):
            if f.pred not in M.preds:
                raise MissingInterpretation(f"predicate {f.pred}")
            return self._membership(f.args, lambda p, rel=M.preds[f.pred]: rel)
        if isinstance(f, PredVarAtom):
            name = f.pv

            def rel_of(p):
                try:
                    return p[name]
                except KeyError:
                    raise MissingInterpretation(f"predicate variable {name}") from None
            return self._membership(f.args, rel_of)
        if isinstance(f, And):
            parts = sorted(f.parts, key=lambda g: _cost(g, self._cost_memo))
            return _all([self._compile(g) for g in parts])
        if isinstance(f, Or):
            parts = sorted(f.parts, key=lambda g: _cost(g, self._cost_memo))
            return _any([self._compile(g) for g in parts])
        if isinstance(f, (Exists, Forall)):
            cls = type(f)
            vs = []
            g = f
            while isinstance(g, cls):
                vs.append(g.var)
                g = g.body
            if cls is Exists:
                return self._exists(tuple(vs), g)
            inner = self._exists(tuple(vs), _nnf(g, False, self._nnf_memo))
            return lambda e, p: not inner(e, p)
        if isinstance(f, (ExistsSO, ForallSO)):
            return self._second_order(f)
        if isinstance(f, LfpAtom):
            return self._lfp_atom(f)
        raise TypeError(f"not a formula: {f!r}")

    def _membership(self, args, rel_of):
        ts = [self.term(a) for a in args]
        if not ts:
            return lambda e, p: () in rel_of(p)
        if len(ts) == 1:
            (a,) = ts
            return lambda e, p: (a(e),) in rel_of(p)
        if len(ts) == 2:
            a, b = ts
            return lambda e, p: (a(e), b(e)) in rel_of(p)
        return lambda e, p: tuple(t(e) for t in ts) in rel_of(p)

    def _exists(self, vs: tuple, body: Formula):
        key = ("exists", vs, id(body))
        hit = self._compiled.get(key)
        if hit is not None:
            return hit[1]
        fn = self._build_exists(vs, body)
        self._compiled[key] = (body, fn)
        return fn

    def _build_exists(self, vs: tuple, body: Formula):
        fv = free_vars(body)
        vs = tuple(v for v in dict.fromkeys(vs) if v in fv)
        if not vs:
            return self._compile(body)
        if isinstance(body, Or):
            return _any([self._exists(vs, d) for d in body.parts])
        if isinstance(body, And):
            qs = set(vs)
            indep = [g for g in body.parts if not (free_vars(g) & qs)]
            dep = [g for g in body.parts if free_vars(g) & qs]
            if indep:
                rest = self._exists(vs, dep[0] if len(dep) == 1 else And(tuple(dep)))
                return _all([self._compile(g) for g in indep] + [rest])
            groups = _components(dep, qs)
            if len(groups) > 1:
                return _all([
                    self._exists(tuple(v for v in vs if v in gvars), g[0] if len(g) == 1 else And(tuple(g)))
                    for g, gvars in groups
                ])
            for i, g in enumerate(dep):
                bound = _one_point(g, qs)
                if bound is None:
                    continue
                v, t = bound
                rest_parts = dep[:i] + dep[i + 1:]
                rest_vs = tuple(x for x in vs if x != v)
                if not rest_parts:
                    return lambda e, p: True
                rest = self._exists(rest_vs, rest_parts[0] if len(rest_parts) == 1 else And(tuple(rest_parts)))
                value = self.term(t)
                return _bind_one(v, value, rest)
        v = vs[0]
        inner = self._exists(vs[1:], body) if len(vs) > 1 else self._compile(body)
        dom = range(self.M.size)

        def ex(e, p):
            old = e.get(v, _MISSING)
            try:
                for m in dom:
                    e[v] = m
                    if inner(e, p):
                        return True
                return False
            finally:
                if old is _MISSING:
                    del e[v]
                else:
                    e[v] = old
        return ex

    def _second_order(self, f):
        positions = self.M.tuples(f.arity)
        if len(positions) > self.budget:
            raise BudgetExceeded(
                f"second-order quantifier over {f.pv}/{f.arity}: {len(positions)} positions > budget {self.budget}"
            )
        inner = self._compile(f.body)
        name = f.pv
        existential = isinstance(f, ExistsSO)

        def so(e, p):
            old = p.get(name, _MISSING)
            try:
                for rel in _relations(positions):
                    p[name] = rel
                    if inner(e, p) == existential:
                        return existential
                return not existential
            finally:
                if old is _MISSING:
                    del p[name]
                else:
                    p[name] = old
        return so

    def _lfp_atom(self, f: LfpAtom):
        system = f.system
        j = system.index(f.target_pv)
        args = [self.term(a) for a in f.args]
        fvs = sorted(system_free_vars(system))
        fpvs = sorted(free_predvars(f))

        def atom(e, p):
            key = (system, tuple(e.get(v, _MISSING) for v in fvs), tuple(p.get(x) for x in fpvs))
            stages = self._lfp_cache.get(key)
            if stages is None:
                var_assign = {v: e[v] for v in fvs if v in e}
                pv_assign = {x: p[x] for x in fpvs if x in p}
                stages = self.stages(system, var_assign, pv_assign)
                self._lfp_cache[key] = stages
            return tuple(a(e) for a in args) in stages[-1][j]
        return atom

    def stages(self, system: PhiSystem, var_assign: Mapping, pv_assign: Mapping) -> list[tuple]:
        """Kleene chain S⁰ = ∅̄, S^{m+1} = F_Φ(S^m) up to its first repetition."""
        bad = system.positivity_violations()
        if bad:
            raise PositivityError(f"{bad[0][1]} occurs non-positively in the component for {bad[0][0]}")
        names = system.names
        comps = [self.compile(c) for c in system.components]
        open_vars = sorted(system_free_vars(system) - set(var_assign))
        current = tuple(frozenset() for _ in names)
        chain = [current]
        while True:
            pvs = dict(pv_assign)
            pvs.update(zip(names, current))
            nxt = []
            for (name, k), params, comp in zip(system.predvars, system.formal_args, comps):
                rel = []
                for tup in self.M.tuples(k):
                    e = dict(var_assign)
                    e.update(zip(params, tup))
                    if self._holds_universally(comp, e, pvs, open_vars):
                        rel.append(tup)
                nxt.append(frozenset(rel))
            nxt = tuple(nxt)
            if nxt == current:
                return chain
            chain.append(nxt)
            current = nxt

    def _holds_universally(self, comp, e, pvs, open_vars) -> bool:
        # free variables of an open component are read universally
        if not open_vars:
            return comp(e, pvs)
        for values in itertools.product(range(self.M.size), repeat=len(open_vars)):
            e.update(zip(open_vars, values))
            if not comp(e, pvs):
                return False
        return True

    def truth(self, f: Formula, var_assign: Mapping | None = None, pv_assign: Mapping | None = None) -> bool:
        fn = self.compile(f)
        e = dict(var_assign or {})
        p = {k: frozenset(v) for k, v in (pv_assign or {}).items()}
        try:
            return bool(fn(e, p))
        except KeyError as exc:
            if isinstance(exc, MissingInterpretation):
                raise
            raise MissingInterpretation(f"variable {exc.args[0]}") from None


def _all(fns):
    if len(fns) == 1:
        return fns[0]
    if len(fns) == 2:
        a, b = fns
        return lambda e, p: a(e, p) and b(e, p)

    def conj(e, p):
        for fn in fns:
            if not fn(e, p):
                return False
        return True
    return conj


def _any(fns):
    if not fns:
        return lambda e, p: False
    if len(fns) == 1:
        return fns[0]
    if len(fns) == 2:
        a, b = fns
        return lambda e, p: a(e, p) or b(e, p)

    def disj(e, p):
        for fn in fns:
            if fn(e, p):
                return True
        return False
    return disj


def _bind_one(v, value, rest):
    def bound(e, p):
        old = e.get(v, _MISSING)
        e[v] = value(e)
        try:
            return rest(e, p)
        finally:
            if old is _MISSING:
                del e[v]
            else:
                e[v] = old
    return bound


def _one_point(g: Formula, qs: set):
    if not isinstance(g, Eq):
        return None
    for a, b in ((g.lhs, g.rhs), (g.rhs, g.lhs)):
        if isinstance(a, Var) and a.name in qs and not (term_vars(b) & qs):
            return a.name, b
    return None


def _components(parts: list, qs: set) -> list[tuple[list, set]]:
    groups: list[tuple[list, set]] = []
    for g in parts:
        gv = free_vars(g) & qs
        merged = [(ps, vs) for ps, vs in groups if vs & gv]
        keep = [(ps, vs) for ps, vs in groups if not (vs & gv)]
        new_parts = [x for ps, _ in merged for x in ps] + [g]
        new_vars = set(gv).union(*(vs for _, vs in merged))
        groups = keep + [(new_parts, new_vars)]
    # restore declaration order of the conjuncts within and across groups
    order = {id(g): i for i, g in enumerate(parts)}
    groups = [(sorted(ps, key=lambda g: order[id(g)]), vs) for ps, vs in groups]
    groups.sort(key=lambda gv: order[id(gv[0][0])])
    return groups


def _relations(positions: list[tuple]):
    """All relations over the positions, by increasing characteristic bitmask."""
    n = len(positions)
    for mask in range(1 << n):
        yield frozenset(positions[i] for i in range(n) if mask >> i & 1)


# ---------------------------------------------------------- public API


def _env_parts(env: Environment | None):
    if env is None:
        return {}, {}
    return dict(env.var_assign), dict(env.pv_assign)


def eval_formula(M: FiniteStructure, env: Environment | None, f: Formula, budget: int | None = None) -> bool:
    var_assign, pv_assign = _env_parts(env)
    return Evaluator(M, budget).truth(f, var_assign, pv_assign)


def satisfying_tuples(M: FiniteStructure, f: Formula, params: Sequence[str],
                      env: Environment | None = None, evaluator: Evaluator | None = None) -> frozenset:
    """{ā : M, θ[x̄:=ā] ⊨ f}."""
    ev = evaluator or Evaluator(M)
    var_assign, pv_assign = _env_parts(env)
    fn = ev.compile(f)
    p = {k: frozenset(v) for k, v in pv_assign.items()}
    out = []
    for tup in M.tuples(len(params)):
        e = dict(var_assign)
        e.update(zip(params, tup))
        if fn(e, p):
            out.append(tup)
    return frozenset(out)


def lfp_stages(M: FiniteStructure, phi: PhiSystem, env: Environment | None = None) -> list[RelationTuple]:
    var_assign, pv_assign = _env_parts(env)
    chain = Evaluator(M).stages(phi, var_assign, pv_assign)
    return [RelationTuple(phi.names, s) for s in chain]


def lfp_iterate(M: FiniteStructure, phi: PhiSystem, env: Environment | None = None) -> RelationTuple:
    return lfp_stages(M, phi, env)[-1]


def sigma_levels(phi: PhiSystem, depth: int, max_size: int = 500_000) -> list[tuple]:
    """[σ⁰, σ¹, …, σ^depth], each a tuple with one formula per component."""
    level = tuple(FALSE for _ in phi.predvars)
    levels = [level]
    for _ in range(depth):
        subst = {name: (params, body) for (name, _), params, body in zip(phi.predvars, phi.formal_args, level)}
        level = tuple(substitute_predicates(c, subst) for c in phi.components)
        total = sum(formula_size(g) for g in level)
        if total > max_size:
            raise FormulaSizeError(f"σ unfolding exceeds {max_size} formula nodes")
        levels.append(level)
    return levels


def unfold_sigma(phi: PhiSystem, l: int, max_size: int = 500_000) -> list[Formula]:
    return list(sigma_levels(phi, l, max_size)[-1])


# ------------------------------------------- exhaustive solution search


@dataclass
class GroundProblem:
    """A formula equation grounded over a finite structure.

    Relation tuples are bitmasks over `positions`; a ground clause
    (body, head) is satisfied iff some body bit is clear or some head bit set.
    """

    names: tuple
    arities: tuple
    positions: list
    index: dict
    clauses: list

    def decode(self, mask: int) -> RelationTuple:
        rels = [[] for _ in self.names]
        for i, (j, tup) in enumerate(self.positions):
            if mask >> i & 1:
                rels[j].append(tup)
        return RelationTuple(self.names, tuple(frozenset(r) for r in rels))

    def encode(self, rt: RelationTuple) -> int:
        mask = 0
        for j, rel in enumerate(rt.rels):
            for tup in rel:
                mask |= 1 << self.index[(j, tup)]
        return mask

    def satisfied(self, mask: int) -> bool:
        return all((mask & b) != b or (mask & h) for b, h in self.clauses)


def ground(M: FiniteStructure, fe: FormulaEquation, clauses=None, budget: int | None = None,
           total: int = DEFAULT_TOTAL_POSITIONS) -> GroundProblem:
    per = enumeration_budget() if budget is None else budget
    names = fe.names
    arities = tuple(k for _, k in fe.predvars)
    positions, index = [], {}
    for j, k in enumerate(arities):
        if len(M.tuples(k)) > per:
            raise BudgetExceeded(f"{names[j]}/{k}: {len(M.tuples(k))} positions > budget {per}")
        for tup in M.tuples(k):
            index[(j, tup)] = len(positions)
            positions.append((j, tup))
    if len(positions) > total:
        raise BudgetExceeded(f"{len(positions)} joint relation positions > {total}")
    ev = Evaluator(M)
    slot = {n: j for j, n in enumerate(names)}
    ground_clauses = set()
    for c in (fe.clauses if clauses is None else clauses):
        cons = ev.compile(c.constraint)
        body = [([ev.term(a) for a in atom.args], slot[atom.pv]) for atom in c.body]
        head = [([ev.term(a) for a in atom.args], slot[atom.pv]) for atom in c.head]
        for values in itertools.product(range(M.size), repeat=len(c.free_vars)):
            e = dict(zip(c.free_vars, values))
            if not cons(e, {}):
                continue
            bm = 0
            for ts, j in body:
                bm |= 1 << index[(j, tuple(t(e) for t in ts))]
            hm = 0
            for ts, j in head:
                hm |= 1 << index[(j, tuple(t(e) for t in ts))]
            if bm & hm:
                continue  # tautological instance
            ground_clauses.add((bm, hm))
    return GroundProblem(names, arities, positions, index, sorted(ground_clauses))


def satisfied_masks(gp: GroundProblem, masks: np.ndarray) -> np.ndarray:
    """Boolean array: which candidate bitmasks satisfy every ground clause."""
    ok = np.ones(len(masks), dtype=bool)
    for b, h in gp.clauses:
        body_full = (masks & b) == b
        if h:
            ok &= ~body_full | ((masks & h) != 0)
        else:
            ok &= ~body_full
        if not ok.any():
            break
    return ok


def solution_masks(gp: GroundProblem, stop_at_first: bool = False) -> np.ndarray:
    """All satisfying relation tuples as bitmasks, ascending."""
    n = len(gp.positions)
    found = []
    for lo in range(0, 1 << n, CHUNK):
        masks = np.arange(lo, min(1 << n, lo + CHUNK), dtype=np.int64)
        hits = masks[satisfied_masks(gp, masks)]
        if len(hits):
            found.append(hits)
            if stop_at_first:
                break
    return np.concatenate(found) if found else np.zeros(0, dtype=np.int64)


def _propagate(clauses, true: int, false: int):
    changed = True
    while changed:
        changed = False
        for b, h in clauses:
            if b & false or h & true:
                continue
            free_body, free_head = b & ~true, h & ~false
            free = free_body | free_head
            if not free:
                return None
            if free & (free - 1) == 0:
                if free_body:
                    false |= free_body
                else:
                    true |= free_head
                changed = True
    return true, false


def search_solution(gp: GroundProblem) -> int | None:
    """A satisfying bitmask found by DPLL over the ground clauses, or None.

    Unit propagation plus chronological backtracking; it does not assume the
    clauses are Horn, so it stays independent of the fixed-point route.
    """
    stack = [(0, 0)]
    while stack:
        state = _propagate(gp.clauses, *stack.pop())
        if state is None:
            continue
        true, false = state
        pick = 0
        for b, h in gp.clauses:
            if not (b & false or h & true):
                free = (b & ~true) | (h & ~false)
                pick = free & -free
                break
        if not pick:
            return true  # unassigned positions default to false
        stack.append((true | pick, false))
        stack.append((true, false | pick))
    return None


def eval_so(M: FiniteStructure, fe: FormulaEquation) -> bool:
    """M ⊨ ∃X̄ψ over all relation tuples.

    Within the enumeration budget every tuple is tried; beyond it the ground
    clauses go to a complete propositional search instead.
    """
    try:
        gp = ground(M, fe)
    except BudgetExceeded:
        gp = ground(M, fe, budget=SEARCH_POSITIONS, total=SEARCH_POSITIONS)
        return search_solution(gp) is not None
    return len(solution_masks(gp, stop_at_first=True)) > 0


def all_solutions(M: FiniteStructure, fe: FormulaEquation) -> list[RelationTuple]:
    gp = ground(M, fe)
    return [gp.decode(int(m)) for m in solution_masks(gp)]


def least_solution_bruteforce(M: FiniteStructure, fe: FormulaEquation) -> RelationTuple | None:
    gp = ground(M, fe)
    masks = solution_masks(gp)
    if not len(masks):
        return None
    meet = int(np.bitwise_and.reduce(masks))
    if not gp.satisfied(meet):
        raise NoLeastSolution("solutions exist but none is pointwise least")
    return gp.decode(meet)


def holds_with(M: FiniteStructure, fe: FormulaEquation, rels: RelationTuple | Mapping) -> bool:
    """eval(ψ[X̄\\R̄]) through the generic evaluator."""
    assign = rels.as_dict() if isinstance(rels, RelationTuple) else dict(rels)
    return eval_formula(M, Environment({}, assign), fe.matrix())

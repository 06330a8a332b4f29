"""Independent brute-force oracles.

Nothing here calls the package's evaluator, grounding, fixed-point or
linear-algebra code; only the syntax tree and structure containers are shared.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import sympy

from hornfix.formula import (
    And,
    Atom,
    Const,
    Eq,
    Exists,
    ExistsSO,
    Falsum,
    Forall,
    ForallSO,
    LfpAtom,
    Not,
    Or,
    PredVarAtom,
    Var,
    Verum,
)
from hornfix import imp


# ------------------------------------------------------- Tarski semantics


def naive_term(M, t, env):
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, Const):
        return M.consts[t.name]
    table = M.funs[t.fun][1]
    for a in t.args:
        table = table[naive_term(M, a, env)]
    return table


def all_relations(M, k):
    tuples = list(itertools.product(range(M.size), repeat=k))
    for r in range(len(tuples) + 1):
        for combo in itertools.combinations(tuples, r):
            yield frozenset(combo)


def naive_eval(M, f, env, pvs):
    """Textbook recursive satisfaction; env: var -> elem, pvs: pv -> set of tuples."""
    if isinstance(f, Verum):
        return True
    if isinstance(f, Falsum):
        return False
    if isinstance(f, Eq):
        return naive_term(M, f.lhs, env) == naive_term(M, f.rhs, env)
    if isinstance(f, Atom):
        return tuple(naive_term(M, a, env) for a in f.args) in M.preds[f.pred]
    if isinstance(f, PredVarAtom):
        return tuple(naive_term(M, a, env) for a in f.args) in pvs[f.pv]
    if isinstance(f, Not):
        return not naive_eval(M, f.body, env, pvs)
    if isinstance(f, And):
        return all(naive_eval(M, p, env, pvs) for p in f.parts)
    if isinstance(f, Or):
        return any(naive_eval(M, p, env, pvs) for p in f.parts)
    if isinstance(f, Exists):
        return any(naive_eval(M, f.body, {**env, f.var: a}, pvs) for a in range(M.size))
    if isinstance(f, Forall):
        return all(naive_eval(M, f.body, {**env, f.var: a}, pvs) for a in range(M.size))
    if isinstance(f, ExistsSO):
        return any(naive_eval(M, f.body, env, {**pvs, f.pv: r}) for r in all_relations(M, f.arity))
    if isinstance(f, ForallSO):
        return all(naive_eval(M, f.body, env, {**pvs, f.pv: r}) for r in all_relations(M, f.arity))
    if isinstance(f, LfpAtom):
        stages = naive_stages(M, f.system, env, pvs)
        j = [n for n, _ in f.system.predvars].index(f.target_pv)
        return tuple(naive_term(M, a, env) for a in f.args) in stages[-1][j]
    raise TypeError(f)


def naive_stages(M, system, env=None, pvs=None):
    env = dict(env or {})
    pvs = dict(pvs or {})
    names = [n for n, _ in system.predvars]
    current = tuple(frozenset() for _ in names)
    chain = [current]
    while True:
        assign = {**pvs, **dict(zip(names, current))}
        nxt = tuple(
            frozenset(t for t in itertools.product(range(M.size), repeat=k)
                      if naive_eval(M, comp, {**env, **dict(zip(params, t))}, assign))
            for (_, k), params, comp in zip(system.predvars, system.formal_args, system.components)
        )
        if nxt == current:
            return chain
        chain.append(nxt)
        current = nxt


def naive_solutions(M, fe):
    """Every relation tuple satisfying the clause matrix, by plain enumeration."""
    matrix = fe.matrix()
    choices = [list(all_relations(M, k)) for _, k in fe.predvars]
    out = []
    for rels in itertools.product(*choices):
        if naive_eval(M, matrix, {}, dict(zip(fe.names, rels))):
            out.append(rels)
    return out


def tuples_of(M, f, params, pvs=None):
    return frozenset(t for t in itertools.product(range(M.size), repeat=len(params))
                     if naive_eval(M, f, dict(zip(params, t)), pvs or {}))


# -------------------------------------------------- rational arithmetic


def q_term(t, point):
    if isinstance(t, Var):
        return Fraction(point[t.name])
    if isinstance(t, Const):
        return Fraction(t.name)
    args = [q_term(a, point) for a in t.args]
    if t.fun == "plus":
        return sum(args, Fraction(0))
    if t.fun == "minus":
        return args[0] - args[1]
    if t.fun == "neg":
        return -args[0]
    if t.fun == "mul":
        return args[0] * args[1]
    raise ValueError(t.fun)


def q_eval(f, point):
    if isinstance(f, Verum):
        return True
    if isinstance(f, Falsum):
        return False
    if isinstance(f, Eq):
        return q_term(f.lhs, point) == q_term(f.rhs, point)
    if isinstance(f, Not):
        return not q_eval(f.body, point)
    if isinstance(f, And):
        return all(q_eval(p, point) for p in f.parts)
    if isinstance(f, Or):
        return any(q_eval(p, point) for p in f.parts)
    raise TypeError(f)


GRID = sorted({Fraction(n, d) for n in range(-5, 6) for d in (1, 2, 3)})


def grid_counterexample(f, variables):
    for values in itertools.product(GRID, repeat=len(variables)):
        point = dict(zip(variables, values))
        if not q_eval(f, point):
            return point
    return None


def sympy_rank(vectors, k):
    if not vectors:
        return 0
    return sympy.Matrix([[sympy.Rational(x.numerator, x.denominator) for x in v] for v in vectors]).rank()


def in_affine_span(point, points):
    """point ∈ affine hull(points), decided by sympy rank comparison."""
    if not points:
        return False
    base = points[0]
    diffs = [[Fraction(a) - Fraction(b) for a, b in zip(p, base)] for p in points[1:]]
    k = len(base)
    r = sympy_rank(diffs, k)
    extra = diffs + [[Fraction(a) - Fraction(b) for a, b in zip(point, base)]]
    return sympy_rank(extra, k) == r


def hull_dimension(points):
    if not points:
        return -1
    base = points[0]
    diffs = [[Fraction(a) - Fraction(b) for a, b in zip(p, base)] for p in points[1:]]
    return sympy_rank(diffs, len(base))


# ------------------------------------------------ denotational programs


def _term_fn(M, t):
    return lambda s: naive_term(M, t, s)


def denote(M, p, names):
    """C(p) as a dict from state tuples to final state tuples; missing keys mean divergence."""
    states = list(itertools.product(range(M.size), repeat=len(names)))
    idx = {n: i for i, n in enumerate(names)}

    def as_env(s):
        return dict(zip(names, s))

    if isinstance(p, imp.Skip):
        return {s: s for s in states}
    if isinstance(p, imp.Assign):
        out = {}
        for s in states:
            v = naive_term(M, p.term, as_env(s))
            t = list(s)
            t[idx[p.var]] = v
            out[s] = tuple(t)
        return out
    if isinstance(p, imp.Seq):
        a, b = denote(M, p.first, names), denote(M, p.second, names)
        return {s: b[m] for s, m in a.items() if m in b}
    if isinstance(p, imp.If):
        a, b = denote(M, p.then, names), denote(M, p.orelse, names)
        out = {}
        for s in states:
            branch = a if naive_eval(M, p.cond, as_env(s), {}) else b
            if s in branch:
                out[s] = branch[s]
        return out
    if isinstance(p, imp.While):
        body = denote(M, p.body, names)
        rel: dict = {}
        # least fixed point of the loop operator over partial functions
        while True:
            nxt = {}
            for s in states:
                if not naive_eval(M, p.cond, as_env(s), {}):
                    nxt[s] = s
                elif s in body and body[s] in rel:
                    nxt[s] = rel[body[s]]
            if nxt == rel:
                return rel
            rel = nxt
    raise TypeError(p)


def oracle_wp(M, p, post, names):
    c = denote(M, p, names)
    return frozenset(s for s in itertools.product(range(M.size), repeat=len(names))
                     if s not in c or naive_eval(M, post, dict(zip(names, c[s])), {}))


def oracle_sp(M, p, pre, names):
    c = denote(M, p, names)
    return frozenset(c[s] for s in itertools.product(range(M.size), repeat=len(names))
                     if naive_eval(M, pre, dict(zip(names, s)), {}) and s in c)


def oracle_hoare(M, t, names):
    c = denote(M, t.prog, names)
    for s in itertools.product(range(M.size), repeat=len(names)):
        if naive_eval(M, t.pre, dict(zip(names, s)), {}) and s in c:
            if not naive_eval(M, t.post, dict(zip(names, c[s])), {}):
                return False
    return True

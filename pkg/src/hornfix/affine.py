"""Affine formula equations over the rationals.

Affine subspaces of Q^k are kept in a canonical form (reduced row-echelon
direction basis, base point zero on the pivot columns), so structural
equality is set equality.  All arithmetic is exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .clauses import (
    ConstrainedClause,
    FormulaEquation,
    Role,
    classify_clause,
    clause_formula,
)
from .formula import (
    FALSE,
    TRUE,
    And,
    App,
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
    PredVarAtom,
    Term,
    Var,
    Verum,
    free_vars,
    substitute_predicates,
    substitute_terms,
)

Vector = tuple  # of Fraction


class AffineError(ValueError):
    pass


class NonlinearTerm(AffineError):
    pass


class ProjectionCapExceeded(AffineError):
    pass


# ------------------------------------------------------ linear algebra


def rref(rows: Sequence[Sequence[Fraction]], ncols: int) -> tuple[list[list[Fraction]], list[int]]:
    """Reduced row-echelon form; zero rows dropped.  Returns (rows, pivot columns)."""
    m = [list(map(Fraction, r)) for r in rows]
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        pivot = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if pivot is None:
            continue
        m[r], m[pivot] = m[pivot], m[r]
        lead = m[r][c]
        if lead != 1:
            m[r] = [x / lead for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m[:r], pivots


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _dot(a, b):
    return sum((x * y for x, y in zip(a, b)), Fraction(0))


def null_space(rows: Sequence[Sequence[Fraction]], ncols: int) -> list[tuple]:
    """Basis of {v : row·v = 0 for all rows}."""
    red, pivots = rref(rows, ncols)
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for f in free:
        v = [Fraction(0)] * ncols
        v[f] = Fraction(1)
        for row, p in zip(red, pivots):
            v[p] = -row[f]
        basis.append(tuple(v))
    return basis


# ------------------------------------------------------------ subspaces


@dataclass(frozen=True)
class AffineSubspace:
    k: int
    point: Vector | None  # None for the empty subspace
    directions: tuple = ()

    @staticmethod
    def empty(k: int) -> "AffineSubspace":
        return AffineSubspace(k, None, ())

    @staticmethod
    def full(k: int) -> "AffineSubspace":
        return AffineSubspace.make(tuple([Fraction(0)] * k), [_unit(k, i) for i in range(k)])

    @staticmethod
    def make(point: Sequence, directions: Iterable[Sequence] = ()) -> "AffineSubspace":
        k = len(point)
        dirs = [tuple(map(Fraction, d)) for d in directions]
        for d in dirs:
            if len(d) != k:
                raise AffineError("dimension mismatch between point and direction")
        red, pivots = rref(dirs, k)
        p = list(map(Fraction, point))
        for row, c in zip(red, pivots):
            if p[c] != 0:
                f = p[c]
                p = [a - f * b for a, b in zip(p, row)]
        return AffineSubspace(k, tuple(p), tuple(tuple(r) for r in red))

    @staticmethod
    def from_equations(rows: Sequence[Sequence], rhs: Sequence, k: int) -> "AffineSubspace":
        """{x ∈ Q^k : rows·x = rhs}."""
        if not rows:
            return AffineSubspace.full(k)
        aug = [list(map(Fraction, r)) + [Fraction(b)] for r, b in zip(rows, rhs, strict=True)]
        red, pivots = rref(aug, k + 1)
        if k in pivots:
            return AffineSubspace.empty(k)
        p = [Fraction(0)] * k
        for row, c in zip(red, pivots):
            p[c] = row[k]
        return AffineSubspace.make(p, null_space([r[:k] for r in red], k))

    @property
    def is_empty(self) -> bool:
        return self.point is None

    @property
    def dimension(self) -> int:
        return -1 if self.point is None else len(self.directions)

    def contains(self, x: Sequence) -> bool:
        if self.point is None:
            return False
        rows, rhs = self.equations()
        return all(_dot(r, x) == b for r, b in zip(rows, rhs))

    def contains_space(self, other: "AffineSubspace") -> bool:
        """other ⊆ self."""
        if other.point is None:
            return True
        if self.point is None:
            return False
        rows, rhs = self.equations()
        for r, b in zip(rows, rhs):
            if _dot(r, other.point) != b or any(_dot(r, d) != 0 for d in other.directions):
                return False
        return True

    def equations(self) -> tuple[list[tuple], list[Fraction]]:
        """Canonical equation system rows·x = rhs (an empty space gives 0 = 1)."""
        if self.point is None:
            return [tuple([Fraction(0)] * self.k)], [Fraction(1)]
        normals = null_space(self.directions, self.k)
        aug = [list(n) + [_dot(n, self.point)] for n in normals]
        red, _ = rref(aug, self.k + 1)
        return [tuple(r[:self.k]) for r in red], [r[self.k] for r in red]

    def sample(self, params: Sequence) -> Vector:
        p = list(self.point)
        for t, d in zip(params, self.directions):
            p = [a + Fraction(t) * b for a, b in zip(p, d)]
        return tuple(p)


def _unit(k: int, i: int) -> tuple:
    return tuple(Fraction(1 if j == i else 0) for j in range(k))


def _check_dims(k: int, items) -> None:
    for it in items:
        n = it.k if isinstance(it, AffineSubspace) else len(it)
        if n != k:
            raise AffineError(f"dimension mismatch: expected {k}, got {n}")


def hull(points: Sequence[Sequence] = (), spaces: Sequence[AffineSubspace] = (), k: int | None = None
         ) -> AffineSubspace:
    """Smallest affine subspace containing all points and spaces."""
    if k is None:
        if points:
            k = len(points[0])
        elif spaces:
            k = spaces[0].k
        else:
            raise AffineError("hull of nothing needs an explicit dimension")
    _check_dims(k, points)
    _check_dims(k, spaces)
    anchors = [tuple(map(Fraction, p)) for p in points] + [s.point for s in spaces if s.point is not None]
    if not anchors:
        return AffineSubspace.empty(k)
    base = anchors[0]
    dirs = [_sub(a, base) for a in anchors[1:]]
    for s in spaces:
        dirs.extend(s.directions)
    return AffineSubspace.make(base, dirs)


def join(a: AffineSubspace, b: AffineSubspace) -> AffineSubspace:
    return hull((), (a, b), a.k)


def meet(a: AffineSubspace, b: AffineSubspace) -> AffineSubspace:
    if a.k != b.k:
        raise AffineError(f"dimension mismatch: {a.k} vs {b.k}")
    if a.is_empty or b.is_empty:
        return AffineSubspace.empty(a.k)
    ra, ba = a.equations()
    rb, bb = b.equations()
    return AffineSubspace.from_equations(ra + rb, ba + bb, a.k)


@dataclass(frozen=True)
class AffineMap:
    """x ↦ matrix·x + offset from Q^k to Q^m."""

    matrix: tuple  # m rows of length k
    offset: tuple
    k: int

    @staticmethod
    def of(matrix: Sequence[Sequence], offset: Sequence, k: int | None = None) -> "AffineMap":
        rows = tuple(tuple(map(Fraction, r)) for r in matrix)
        if k is None:
            k = len(rows[0]) if rows else 0
        if any(len(r) != k for r in rows) or len(offset) != len(rows):
            raise AffineError("affine map dimensions are inconsistent")
        return AffineMap(rows, tuple(map(Fraction, offset)), k)

    @property
    def m(self) -> int:
        return len(self.matrix)

    def apply(self, x: Sequence) -> Vector:
        return tuple(_dot(r, x) + o for r, o in zip(self.matrix, self.offset))

    def linear(self, d: Sequence) -> Vector:
        return tuple(_dot(r, d) for r in self.matrix)


def affine_map(a: AffineSubspace, T: AffineMap, direction: str = "image") -> AffineSubspace:
    if direction == "image":
        if a.k != T.k:
            raise AffineError(f"dimension mismatch: space in Q^{a.k}, map from Q^{T.k}")
        if a.is_empty:
            return AffineSubspace.empty(T.m)
        return AffineSubspace.make(T.apply(a.point), [T.linear(d) for d in a.directions])
    if direction == "preimage":
        if a.k != T.m:
            raise AffineError(f"dimension mismatch: space in Q^{a.k}, map into Q^{T.m}")
        if a.is_empty:
            return AffineSubspace.empty(T.k)
        rows, rhs = a.equations()
        new_rows = [tuple(sum((r[i] * T.matrix[i][j] for i in range(T.m)), Fraction(0)) for j in range(T.k))
                    for r in rows]
        new_rhs = [b - _dot(r, T.offset) for r, b in zip(rows, rhs)]
        return AffineSubspace.from_equations(new_rows, new_rhs, T.k)
    raise ValueError(f"direction must be 'image' or 'preimage', not {direction!r}")


# --------------------------------------------------- linear terms/eqs


@dataclass(frozen=True)
class LinearTerm:
    coeffs: tuple  # sorted (variable, nonzero Fraction) pairs
    constant: Fraction = Fraction(0)

    @staticmethod
    def of(coeffs: Mapping[str, Fraction], constant=0) -> "LinearTerm":
        return LinearTerm(tuple(sorted((v, Fraction(c)) for v, c in coeffs.items() if c != 0)), Fraction(constant))

    def as_dict(self) -> dict[str, Fraction]:
        return dict(self.coeffs)

    def __add__(self, other: "LinearTerm") -> "LinearTerm":
        d = self.as_dict()
        for v, c in other.coeffs:
            d[v] = d.get(v, Fraction(0)) + c
        return LinearTerm.of(d, self.constant + other.constant)

    def scale(self, c: Fraction) -> "LinearTerm":
        return LinearTerm.of({v: c * a for v, a in self.coeffs}, c * self.constant)

    def __sub__(self, other: "LinearTerm") -> "LinearTerm":
        return self + other.scale(Fraction(-1))

    def is_constant(self) -> bool:
        return not self.coeffs

    def value(self, point: Mapping[str, Fraction]) -> Fraction:
        return self.constant + sum((c * Fraction(point.get(v, 0)) for v, c in self.coeffs), Fraction(0))


@dataclass(frozen=True)
class LinearEquation:
    """lhs = 0, scaled so the first nonzero coefficient (by variable name) is 1."""

    lhs: LinearTerm

    @staticmethod
    def of(lhs: LinearTerm) -> "LinearEquation":
        if lhs.coeffs:
            lead = lhs.coeffs[0][1]
            lhs = lhs.scale(1 / lead)
        elif lhs.constant != 0:
            lhs = LinearTerm((), Fraction(1))
        return LinearEquation(lhs)

    def trivial(self) -> bool | None:
        """True for 0 = 0, False for c = 0 with c ≠ 0, None otherwise."""
        if self.lhs.coeffs:
            return None
        return self.lhs.constant == 0

    def holds(self, point: Mapping[str, Fraction]) -> bool:
        return self.lhs.value(point) == 0


def _rational_const(name: str) -> Fraction | None:
    try:
        return Fraction(name)
    except (ValueError, ZeroDivisionError):
        return None


def linearize(t: Term) -> LinearTerm:
    if isinstance(t, Var):
        return LinearTerm(((t.name, Fraction(1)),), Fraction(0))
    if isinstance(t, Const):
        value = _rational_const(t.name)
        if value is None:
            raise NonlinearTerm(f"constant {t.name} is not a rational literal")
        return LinearTerm((), value)
    args = [linearize(a) for a in t.args]
    if t.fun == "plus":
        out = args[0]
        for a in args[1:]:
            out = out + a
        return out
    if t.fun == "minus" and len(args) == 2:
        return args[0] - args[1]
    if t.fun == "neg" and len(args) == 1:
        return args[0].scale(Fraction(-1))
    if t.fun == "mul" and len(args) == 2:
        a, b = args
        if a.is_constant():
            return b.scale(a.constant)
        if b.is_constant():
            return a.scale(b.constant)
        raise NonlinearTerm("product of two non-constant terms")
    raise NonlinearTerm(f"function {t.fun} is outside the affine language")


def equation_of(f: Eq) -> LinearEquation:
    return LinearEquation.of(linearize(f.lhs) - linearize(f.rhs))


def equation_formula(eq: LinearEquation) -> Formula:
    """Σ c_v·v = -c₀ as an affine-language formula."""
    if not eq.lhs.coeffs:
        return TRUE if eq.lhs.constant == 0 else FALSE
    terms = [App("mul", (Const(str(c)), Var(v))) for v, c in eq.lhs.coeffs]
    lhs: Term = terms[0]
    for t in terms[1:]:
        lhs = App("plus", (lhs, t))
    return Eq(lhs, Const(str(-eq.lhs.constant)))


def equation_sexpr(eq: LinearEquation) -> str:
    pairs = " ".join(f"({c} {v})" for v, c in eq.lhs.coeffs)
    return f"(eq (lin{' ' + pairs if pairs else ''}) {-eq.lhs.constant})"


def equation_text(eq: LinearEquation) -> str:
    """Human form with coprime integer coefficients, e.g. '2x - y = 0'."""
    coeffs = [c for _, c in eq.lhs.coeffs] + [eq.lhs.constant]
    scale = math.lcm(*(c.denominator for c in coeffs))
    ints = [int(c * scale) for c in coeffs]
    g = math.gcd(*ints) or 1
    ints = [i // g for i in ints]
    if not eq.lhs.coeffs:
        return "0 = 0" if eq.lhs.constant == 0 else "0 = 1"
    pieces = []
    for (v, _), c in zip(eq.lhs.coeffs, ints):
        mag = "" if abs(c) == 1 else str(abs(c))
        if not pieces:
            pieces.append(("-" if c < 0 else "") + mag + v)
        else:
            pieces.append(("- " if c < 0 else "+ ") + mag + v)
    return " ".join(pieces) + f" = {-ints[-1]}"


def space_equations(s: AffineSubspace, names: Sequence[str]) -> list[LinearEquation]:
    rows, rhs = s.equations()
    return [LinearEquation.of(LinearTerm.of(dict(zip(names, r)), -b)) for r, b in zip(rows, rhs)]


def system_formula(eqs: Sequence[LinearEquation]) -> Formula:
    parts = [equation_formula(e) for e in eqs]
    if not parts:
        return TRUE
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def system_text(eqs: Sequence[LinearEquation]) -> str:
    if not eqs:
        return "true"
    if any(e.trivial() is False for e in eqs):
        return "false"
    return " and ".join(equation_text(e) for e in eqs)


def witness_names(k: int) -> tuple[str, ...]:
    return ("x", "y", "z")[:k] if k <= 3 else tuple(f"x{i}" for i in range(1, k + 1))


# ------------------------------------------------------ QF validity


@dataclass(frozen=True)
class Validity:
    valid: bool
    counterexample: dict | None = None

    def __bool__(self) -> bool:
        return self.valid


def _literals_dnf(f: Formula, positive: bool) -> list[list[tuple[LinearEquation, bool]]]:
    """DNF of f (or ¬f) as lists of (equation, polarity) literals; false literals pruned."""
    if isinstance(f, Verum):
        return [[]] if positive else []
    if isinstance(f, Falsum):
        return [] if positive else [[]]
    if isinstance(f, Eq):
        eq = equation_of(f)
        triv = eq.trivial()
        if triv is not None:
            return [[]] if triv == positive else []
        return [[(eq, positive)]]
    if isinstance(f, Not):
        return _literals_dnf(f.body, not positive)
    if isinstance(f, (And, Or)):
        conjunctive = isinstance(f, And) == positive
        subs = [_literals_dnf(p, positive) for p in f.parts]
        if not conjunctive:
            return [c for s in subs for c in s]
        out: list[list] = [[]]
        for s in subs:
            out = [a + b for a in out for b in s]
            if not out:
                break
        return out
    if isinstance(f, (Exists, Forall, ExistsSO, ForallSO)):
        raise AffineError("qflra_valid needs a quantifier-free formula")
    if isinstance(f, PredVarAtom):
        raise AffineError(f"predicate variable {f.pv} in a first-order validity check")
    if isinstance(f, (Atom, LfpAtom)):
        raise AffineError("only linear equations are allowed as atoms")
    raise TypeError(f"not a formula: {f!r}")


def _variables(f: Formula) -> list[str]:
    return sorted(free_vars(f))


def satisfiable_point(eqs: Sequence[LinearEquation], diseqs: Sequence[LinearEquation],
                      names: Sequence[str]) -> dict | None:
    """A rational point satisfying all equations and no disequation hyperplane, or None."""
    k = len(names)
    rows = [tuple(e.lhs.as_dict().get(v, Fraction(0)) for v in names) for e in eqs]
    rhs = [-e.lhs.constant for e in eqs]
    space = AffineSubspace.from_equations(rows, rhs, k)
    if space.is_empty:
        return None
    for d in diseqs:
        plane = AffineSubspace.from_equations(
            [tuple(d.lhs.as_dict().get(v, Fraction(0)) for v in names)], [-d.lhs.constant], k
        )
        if plane.contains_space(space):
            return None
    # moment-curve search: each disequation is a nonzero polynomial of degree ≤ r in s
    r = space.dimension
    for s in itertools.count():
        x = space.sample([Fraction(s) ** (i + 1) for i in range(r)])
        point = dict(zip(names, x))
        if all(not d.holds(point) for d in diseqs):
            return point
        if s > len(diseqs) * max(r, 1) + 1:  # pragma: no cover - impossible by the degree bound
            raise AssertionError("point search exceeded its degree bound")


def qflra_valid(f: Formula) -> Validity:
    """Decide Q ⊨ ∀* f for quantifier-free f over linear equations."""
    names = _variables(f)
    for conjunct in _literals_dnf(f, positive=False):
        eqs = [e for e, pos in conjunct if pos]
        diseqs = [e for e, pos in conjunct if not pos]
        point = satisfiable_point(eqs, diseqs, names)
        if point is not None:
            return Validity(False, point)
    return Validity(True)


# ------------------------------------------------------ Karr iteration


@dataclass(frozen=True)
class _ClauseTransfer:
    head_index: int
    domain: AffineSubspace  # constraint solutions in Q^|ȳ|
    body: tuple  # (predvar index, AffineMap) pairs
    head_map: AffineMap


def _clause_map(args: Sequence[Term], names: Sequence[str]) -> AffineMap:
    rows, offset = [], []
    for t in args:
        lt = linearize(t)
        d = lt.as_dict()
        extra = set(d) - set(names)
        if extra:
            raise AffineError(f"term uses undeclared variables {sorted(extra)}")
        rows.append([d.get(v, Fraction(0)) for v in names])
        offset.append(lt.constant)
    return AffineMap.of(rows, offset, len(names))


def constraint_equations(f: Formula) -> list[LinearEquation] | None:
    """Equations of a conjunction of linear equations; None when the conjunction is false."""
    parts = f.parts if isinstance(f, And) else (f,)
    out = []
    for p in parts:
        if isinstance(p, Verum):
            continue
        if isinstance(p, Falsum):
            return None
        if isinstance(p, And):
            sub = constraint_equations(p)
            if sub is None:
                return None
            out.extend(sub)
            continue
        if not isinstance(p, Eq):
            raise AffineError("Base/Induction constraints must be conjunctions of linear equations")
        out.append(equation_of(p))
    return out


def _transfer(c: ConstrainedClause, index: Mapping[str, int]) -> _ClauseTransfer:
    names = list(c.free_vars)
    eqs = constraint_equations(c.constraint)
    if eqs is None:
        domain = AffineSubspace.empty(len(names))
    else:
        rows = [tuple(e.lhs.as_dict().get(v, Fraction(0)) for v in names) for e in eqs]
        for e in eqs:
            extra = set(e.lhs.as_dict()) - set(names)
            if extra:
                raise AffineError(f"constraint uses undeclared variables {sorted(extra)}")
        domain = AffineSubspace.from_equations(rows, [-e.lhs.constant for e in eqs], len(names))
    body = tuple((index[a.pv], _clause_map(a.args, names)) for a in c.body)
    (h,) = c.head
    return _ClauseTransfer(index[h.pv], domain, body, _clause_map(h.args, names))


@dataclass
class KarrResult:
    spaces: dict  # predvar -> AffineSubspace
    iterations: int  # applications of F^#, the last one confirming stability
    stages: list = field(default_factory=list)  # S^0, S^1, ... as dicts

    @property
    def reached(self) -> int:
        """Index m of the first stage S^m equal to the fixed point."""
        return len(self.stages) - 1


def _check_affine(fe: FormulaEquation) -> None:
    for c in fe.clauses:
        for f in (c.constraint,):
            if _has_lfp(f):
                raise AffineError("LFP atoms are not allowed in affine constraints")


def _has_lfp(f: Formula) -> bool:
    if isinstance(f, LfpAtom):
        return True
    if isinstance(f, Not):
        return _has_lfp(f.body)
    if isinstance(f, (And, Or)):
        return any(_has_lfp(p) for p in f.parts)
    if isinstance(f, (Exists, Forall, ExistsSO, ForallSO)):
        return _has_lfp(f.body)
    return False


def karr_fixpoint(fe: FormulaEquation, max_iterations: int = 10_000) -> KarrResult:
    _check_affine(fe)
    index = {n: j for j, n in enumerate(fe.names)}
    arities = [k for _, k in fe.predvars]
    transfers = []
    for c in fe.clauses:
        kind = classify_clause(c)
        if not kind.horn:
            raise AffineError("karr_fixpoint needs Horn clauses")
        if kind.role in (Role.BASE, Role.INDUCTION):
            transfers.append(_transfer(c, index))
    current = [AffineSubspace.empty(k) for k in arities]
    stages = [dict(zip(fe.names, current))]
    for iteration in range(1, max_iterations + 1):
        contributions: list[list[AffineSubspace]] = [[] for _ in arities]
        for tr in transfers:
            dom = tr.domain
            for j, T in tr.body:
                if dom.is_empty:
                    break
                dom = meet(dom, affine_map(current[j], T, "preimage"))
            contributions[tr.head_index].append(affine_map(dom, tr.head_map, "image"))
        nxt = [hull((), spaces, k) for spaces, k in zip(contributions, arities)]
        if nxt == current:
            return KarrResult(dict(zip(fe.names, current)), iteration, stages)
        current = nxt
        stages.append(dict(zip(fe.names, current)))
    raise AffineError(f"no affine fixed point within {max_iterations} iterations")


# ----------------------------------------------- symbolic component F^#


def _ep_disjuncts(f: Formula, counter: list[int]) -> list[tuple[list[str], list[Formula]]]:
    """∃-∨-∧ normal form of an existential positive formula, binders made unique."""
    if isinstance(f, (Verum, Eq, PredVarAtom)):
        return [([], [f])]
    if isinstance(f, Falsum):
        return []
    if isinstance(f, Or):
        return [d for p in f.parts for d in _ep_disjuncts(p, counter)]
    if isinstance(f, And):
        out: list[tuple[list[str], list[Formula]]] = [([], [])]
        for p in f.parts:
            out = [(v1 + v2, l1 + l2) for v1, l1 in out for v2, l2 in _ep_disjuncts(p, counter)]
        return out
    if isinstance(f, Exists):
        counter[0] += 1
        fresh = f"%{counter[0]}"
        body = substitute_terms(f.body, {f.var: Var(fresh)})
        return [([fresh] + vs, lits) for vs, lits in _ep_disjuncts(body, counter)]
    raise AffineError("component is not existential positive over equations and predicate atoms")


def component_image(comp: Formula, params: Sequence[str], spaces: Mapping[str, AffineSubspace]
                    ) -> AffineSubspace:
    """α(F(γ(S))) for one component: the affine hull of {x̄ : comp(x̄) under S}."""
    k = len(params)
    pieces = []
    for bound, lits in _ep_disjuncts(comp, [0]):
        names = list(params) + bound
        rows, rhs = [], []
        membership = []
        for lit in lits:
            if isinstance(lit, Verum):
                continue
            if isinstance(lit, Eq):
                e = equation_of(lit)
                d = e.lhs.as_dict()
                extra = set(d) - set(names)
                if extra:
                    raise AffineError(f"component has free variables {sorted(extra)}")
                rows.append(tuple(d.get(v, Fraction(0)) for v in names))
                rhs.append(-e.lhs.constant)
            else:
                membership.append(lit)
        dom = AffineSubspace.from_equations(rows, rhs, len(names))
        for atom in membership:
            if dom.is_empty:
                break
            dom = meet(dom, affine_map(spaces[atom.pv], _clause_map(atom.args, names), "preimage"))
        proj = AffineMap.of([_unit(len(names), i) for i in range(k)], [0] * k, len(names))
        pieces.append(affine_map(dom, proj, "image"))
    return hull((), pieces, k)


# ----------------------------------------------------------- projections


def enumerate_projections(fe: FormulaEquation, drop_all: bool = False, cap: int = 1024
                          ) -> list[FormulaEquation]:
    """Horn strengthenings keeping at most one head literal per clause.

    Clauses with two or more head literals choose one of them (in head
    order); with drop_all they may also drop every head literal.  Order is
    lexicographic in (clause index, head index).
    """
    options = []
    for c in fe.clauses:
        if len(c.head) <= 1:
            options.append([c])
            continue
        opts = [ConstrainedClause(c.constraint, c.body, (h,), c.free_vars) for h in c.head]
        if drop_all:
            opts.append(ConstrainedClause(c.constraint, c.body, (), c.free_vars))
        options.append(opts)
    count = math.prod(len(o) for o in options)
    if count > cap:
        raise ProjectionCapExceeded(f"{count} projections exceed the cap {cap}")
    return [fe.with_clauses(choice) for choice in itertools.product(*options)]


# ----------------------------------------------------------- the solver


@dataclass
class AffineSolution:
    solvable: bool
    witness: dict = field(default_factory=dict)  # predvar -> list[LinearEquation] over witness_names
    spaces: dict = field(default_factory=dict)
    projection: int | None = None
    iterations: int | None = None
    failures: list = field(default_factory=list)  # (projection index, reason)

    def witness_formulas(self) -> dict:
        return {pv: system_formula(eqs) for pv, eqs in self.witness.items()}


def clause_matrix(c: ConstrainedClause) -> Formula:
    """The clause without its universal prefix."""
    f = clause_formula(c)
    while isinstance(f, Forall):
        f = f.body
    return f


def check_solution(fe: FormulaEquation, witness: Mapping[str, Sequence[LinearEquation]]
                   ) -> tuple[bool, ConstrainedClause | None, dict | None]:
    subst = {}
    for name, k in fe.predvars:
        subst[name] = (witness_names(k), system_formula(witness[name]))
    for c in fe.clauses:
        inst = substitute_predicates(clause_matrix(c), subst)
        result = qflra_valid(inst)
        if not result:
            return False, c, result.counterexample
    return True, None, None


def affine_solve(fe: FormulaEquation, drop_all: bool = False, cap: int = 1024) -> AffineSolution:
    _check_affine(fe)
    failures = []
    for i, proj in enumerate(enumerate_projections(fe, drop_all, cap)):
        karr = karr_fixpoint(proj)
        used = {a.pv for c in fe.clauses for a in c.body + c.head}
        witness = {}
        for name, k in proj.predvars:
            # an unconstrained predvar takes the empty equation system
            space = karr.spaces[name] if name in used else AffineSubspace.full(k)
            witness[name] = space_equations(space, witness_names(k))
        ok, clause, cex = check_solution(proj, witness)
        if ok:
            ok, clause, cex = check_solution(fe, witness)
        if ok:
            return AffineSolution(True, witness, karr.spaces, i, karr.iterations, failures)
        failures.append((i, clause, cex))
    return AffineSolution(False, failures=failures)

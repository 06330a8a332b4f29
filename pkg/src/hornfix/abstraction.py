"""Model abstractions: per-arity lattices tied to the concrete powerset by Galois connections."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import affine
from .affine import AffineSubspace
from .clauses import FormulaEquation
from .formula import PhiSystem, system_free_vars
from .semantics import (
    Evaluator,
    FiniteStructure,
    PositivityError,
    RelationTuple,
    eval_formula,
    ground,
    holds_with,
    satisfied_masks,
)

DEFAULT_ITERATION_CAP = 10_000
ENUMERATION_CAP = 1 << 16  # carriers larger than this are not enumerated


class CarrierNotEnumerable(ValueError):
    pass


class NonTerminatingChain(RuntimeError):
    pass


class NotALattice(ValueError):
    pass


# --------------------------------------------------------------- domains


class AbstractDomain:
    """Lattice operations plus alpha/gamma.  Subclasses fill in the operations."""

    arity: int

    def leq(self, a, b) -> bool:
        raise NotImplementedError

    def join(self, a, b):
        raise NotImplementedError

    def meet(self, a, b):
        raise NotImplementedError

    @property
    def bottom(self):
        raise NotImplementedError

    @property
    def top(self):
        raise NotImplementedError

    def alpha(self, concrete):
        raise NotImplementedError

    def gamma(self, element):
        raise NotImplementedError

    def concrete_subset(self, concrete, element) -> bool:
        """concrete ⊆ gamma(element)."""
        return set(concrete) <= self.gamma(element)

    def elements(self) -> list:
        raise CarrierNotEnumerable(f"{type(self).__name__} has no enumerable carrier")


class SetDomain(AbstractDomain):
    """The identity connection on subsets of M^k."""

    def __init__(self, M: FiniteStructure, arity: int):
        self.M = M
        self.arity = arity
        self.universe = frozenset(M.tuples(arity))

    def leq(self, a, b):
        return a <= b

    def join(self, a, b):
        return a | b

    def meet(self, a, b):
        return a & b

    @property
    def bottom(self):
        return frozenset()

    @property
    def top(self):
        return self.universe

    def alpha(self, concrete):
        return frozenset(concrete)

    def gamma(self, element):
        return element

    def elements(self):
        positions = self.M.tuples(self.arity)
        if 1 << len(positions) > ENUMERATION_CAP:
            raise CarrierNotEnumerable(f"2^{len(positions)} subsets are too many to enumerate")
        return [frozenset(p for i, p in enumerate(positions) if mask >> i & 1)
                for mask in range(1 << len(positions))]


class TableDomain(AbstractDomain):
    """A finite lattice given by its elements and their concretizations.

    The order defaults to inclusion of concretizations; alpha defaults to
    the least element whose concretization covers the input set.
    """

    def __init__(self, M: FiniteStructure, arity: int, gamma: Mapping, order: Iterable[tuple] | None = None,
                 alpha: Callable | None = None):
        self.M = M
        self.arity = arity
        self._gamma = {e: frozenset(tuple(t) for t in g) for e, g in gamma.items()}
        self._elements = list(self._gamma)
        if order is None:
            self._leq = {(a, b) for a in self._elements for b in self._elements
                         if self._gamma[a] <= self._gamma[b]}
        else:
            self._leq = _closure(set(order) | {(a, a) for a in self._elements}, self._elements)
        self._alpha = alpha

    def leq(self, a, b):
        return (a, b) in self._leq

    def _least(self, candidates: list, what: str):
        for c in candidates:
            if all(self.leq(c, d) for d in candidates):
                return c
        raise NotALattice(f"no {what}")

    def _greatest(self, candidates: list, what: str):
        for c in candidates:
            if all(self.leq(d, c) for d in candidates):
                return c
        raise NotALattice(f"no {what}")

    def join(self, a, b):
        return self._least([c for c in self._elements if self.leq(a, c) and self.leq(b, c)], f"join of {a}, {b}")

    def meet(self, a, b):
        return self._greatest([c for c in self._elements if self.leq(c, a) and self.leq(c, b)],
                              f"meet of {a}, {b}")

    @property
    def bottom(self):
        return self._least(self._elements, "bottom element")

    @property
    def top(self):
        return self._greatest(self._elements, "top element")

    def alpha(self, concrete):
        if self._alpha is not None:
            return self._alpha(frozenset(concrete))
        covers = [e for e in self._elements if frozenset(concrete) <= self._gamma[e]]
        return self._least(covers, "least cover for the concrete set")

    def gamma(self, element):
        return self._gamma[element]

    def elements(self):
        return list(self._elements)

    @classmethod
    def from_json(cls, M: FiniteStructure, obj: Mapping) -> "TableDomain":
        """{"arity": k, "gamma": {name: [[tuple]...]}, "order": [[a, b]...], "alpha": [[[tuples], name]...]}"""
        order = [tuple(p) for p in obj["order"]] if "order" in obj else None
        alpha = None
        if "alpha" in obj:
            table = {frozenset(tuple(t) for t in xs): e for xs, e in obj["alpha"]}
            alpha = table.__getitem__
        return cls(M, int(obj["arity"]), obj["gamma"], order, alpha)


def _closure(pairs: set, elements: list) -> set:
    """Transitive closure; fixture orders may list covering pairs only."""
    for k in elements:
        for a in elements:
            if (a, k) in pairs:
                for b in elements:
                    if (k, b) in pairs:
                        pairs.add((a, b))
    return pairs


def trivial_domain(M: FiniteStructure, arity: int) -> TableDomain:
    """The two-element lattice {∅, M^k}."""
    return TableDomain(M, arity, {"empty": [], "all": M.tuples(arity)})


class AffineDomain(AbstractDomain):
    """Affine subspaces of Q^k; alpha is the affine hull of a finite point set."""

    def __init__(self, arity: int):
        self.arity = arity

    def leq(self, a, b):
        return b.contains_space(a)

    def join(self, a, b):
        return affine.join(a, b)

    def meet(self, a, b):
        return affine.meet(a, b)

    @property
    def bottom(self):
        return AffineSubspace.empty(self.arity)

    @property
    def top(self):
        return AffineSubspace.full(self.arity)

    def alpha(self, concrete):
        return affine.hull(list(concrete), (), self.arity)

    def gamma(self, element):
        return element

    def concrete_subset(self, concrete, element) -> bool:
        return all(element.contains(p) for p in concrete)


# ---------------------------------------------------- model abstractions


@dataclass
class ModelAbstraction:
    base: FiniteStructure | None  # None for the rational affine model
    domain_of: Callable[[int], AbstractDomain]
    formula_class: str | None = None
    _domains: dict = field(default_factory=dict, repr=False)

    def domain(self, arity: int) -> AbstractDomain:
        d = self._domains.get(arity)
        if d is None:
            d = self.domain_of(arity)
            self._domains[arity] = d
        return d


def identity_abstraction(M: FiniteStructure) -> ModelAbstraction:
    return ModelAbstraction(M, lambda k: SetDomain(M, k))


def trivial_abstraction(M: FiniteStructure) -> ModelAbstraction:
    return ModelAbstraction(M, lambda k: trivial_domain(M, k))


def affine_abstraction() -> ModelAbstraction:
    return ModelAbstraction(None, AffineDomain, formula_class="linear-equations")


def definable_abstraction(formula_class: str) -> ModelAbstraction:
    """Only conjunctions of linear equations over Q are supported."""
    if formula_class not in ("linear-equations", "LinearEq", "affine"):
        raise ValueError(f"no definable abstraction for formula class {formula_class!r}")
    return affine_abstraction()


# ---------------------------------------------------------- operations


def abstract_lfp_iterate(ma: ModelAbstraction, phi: PhiSystem, cap: int = DEFAULT_ITERATION_CAP) -> tuple:
    bad = phi.positivity_violations()
    if bad:
        raise PositivityError(f"{bad[0][1]} occurs non-positively in the component for {bad[0][0]}")
    formal = {v for params in phi.formal_args for v in params}
    if system_free_vars(phi) - formal:
        raise ValueError("abstract iteration needs a system without free individual variables")
    domains = [ma.domain(k) for _, k in phi.predvars]
    current = tuple(d.bottom for d in domains)
    step = _abstract_step(ma, phi, domains)
    for _ in range(cap):
        nxt = step(current)
        if nxt == current:
            return current
        current = nxt
    raise NonTerminatingChain(f"abstract chain did not stabilize within {cap} iterations")


def _abstract_step(ma, phi, domains):
    if ma.base is None:
        def step(current):
            spaces = dict(zip(phi.names, current))
            return tuple(affine.component_image(c, params, spaces)
                         for c, params in zip(phi.components, phi.formal_args))
        return step
    ev = Evaluator(ma.base)

    def step(current):
        env_pvs = {n: frozenset(d.gamma(e)) for n, d, e in zip(phi.names, domains, current)}
        out = []
        for d, comp, params in zip(domains, phi.components, phi.formal_args):
            concrete = _satisfying(ev, comp, params, env_pvs)
            out.append(d.alpha(concrete))
        return tuple(out)
    return step


def _satisfying(ev: Evaluator, comp, params, pvs) -> frozenset:
    fn = ev.compile(comp)
    return frozenset(t for t in ev.M.tuples(len(params)) if fn(dict(zip(params, t)), pvs))


def abstract_models(ma: ModelAbstraction, fe: FormulaEquation) -> bool:
    """(M,G) ⊨^a ∃X̄ψ: some tuple of abstract elements whose concretizations satisfy ψ."""
    if ma.base is None:
        raise CarrierNotEnumerable("the affine domain cannot be enumerated")
    M = ma.base
    if not fe.predvars:
        return eval_formula(M, None, fe.matrix())
    gp = ground(M, fe)
    per_pv = []
    for j, (name, k) in enumerate(fe.predvars):
        d = ma.domain(k)
        masks = []
        for e in d.elements():
            m = 0
            for tup in d.gamma(e):
                m |= 1 << gp.index[(j, tup)]
            masks.append(m)
        per_pv.append(np.array(sorted(set(masks)), dtype=np.int64))
    combined = per_pv[0]
    for arr in per_pv[1:]:
        combined = (combined[:, None] | arr[None, :]).ravel()
        if len(combined) > 1 << 24:
            raise CarrierNotEnumerable("joint abstract carrier too large to enumerate")
    return bool(satisfied_masks(gp, combined).any())


def concretize(ma: ModelAbstraction, names: Sequence[str], arities: Sequence[int], elements: Sequence) -> RelationTuple:
    return RelationTuple(tuple(names), tuple(frozenset(ma.domain(k).gamma(e)) for k, e in zip(arities, elements)))


def abstract_holds_with(ma: ModelAbstraction, fe: FormulaEquation, elements: Sequence) -> bool:
    """Evaluate ψ with each predicate variable read as gamma of the given element."""
    rels = concretize(ma, fe.names, [k for _, k in fe.predvars], elements)
    return holds_with(ma.base, fe, rels)


# --------------------------------------------------------- Galois check


@dataclass
class GaloisReport:
    ok: bool
    checked: int
    violations: list = field(default_factory=list)  # (law, detail) pairs

    @property
    def first(self):
        return self.violations[0] if self.violations else None


def _sample(items: list, limit: int, rng: random.Random) -> list:
    return items if len(items) <= limit else rng.sample(items, limit)


def check_galois(ad: AbstractDomain, samples: Sequence | None = None, elements: Sequence | None = None,
                 limit: int = 48, seed: int = 0, stop_at_first: bool = False) -> GaloisReport:
    """Check the Galois condition, monotonicity of alpha and gamma, and lattice laws.

    Concrete sets default to every subset of M^k for finite carriers.
    Large carriers are sampled with a fixed seed.
    """
    rng = random.Random(seed)
    if samples is None:
        if not isinstance(ad, (SetDomain, TableDomain)):
            raise CarrierNotEnumerable("concrete samples are required for this domain")
        positions = ad.M.tuples(ad.arity)
        if len(positions) <= 10:
            samples = [frozenset(p for i, p in enumerate(positions) if m >> i & 1) for m in range(1 << len(positions))]
        else:
            samples = [frozenset(p for p in positions if rng.random() < 0.5) for _ in range(limit)]
    samples = _sample(list(samples), limit * 4, rng)
    if elements is None:
        try:
            elements = ad.elements()
        except CarrierNotEnumerable:
            elements = [ad.alpha(X) for X in samples] + [ad.bottom, ad.top]
    elements = _sample(list(elements), limit, rng)
    violations: list = []
    checked = 0

    def fail(law, detail):
        violations.append((law, detail))
        return stop_at_first

    for X in samples:
        aX = ad.alpha(X)
        for Y in elements:
            checked += 1
            sub = ad.concrete_subset(X, Y)
            below = ad.leq(aX, Y)
            if sub and not below and fail("X ⊆ γ(Y) implies α(X) ⊑ Y", (X, Y)):
                return GaloisReport(False, checked, violations)
            if below and not sub and fail("α(X) ⊑ Y implies X ⊆ γ(Y)", (X, Y)):
                return GaloisReport(False, checked, violations)
    for X, X2 in itertools.product(samples, repeat=2):
        if set(X) <= set(X2):
            checked += 1
            if not ad.leq(ad.alpha(X), ad.alpha(X2)) and fail("alpha monotone", (X, X2)):
                return GaloisReport(False, checked, violations)
    for a, b in itertools.product(elements, repeat=2):
        checked += 1
        if ad.leq(a, b) and not ad.concrete_subset(_as_points(ad, a), b) and fail("gamma monotone", (a, b)):
            return GaloisReport(False, checked, violations)
        for law, ok in _pair_laws(ad, a, b):
            if not ok and fail(law, (a, b)):
                return GaloisReport(False, checked, violations)
    triples = _sample(list(itertools.product(elements, repeat=3)), limit * 4, rng)
    for a, b, c in triples:
        checked += 1
        if ad.join(ad.join(a, b), c) != ad.join(a, ad.join(b, c)) and fail("join associative", (a, b, c)):
            return GaloisReport(False, checked, violations)
        if ad.meet(ad.meet(a, b), c) != ad.meet(a, ad.meet(b, c)) and fail("meet associative", (a, b, c)):
            return GaloisReport(False, checked, violations)
    return GaloisReport(not violations, checked, violations)


def _as_points(ad: AbstractDomain, a):
    """Points of gamma(a) usable as a concrete set (a spanning sample for affine spaces)."""
    if isinstance(ad, AffineDomain):
        if a.is_empty:
            return []
        return [a.point] + [tuple(p + d for p, d in zip(a.point, v)) for v in a.directions]
    return ad.gamma(a)


def _pair_laws(ad: AbstractDomain, a, b):
    yield "join commutative", ad.join(a, b) == ad.join(b, a)
    yield "meet commutative", ad.meet(a, b) == ad.meet(b, a)
    yield "absorption join-meet", ad.join(a, ad.meet(a, b)) == a
    yield "absorption meet-join", ad.meet(a, ad.join(a, b)) == a
    yield "bottom neutral", ad.join(a, ad.bottom) == a
    yield "top neutral", ad.meet(a, ad.top) == a
    yield "join is an upper bound", ad.leq(a, ad.join(a, b)) and ad.leq(b, ad.join(a, b))

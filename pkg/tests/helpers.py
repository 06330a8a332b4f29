"""Fixture structures, formula-equation generators and the program corpus."""
from __future__ import annotations

import json
import random
from pathlib import Path

from hornfix.clauses import ConstrainedClause, FormulaEquation, parse_lang
from hornfix.formula import (
    App,
    Atom,
    Const,
    Eq,
    PredVarAtom,
    Signature,
    Var,
    conj,
    neg,
    read_sexpr,
)
from hornfix.semantics import FiniteStructure, all_structures

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


def fixture_structure(name: str) -> FiniteStructure:
    return FiniteStructure.from_json(json.loads(fixture_text(name)))


def lang(text: str) -> Signature:
    return parse_lang(read_sexpr(text))


# ------------------------------------------------------------ structures


def nat_sat(n: int, times: bool = False) -> FiniteStructure:
    """{0..n} with successor and addition clipped at n."""
    funs = {"s": (1, lambda x: min(x + 1, n)), "plus": (2, lambda a, b: min(a + b, n))}
    if times:
        funs["times"] = (2, lambda a, b: min(a * b, n))
    return FiniteStructure.build(
        n + 1, {"0": 0}, funs, {"lt": (2, lambda a, b: a < b), "leq": (2, lambda a, b: a <= b)}
    )


def zmod(n: int) -> FiniteStructure:
    """Z_n with wrap-around successor, addition and multiplication; lt/leq on representatives."""
    return FiniteStructure.build(
        n,
        {"0": 0},
        {"s": (1, lambda x: (x + 1) % n), "plus": (2, lambda a, b: (a + b) % n),
         "times": (2, lambda a, b: (a * b) % n)},
        {"lt": (2, lambda a, b: a < b), "leq": (2, lambda a, b: a <= b)},
    )


SUCC_SIG = Signature(frozenset({"0"}), {"s": 1}, {})
PRED_SIG = Signature(frozenset({"0"}), {}, {"P": 1})


def fixture_structures(sig: Signature, max_size: int = 3) -> list[FiniteStructure]:
    return [M for size in range(1, max_size + 1) for M in all_structures(sig, size)]


# ------------------------------------------------------------ generators

ARITY_SHAPES = [(1,), (2,), (1, 1), (2, 1)]  # at most 12 relation positions over size 3


def _random_term(rng: random.Random, sig: Signature, variables: list[str], depth: int = 2):
    options = [Var(v) for v in variables] + [Const("0")]
    if "s" in sig.functions and depth > 0 and rng.random() < 0.4:
        return App("s", (_random_term(rng, sig, variables, depth - 1),))
    return rng.choice(options)


def _random_literal(rng: random.Random, sig: Signature, variables: list[str]):
    if "P" in sig.predicates and rng.random() < 0.5:
        f = Atom("P", (_random_term(rng, sig, variables),))
    else:
        f = Eq(_random_term(rng, sig, variables), _random_term(rng, sig, variables))
    return neg(f) if rng.random() < 0.3 else f


def random_clause(rng, sig, predvars, max_body=2, max_head=1, require_head=False, require_body=False):
    variables = ["u", "v"][: rng.randint(1, 2)]
    lits = [_random_literal(rng, sig, variables) for _ in range(rng.randint(0, 2))]
    constraint = conj(*lits)
    n_body = rng.randint(1 if require_body else 0, max_body)
    n_head = max_head if require_head else rng.randint(0, max_head)

    def atom():
        name, k = rng.choice(predvars)
        return PredVarAtom(name, tuple(_random_term(rng, sig, variables) for _ in range(k)))

    body = tuple(atom() for _ in range(n_body))
    head = tuple(atom() for _ in range(n_head))
    return ConstrainedClause(constraint, body, head)


def random_horn_fe(rng: random.Random, sig: Signature, linear: bool = False) -> FormulaEquation:
    shape = rng.choice(ARITY_SHAPES)
    predvars = [(name, k) for name, k in zip(("X", "Y"), shape)]
    max_body = 1 if linear else 2
    clauses = [random_clause(rng, sig, predvars, max_body=0, require_head=True)]
    for _ in range(rng.randint(1, 3)):
        clauses.append(random_clause(rng, sig, predvars, max_body=max_body))
    return FormulaEquation(sig, tuple(predvars), tuple(clauses))


def generated_horn_fes(n_per_sig: int = 30, seed: int = 20240617, linear: bool = False):
    rng = random.Random(seed)
    out = []
    for sig in (SUCC_SIG, PRED_SIG):
        for _ in range(n_per_sig):
            out.append((sig, random_horn_fe(rng, sig, linear)))
    return out


# --------------------------------------------------------- program corpus

IMP_LANG = "(lang (const 0) (fun s 1) (fun plus 2) (pred lt 2) (pred leq 2))"

# (name, triple text, structures); every run terminates or provably diverges within fuel 50
CORPUS = [
    ("skip-true", "{(eq x 0)} skip {(eq x 0)}", ["z3", "sat2"]),
    ("skip-false", "{(eq x 0)} skip {(eq x (s 0))}", ["z3"]),
    ("assign-succ", "{(eq x 0)} x := s(x) {(eq x (s 0))}", ["z3", "sat2", "z2"]),
    ("assign-wrong", "{true} x := s(x) {(not (eq x 0))}", ["z3", "sat2"]),
    ("assign-two", "{(eq x y)} x := plus(x, y) ; y := plus(y, y) {(eq x y)}", ["z3", "sat2"]),
    ("swap", "{(and (eq x 0) (eq y (s 0)))} t := x ; x := y ; y := t {(and (eq x (s 0)) (eq y 0))}", ["z2"]),
    ("if-abs", "{true} if (eq x 0) then x := s(0) else skip fi {(not (eq x 0))}", ["z3", "sat2"]),
    ("if-wrong", "{true} if (eq x 0) then skip else x := 0 fi {(eq x (s 0))}", ["z3"]),
    ("if-max", "{true} if lt(x, y) then x := y else skip fi {(leq y x)}", ["z3", "sat2"]),
    ("loop-count", "{(eq x 0)} while lt(x, s(s(0))) do x := s(x) od {(eq x (s (s 0)))}", ["z3", "sat2"]),
    ("loop-count-annot",
     "{(eq x 0)} while lt(x, s(s(0))) invariant (leq x (s (s 0))) do x := s(x) od {(eq x (s (s 0)))}",
     ["z3", "sat2"]),
    ("loop-wrong-post", "{(eq x 0)} while lt(x, s(0)) do x := s(x) od {(eq x 0)}", ["z3"]),
    ("loop-diverge", "{(eq x 0)} while true do skip od {false}", ["z3", "z2"]),
    ("loop-diverge-annot", "{(eq x 0)} while true invariant true do skip od {false}", ["z3"]),
    ("loop-wrap", "{true} while (not (eq x 0)) do x := s(x) od {(eq x 0)}", ["z3", "z2"]),
    ("loop-sat-diverge", "{true} while (not (eq x 0)) do x := s(x) od {(eq x 0)}", ["sat2"]),
    ("loop-two-vars", "{(eq y 0)} while lt(y, x) do y := s(y) od {(eq x y)}", ["sat2", "z3"]),
    ("loop-two-vars-annot",
     "{(eq y 0)} while lt(y, x) invariant (leq y x) do y := s(y) od {(eq x y)}", ["sat2", "z3"]),
    ("loop-bad-annot", "{(eq x 0)} while lt(x, s(s(0))) invariant (eq x 0) do x := s(x) od {(eq x (s (s 0)))}",
     ["z3"]),
    ("seq-loop", "{true} x := 0 ; while lt(x, s(0)) do x := s(x) od {(eq x (s 0))}", ["z3", "sat2"]),
    ("nested-if-loop",
     "{true} while lt(x, s(s(0))) do if (eq x 0) then x := s(s(0)) else x := s(x) fi od {(leq (s (s 0)) x)}",
     ["sat2", "z3"]),
    ("double-loop",
     "{(eq x 0)} while lt(x, s(0)) do x := s(x) od ; while lt(x, s(s(0))) do x := s(x) od {(eq x (s (s 0)))}",
     ["sat2", "z3"]),
    ("ghost-var", "{(eq x g)} x := s(x) {(not (eq x g))}", ["z3", "sat2"]),
    ("seq-loop-annot",
     "{true} x := 0 ; while lt(x, s(0)) invariant (leq x (s 0)) do x := s(x) od {(eq x (s 0))}", ["z3", "sat2"]),
    ("nested-if-loop-annot",
     "{true} while lt(x, s(s(0))) invariant true do if (eq x 0) then x := s(s(0)) else x := s(x) fi od "
     "{(leq (s (s 0)) x)}", ["sat2", "z3"]),
    ("double-loop-annot",
     "{(eq x 0)} while lt(x, s(0)) invariant (leq x (s 0)) do x := s(x) od ; "
     "while lt(x, s(s(0))) invariant (and (leq (s 0) x) (leq x (s (s 0)))) do x := s(x) od {(eq x (s (s 0)))}",
     ["sat2", "z3"]),
    ("double-loop-weak-annot",
     "{(eq x 0)} while lt(x, s(0)) invariant true do x := s(x) od ; "
     "while lt(x, s(s(0))) invariant true do x := s(x) od {(eq x (s (s 0)))}", ["sat2", "z3"]),
]


def corpus_structure(name: str) -> FiniteStructure:
    return {"z2": zmod(2), "z3": zmod(3), "sat2": nat_sat(2), "sat1": nat_sat(1)}[name]


def corpus_triples():
    from hornfix.imp import parse_triple

    for name, text, structures in CORPUS:
        yield name, parse_triple(IMP_LANG + " " + text), [(s, corpus_structure(s)) for s in structures]


# ----------------------------------------------------------- sip fixtures

SIP_FILES = ["sip_shift.sip", "sip_factorial.sip", "sip_degenerate.sip", "sip_two_steps.sip"]

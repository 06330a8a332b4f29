import itertools
import random
import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from helpers import (  # noqa: E402
    PRED_SIG,
    SUCC_SIG,
    fixture_structure,
    fixture_structures,
    fixture_text,
    nat_sat,
    random_clause,
    random_horn_fe,
)
from strategies import PVS, SIG, environment, formulas, relation, structures  # noqa: E402
from hornfix.clauses import FormulaEquation, build_phi, parse_feq  # noqa: E402
from hornfix.formula import Signature, parse_formula  # noqa: E402
from hornfix.semantics import (  # noqa: E402
    BudgetExceeded,
    Environment,
    Evaluator,
    FiniteStructure,
    MissingInterpretation,
    PositivityError,
    all_solutions,
    enumeration_budget,
    eval_formula,
    eval_so,
    ground,
    least_solution_bruteforce,
    lfp_iterate,
    lfp_stages,
    satisfying_tuples,
    search_solution,
    solution_masks,
    unfold_sigma,
)

GRAPH = Signature(frozenset(), {}, {"E": 2})
PATH = fixture_structure("path3.json")
CYCLE = fixture_structure("cycle2.json")
REACH = parse_feq(fixture_text("reach.feq"))
TC_TEXT = "(lfp R ((R (a b) (or (E a b) (exists (c) (and (R a c) (E c b)))))) ({} {}))"


def tc_oracle(M):
    """Transitive closure of E by Floyd-Warshall."""
    reach = {(a, b) for (a, b) in M.preds["E"]}
    for k in range(M.size):
        for a in range(M.size):
            for b in range(M.size):
                if (a, k) in reach and (k, b) in reach:
                    reach.add((a, b))
    return frozenset(reach)


# -------------------------------------------------------------- evaluator


def test_trivial_truths():
    M = nat_sat(2)
    assert eval_formula(M, None, parse_formula("true", SIG))
    assert not eval_formula(M, None, parse_formula("(exists (x) false)", SIG))
    assert eval_formula(M, Environment({"x": 1}), parse_formula("(eq (s x) (s (s 0)))", M.signature()))


def test_exists_so_example():
    f = parse_formula("(so-exists (X 1) (and (X 0) (not (X (s 0)))))", SUCC_SIG)
    two = FiniteStructure.build(2, {"0": 0}, {"s": (1, lambda x: (x + 1) % 2)})
    one = FiniteStructure.build(1, {"0": 0}, {"s": (1, lambda x: 0)})
    assert eval_formula(two, None, f)
    assert not eval_formula(one, None, f)
    assert oracles.naive_eval(two, f, {}, {}) and not oracles.naive_eval(one, f, {}, {})


def test_missing_interpretation():
    M = FiniteStructure(2)
    with pytest.raises(MissingInterpretation):
        eval_formula(M, None, parse_formula("(exists (x) (P x))", PRED_SIG))
    with pytest.raises(MissingInterpretation):
        eval_formula(M, None, parse_formula("(exists (x) (X x))", GRAPH, {"X": 1}))


@given(st.data(), formulas())
@settings(max_examples=300, deadline=None)
def test_evaluator_matches_naive(data, f):
    M = data.draw(structures())
    env = environment(data.draw, M.size)
    rel = relation(data.draw, M.size, 1)
    got = Evaluator(M).truth(f, env, {"X": rel})
    assert got == oracles.naive_eval(M, f, env, {"X": rel})


@given(st.data(), formulas(with_pv=True, max_leaves=4))
@settings(max_examples=100, deadline=None)
def test_second_order_quantifiers_match_naive(data, f):
    from hornfix.formula import ExistsSO, ForallSO

    M = data.draw(structures(max_size=2))
    env = environment(data.draw, M.size)
    g = ExistsSO("X", 1, f) if data.draw(st.booleans()) else ForallSO("X", 1, f)
    assert Evaluator(M).truth(g, env, {}) == oracles.naive_eval(M, g, env, {})


def test_structure_validation_and_json():
    with pytest.raises(ValueError):
        FiniteStructure(0)
    with pytest.raises(ValueError):
        FiniteStructure(2, {"0": 2})
    with pytest.raises(ValueError):
        FiniteStructure.from_json({"size": 2, "funs": {"s": [1, 5]}})
    with pytest.raises(ValueError):
        FiniteStructure.from_json({"size": 2, "preds": {"E": [[0, 3]]}})
    M = nat_sat(3)
    assert FiniteStructure.from_json(M.to_json()) == M


def test_satisfying_tuples():
    M = nat_sat(4)
    f = parse_formula("(exists (w) (eq v (plus w w)))", M.signature())
    assert satisfying_tuples(M, f, ("v",)) == {(0,), (2,), (4,)}


# ------------------------------------------------------ least fixed points


def test_path_graph_lfp():
    tc = parse_formula(TC_TEXT.format("x", "y"), GRAPH)
    assert eval_formula(PATH, Environment({"x": 0, "y": 2}), tc)
    assert not eval_formula(PATH, Environment({"x": 2, "y": 0}), tc)
    mu = lfp_iterate(PATH, build_phi(REACH))
    assert mu["R"] == {(0, 1), (1, 2), (0, 2)} == tc_oracle(PATH)


@pytest.mark.parametrize("size", [1, 2, 3])
def test_tc_against_floyd_warshall(size):
    for M in itertools.islice((M for M in fixture_structures(GRAPH, size) if M.size == size), 0, 200):
        assert lfp_iterate(M, build_phi(REACH))["R"] == tc_oracle(M)


def walks_by_parity(M, max_len):
    """(odd, even-positive) endpoint pairs of E-walks up to max_len edges."""
    step = M.preds["E"]
    odd, even, current = set(), set(), set(step)
    for length in range(1, max_len + 1):
        (odd if length % 2 else even).update(current)
        current = {(a, c) for (a, b) in current for (b2, c) in step if b == b2}
    return frozenset(odd), frozenset(even)


def test_odd_even_on_cycle():
    fe = parse_feq(fixture_text("odd_even.feq"))
    for M in (CYCLE, PATH):
        mu = lfp_iterate(M, build_phi(fe))
        odd, even = walks_by_parity(M, 2 * M.size * M.size + 2)
        assert (mu["R"], mu["S"]) == (odd, even)
    assert lfp_iterate(CYCLE, build_phi(fe))["S"] == {(0, 0), (1, 1)}


def test_stages_match_naive_and_are_increasing():
    for fixture in ("reach.feq", "odd_even.feq", "parity.feq"):
        fe = parse_feq(fixture_text(fixture))
        phi = build_phi(fe)
        Ms = [PATH, CYCLE] if fe.sig == GRAPH else [nat_sat(3), nat_sat(5)]
        for M in Ms:
            got = [tuple(s.rels) for s in lfp_stages(M, phi)]
            assert got == oracles.naive_stages(M, phi)
            assert all(a.leq(b) for a, b in zip(lfp_stages(M, phi), lfp_stages(M, phi)[1:]))


def test_non_positive_system_rejected():
    from hornfix.formula import PhiSystem

    bad = PhiSystem((("X", 1),), (parse_formula("(not (X x))", PRED_SIG, {"X": 1}),), (("x",),))
    with pytest.raises(PositivityError):
        lfp_iterate(nat_sat(1), bad)


# ----------------------------------------------------------- σ unfolding


def test_sigma_one_running_example():
    fe = parse_feq(fixture_text("running_example.feq"))
    (sigma1,) = unfold_sigma(build_phi(fe), 1)
    for n in range(2, 7):
        M = nat_sat(n)
        assert satisfying_tuples(M, sigma1, ("x",)) == {(2,)}
    (sigma0,) = unfold_sigma(build_phi(fe), 0)
    assert satisfying_tuples(nat_sat(3), sigma0, ("x",)) == frozenset()


@pytest.mark.parametrize("l", range(6))
def test_sigma_levels_match_stages(l):
    phi = build_phi(REACH)
    stages = oracles.naive_stages(PATH, phi)
    expected = stages[min(l, len(stages) - 1)][0]
    (level,) = unfold_sigma(phi, l)
    assert satisfying_tuples(PATH, level, phi.formal_args[0]) == expected


# --------------------------------------------------- solution enumeration


def _small_cases(seed, general=False, n=25):
    rng = random.Random(seed)
    out = []
    for sig in (SUCC_SIG, PRED_SIG):
        for _ in range(n):
            fe = random_horn_fe(rng, sig)
            if general:
                extra = random_clause(rng, sig, list(fe.predvars), max_body=1, max_head=2)
                fe = fe.with_clauses(fe.clauses + (extra,))
            out.append(fe)
    return out


@pytest.mark.parametrize("general", [False, True])
def test_all_solutions_match_naive(general):
    for fe in _small_cases(3, general, n=10):
        for M in fixture_structures(fe.sig, 2):
            got = {tuple(r.rels) for r in all_solutions(M, fe)}
            assert got == set(oracles.naive_solutions(M, fe))
            assert eval_so(M, fe) == bool(got)


@pytest.mark.parametrize("general", [False, True])
def test_search_matches_enumeration(general):
    for fe in _small_cases(5, general):
        for M in fixture_structures(fe.sig, 3):
            gp = ground(M, fe)
            mask = search_solution(gp)
            exhaustive = solution_masks(gp, stop_at_first=True)
            assert (mask is not None) == (len(exhaustive) > 0)
            if mask is not None:
                assert gp.satisfied(mask)


def test_eval_so_falls_back_to_search_beyond_budget():
    acyclic = REACH.with_clauses(REACH.clauses + parse_feq(
        "(feq (lang (pred E 2)) (predvars (R 2)) (clause (vars u) (body (R u u))))").clauses)
    path = FiniteStructure(5, preds={"E": {(i, i + 1) for i in range(4)}})
    cycle = FiniteStructure(5, preds={"E": {(i, (i + 1) % 5) for i in range(5)}})
    with pytest.raises(BudgetExceeded):
        ground(path, acyclic)
    assert eval_so(path, acyclic)
    assert not eval_so(cycle, acyclic)


def test_unsat_fixture():
    fe = parse_feq(fixture_text("unsat.feq"))
    for M in fixture_structures(fe.sig, 3):
        assert not eval_so(M, fe)
        assert least_solution_bruteforce(M, fe) is None


def test_least_solution_bruteforce_examples():
    fe = parse_feq(fixture_text("running_example.feq"))
    assert least_solution_bruteforce(nat_sat(4), fe)["X"] == {(2,), (4,)}
    assert least_solution_bruteforce(nat_sat(3), fe) is None  # 2+2 clips to 3
    for n in range(2, 7):
        M = nat_sat(n)
        least = least_solution_bruteforce(M, fe)
        assert least == (lfp_iterate(M, build_phi(fe)) if eval_so(M, fe) else None)
    empty = FormulaEquation(SUCC_SIG, (("X", 1),), ())
    assert least_solution_bruteforce(nat_sat(2), empty)["X"] == frozenset()


# --------------------------------------------------------------- budgets


def test_budget_errors(monkeypatch):
    f = parse_formula("(so-exists (X 2) (X 0 0))", SUCC_SIG)
    M = nat_sat(4)
    with pytest.raises(BudgetExceeded):
        eval_formula(M, None, f)
    assert eval_formula(M, None, f, budget=25)
    monkeypatch.setenv("HORNFIX_BUDGET", "30")
    assert enumeration_budget() == 30
    assert eval_formula(M, None, f)
    monkeypatch.setenv("HORNFIX_BUDGET", "lots")
    with pytest.raises(ValueError):
        enumeration_budget()


def test_strategy_signature_is_stable():
    assert set(PVS) == {"X"} and "E" in SIG.predicates

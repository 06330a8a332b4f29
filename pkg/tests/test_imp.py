import sys
from pathlib import Path

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from helpers import IMP_LANG, fixture_structure, fixture_text, lang, nat_sat, zmod  # noqa: E402
from hornfix.clauses import Kind, classify_clause  # noqa: E402
from hornfix.formula import (  # noqa: E402
    FALSE,
    TRUE,
    App,
    Atom,
    Const,
    Eq,
    Not,
    ParseError,
    Polarity,
    PredVarAtom,
    Var,
    parse_formula,
    parse_term,
    polarity,
)
from hornfix.imp import (  # noqa: E402
    BOTTOM,
    FUEL_EXHAUSTED,
    Assign,
    HoareTriple,
    If,
    IndeterminateRun,
    InvariantClassError,
    MissingAnnotation,
    Seq,
    Skip,
    While,
    check_hoare_calculus,
    check_hoare_semantic,
    interpret,
    parse_program,
    parse_triple,
    print_program,
    print_triple,
    sp_lfp,
    sp_set,
    vc_holds_with_annotations,
    vcgen,
    vcgen_full,
    wp_lfp,
    wp_set,
)
from hornfix.semantics import eval_so  # noqa: E402

SIG = lang(IMP_LANG)
Z3, Z5 = zmod(3), fixture_structure("z5.json")
x, y = Var("x"), Var("y")


def F(text):
    return parse_formula(text, SIG)


def T(text):
    return parse_term(text, SIG)


def triple(text):
    return parse_triple(IMP_LANG + " " + text)


# -------------------------------------------------------------- parsing


def test_parse_program_examples():
    assert parse_program("skip", SIG) == Skip()
    assert parse_program("x := plus(x, s(0)) ; skip", SIG) == Seq(Assign("x", T("(plus x (s 0))")), Skip())
    w = parse_program("while lt(x, s(s(0))) invariant (leq x s(s(0))) do x := s(x) od", SIG)
    assert w == While(F("(lt x (s (s 0)))"), Assign("x", T("(s x)")), F("(leq x (s (s 0)))"))
    assert parse_program("if (eq x 0) then skip else x := 0 fi", SIG) == If(F("(eq x 0)"), Skip(), Assign("x", T("0")))


def test_sequence_is_right_nested():
    p = parse_program("skip ; skip ; x := 0", SIG)
    assert p == Seq(Skip(), Seq(Skip(), Assign("x", T("0"))))


def test_parse_errors():
    for bad in ("x :=", "while (eq x 0) do skip", "if (eq x 0) then skip fi", "0 := x", "skip skip",
                "while (exists (u) (eq x u)) do skip od", "while (X x) do skip od"):
        with pytest.raises(ParseError):
            parse_program(bad, SIG)
    with pytest.raises(ParseError):
        parse_triple(IMP_LANG + " {true} skip")


@pytest.mark.parametrize("text", [
    "{(eq x 0)} while lt(x, s(s(0))) invariant (leq x (s (s 0))) do x := s(x) od {(eq x (s (s 0)))}",
    "{true} if (eq x 0) then x := s(0) else skip fi ; y := plus(x, y) {(not (eq x 0))}",
])
def test_print_round_trip(text):
    t = triple(text)
    again = parse_triple(IMP_LANG + " " + print_triple(t))
    assert again == t
    assert parse_program(print_program(t.prog), SIG) == t.prog


# ---------------------------------------------------------- interpreter


def test_interpreter_examples():
    assert interpret(Z3, Skip(), {"x": 2}) == {"x": 2}
    assert interpret(Z3, While(TRUE, Skip()), {"x": 0}) is BOTTOM
    assert interpret(Z5, Assign("x", T("(plus x (s 0))")), {"x": 2}) == {"x": 3}
    assert interpret(Z5, Assign("x", T("(plus x (s 0))")), {"x": 4}) == {"x": 0}


def test_fuel_exhaustion_is_distinct_from_divergence():
    count = parse_program("while lt(x, s(s(s(s(0))))) do x := s(x) od", SIG)
    assert interpret(Z5, count, {"x": 0}, fuel=2) is FUEL_EXHAUSTED
    assert interpret(Z5, count, {"x": 0}, fuel=4) == {"x": 4}
    assert interpret(Z5, While(TRUE, Skip()), {"x": 0}, fuel=0) is FUEL_EXHAUSTED
    assert interpret(Z5, While(TRUE, Skip()), {"x": 0}, fuel=1) is BOTTOM
    t = HoareTriple(TRUE, count, F("(eq x (s (s (s (s 0)))))"), SIG)
    report = check_hoare_semantic(Z5, t, fuel=2)
    assert report.holds is None and report.exhausted
    assert check_hoare_semantic(Z5, t).holds is True
    with pytest.raises(IndeterminateRun):
        wp_set(Z5, count, TRUE, fuel=2)


# ------------------------------------------------------- semantic checks


def test_semantic_examples():
    assert check_hoare_semantic(Z3, triple("{false} x := s(x) {(eq x 0)}"))
    assert check_hoare_semantic(Z3, triple("{(eq x 0)} while true do skip od {false}"))
    assert check_hoare_semantic(Z3, triple("{(eq x 0)} x := plus(x, s(0)) {(eq x (s 0))}"))
    failing = check_hoare_semantic(Z3, triple("{true} x := s(x) {(not (eq x 0))}"))
    assert failing.holds is False and failing.counterexample == {"x": 2}


def test_wp_sp_examples():
    inc = Assign("x", T("(plus x (s 0))"))
    psi = F("(eq x 0)")
    assert wp_set(Z3, Skip(), psi) == {(0,)}
    assert wp_set(Z3, While(TRUE, Skip()), psi) == {(0,), (1,), (2,)}
    assert wp_set(Z3, inc, psi) == {(2,)}
    assert sp_set(Z3, Skip(), psi) == {(0,)}
    assert sp_set(Z3, inc, FALSE) == frozenset()
    assert sp_set(Z3, inc, psi) == {(1,)}
    for p in (Skip(), While(TRUE, Skip()), inc):
        assert wp_lfp(Z3, p, psi, sig=SIG) == wp_set(Z3, p, psi, variables=("x",))
        assert sp_lfp(Z3, p, psi, sig=SIG) == sp_set(Z3, p, psi, variables=("x",))


# ------------------------------------------------------------- vcgen


def test_vcgen_skip_and_assign():
    fe = vcgen(triple("{(eq x 0)} skip {(eq x 0)}"))
    assert fe.predvars == () and len(fe.clauses) == 1
    (c,) = fe.clauses
    assert not c.body and not c.head
    fe = vcgen(triple("{(eq x 0)} x := s(x) {(eq x (s 0))}"))
    (c,) = fe.clauses
    assert c.constraint == parse_formula("(and (eq x 0) (not (eq (s x) (s 0))))", SIG)
    assert oracles.naive_eval(Z3, fe.matrix(), {}, {})


def test_vcgen_while_shape():
    vc = vcgen_full(parse_triple(fixture_text("loop_count.triple")))
    fe = vc.fe
    assert len(vc.fresh) == 1 and fe.predvars == ((vc.fresh[0], 1),)
    roles = sorted(classify_clause(c).role.value for c in fe.clauses)
    assert len(fe.clauses) == 3 and len(set(roles)) == 3
    assert all(classify_clause(c).kind is Kind.LINEAR_HORN for c in fe.clauses)


@pytest.mark.parametrize("text", [
    "{(eq x 0)} while lt(x, s(0)) do x := s(x) od ; while lt(x, s(s(0))) do x := s(x) od {(eq x (s (s 0)))}",
    "{true} while lt(x, s(s(0))) do if (eq x 0) then x := s(s(0)) else x := s(x) fi od {(leq (s (s 0)) x)}",
    "{true} x := 0 ; y := s(x) ; if lt(x, y) then skip else x := y fi {(leq x y)}",
])
def test_vcgen_is_linear_horn(text):
    fe = vcgen(triple(text))
    assert fe.is_linear_horn()


def test_pre_negative_post_positive():
    X, Y = PredVarAtom("P", (x,)), PredVarAtom("Q", (x,))
    prog = parse_program("while lt(x, s(s(0))) do if (eq x 0) then x := s(x) else skip fi od ; x := s(x)", SIG)
    fe = vcgen(HoareTriple(X, prog, Y, SIG))
    m = fe.matrix()
    assert polarity(m, "P") is Polarity.NEGATIVE
    assert polarity(m, "Q") is Polarity.POSITIVE


# -------------------------------------------------------------- calculus


def test_calculus_z5_example():
    t = parse_triple(fixture_text("loop_count.triple"))
    assert check_hoare_calculus(Z5, t)
    assert vc_holds_with_annotations(Z5, t)
    assert check_hoare_semantic(Z5, t)


def test_calculus_reports_failing_side_condition():
    t = triple("{(eq x 0)} while lt(x, s(s(0))) invariant (eq x 0) do x := s(x) od {(eq x (s (s 0)))}")
    report = check_hoare_calculus(Z5, t)
    assert not report
    assert report.failures[0][0] == "assign+consequence"
    assert not vc_holds_with_annotations(Z5, t)


def test_calculus_missing_annotation():
    t = triple("{(eq x 0)} while lt(x, s(0)) do x := s(x) od {(eq x (s 0))}")
    with pytest.raises(MissingAnnotation):
        check_hoare_calculus(Z5, t)
    with pytest.raises(MissingAnnotation):
        vc_holds_with_annotations(Z5, t)


def test_calculus_linear_class():
    t = parse_triple(fixture_text("loop_linear.triple"))
    assert check_hoare_calculus(None, t, "LinearEq")
    wrong = parse_triple("(lang affine) {(eq x 0)} while (not (eq x 3)) invariant (or (eq x x) (eq x 1)) "
                         "do x := plus(x, 1) od {(eq x 3)}")
    with pytest.raises(InvariantClassError):
        check_hoare_calculus(None, wrong, "LinearEq")
    assert check_hoare_calculus(None, wrong, "All")
    broken = parse_triple("(lang affine) {(eq x 0)} while (not (eq x 10)) invariant (eq y x) "
                          "do x := plus(x, 1) ; y := plus(y, 2) od {(eq y 20)}")
    report = check_hoare_calculus(None, broken, "LinearEq")
    assert not report and report.failures[0][2] is not None


# ------------------------------------------------ random programs vs oracles

NAMES = ("x", "y")
_terms = st.sampled_from([Const("0"), x, y, App("s", (x,)), App("s", (y,)), App("plus", (x, y))])
_conds = st.one_of(
    st.tuples(_terms, _terms).map(lambda ab: Eq(*ab)),
    st.tuples(_terms, _terms).map(lambda ab: Atom("lt", ab)),
    st.tuples(_terms, _terms).map(lambda ab: Not(Atom("leq", ab))),
    st.just(TRUE),
)


def _programs():
    base = st.one_of(st.just(Skip()), st.tuples(st.sampled_from(NAMES), _terms).map(lambda vt: Assign(*vt)))
    return st.recursive(base, lambda sub: st.one_of(
        st.tuples(sub, sub).map(lambda ab: Seq(*ab)),
        st.tuples(_conds, sub, sub).map(lambda c: If(*c)),
        st.tuples(_conds, sub).map(lambda c: While(*c)),
    ), max_leaves=5)


STRUCTURES = {"z2": zmod(2), "z3": Z3, "sat1": nat_sat(1)}


@given(_programs(), _conds, st.sampled_from(sorted(STRUCTURES)))
@settings(max_examples=120, deadline=None)
def test_random_programs_against_denotation(p, cond, sname):
    M = STRUCTURES[sname]
    c = oracles.denote(M, p, NAMES)
    for state in M.tuples(2):
        out = interpret(M, p, dict(zip(NAMES, state)), fuel=500)
        assume(out is not FUEL_EXHAUSTED)
        assert (out is BOTTOM) == (state not in c)
        if out is not BOTTOM:
            assert tuple(out[n] for n in NAMES) == c[state]
    assert wp_set(M, p, cond, 500, NAMES) == oracles.oracle_wp(M, p, cond, NAMES) == wp_lfp(M, p, cond, NAMES, SIG)
    assert sp_set(M, p, cond, 500, NAMES) == oracles.oracle_sp(M, p, cond, NAMES) == sp_lfp(M, p, cond, NAMES, SIG)


@given(_programs(), _conds, _conds, st.sampled_from(sorted(STRUCTURES)))
@settings(max_examples=80, deadline=None)
def test_vc_soundness_and_completeness(p, pre, post, sname):
    M = STRUCTURES[sname]
    t = HoareTriple(pre, p, post, SIG)
    semantic = check_hoare_semantic(M, t, fuel=500)
    assume(semantic.holds is not None)
    expected = oracles.oracle_hoare(M, t, NAMES)
    assert semantic.holds == expected
    assert eval_so(M, vcgen_full(t, NAMES).fe) == expected

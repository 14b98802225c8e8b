"""Round-off bound derivation: frozen identities, invariants, compiled form."""

import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fma_tv.error_model import (
    Add,
    BoundResult,
    Const,
    ErrorModelParams,
    Fma,
    MismatchedExpressionsError,
    Mul,
    UnknownVariableError,
    Var,
    compile_derived_bound,
    compile_paper_bound,
    derive_bound,
    epsilon_fma_paper,
    eval_bound,
    eval_expr_fp,
    expr_variables,
)
from fma_tv.fp_semantics import MIN_SUBNORMAL, b64_sub, is_finite, to_rational
from fma_tv._bits import bits_of
from oracles import oracle_add, oracle_fma
from strategies import contract, expr_trees, moderate_double

D = Fraction(1, 2**53)
H = Fraction(1, 2**1075)

ORIG = Add(Mul(Var("a"), Var("b")), Var("c"))
OPT = Fma(Var("a"), Var("b"), Var("c"))
ONES = {"a": 1, "b": 1, "c": 1}

mags = st.floats(min_value=0.0, max_value=1e100, allow_nan=False)


# ---------------------------------------------------------------------------
# parameters


def test_default_params():
    p = ErrorModelParams()
    assert p.delta == D
    assert p.eta == H


def test_params_validation():
    with pytest.raises(ValueError):
        ErrorModelParams(delta=Fraction(-1, 2))
    with pytest.raises(ValueError):
        ErrorModelParams(eta=Fraction(-1))
    with pytest.raises(ValueError):
        ErrorModelParams(delta=Fraction(1, 3))
    with pytest.raises(ValueError):
        ErrorModelParams(eta=Fraction(1, 10))
    with pytest.raises(ValueError):
        ErrorModelParams(delta=Fraction(1))
    with pytest.raises(ValueError):
        ErrorModelParams(delta=Fraction(3, 2))
    # exact arithmetic with no rounding at all is a legal degenerate model
    assert ErrorModelParams(delta=0, eta=0).delta == 0


# ---------------------------------------------------------------------------
# expressions


def test_expr_variables():
    assert expr_variables(ORIG) == frozenset({"a", "b", "c"})
    assert expr_variables(Const(3.0)) == frozenset()
    assert expr_variables(Fma(Var("x"), Const(1.0), Var("x"))) == frozenset({"x"})


def test_eval_expr_fp_matches_oracles():
    env = {"a": 0.1, "b": 0.2, "c": 0.3}
    got = eval_expr_fp(Add(Var("a"), Var("b")), env)
    assert bits_of(got) == 0x3FD3333333333334
    assert got == oracle_add(0.1, 0.2)
    assert eval_expr_fp(OPT, env) == oracle_fma(0.1, 0.2, 0.3)


def test_eval_expr_fp_fma_single_rounding():
    # contraction changes the computed value here: the intermediate product
    # rounds away exactly what the fused operation keeps
    env = {"a": 1.0 + 2.0**-27, "b": 1.0 + 2.0**-27, "c": -(1.0 + 2.0**-26)}
    assert eval_expr_fp(ORIG, env) == 0.0
    assert eval_expr_fp(OPT, env) == 2.0**-54


# ---------------------------------------------------------------------------
# frozen identities for the derived and published bounds


def test_canonical_bound_identity():
    # independent transcription of the propagation rules, kept exact:
    #   mul:  m = 1, err = d + h
    #   add:  m = 2, err = (d+h) + d*(2 + d+h) + h
    #   fma:  m = 2, err = 2d + h
    #   cmp:  d*max(2, 2) + h
    expected = (
        (D + H)
        + (D * (2 + D + H) + H)
        + (2 * D + H)
        + (2 * D + H)
    )
    assert expected == 7 * D + D * D + 4 * H + D * H
    br = derive_bound(ORIG, OPT, ONES)
    assert br.magnitude_bound == expected


def test_canonical_bound_term_labels():
    br = derive_bound(ORIG, OPT, ONES)
    assert [label for label, _ in br.terms] == [
        "original:mul[0]",
        "original:add[1]",
        "optimized:fma[0]",
        "comparison",
    ]


def test_paper_formula_identities():
    assert epsilon_fma_paper(0, 0, 0) == H * (2 + D) ** 2
    assert epsilon_fma_paper(1, 1, 1) == 4 * D + 5 * D**2 + D**3 + H * (
        4 + 4 * D + D**2
    )


def test_paper_formula_first_order():
    assert abs(epsilon_fma_paper(1, 1, 1) / D - 4) < Fraction(1, 10**12)


def test_derived_within_factor_two_of_paper():
    derived = derive_bound(ORIG, OPT, ONES).magnitude_bound
    paper = epsilon_fma_paper(1, 1, 1)
    assert derived < 2 * paper
    assert abs(derived / paper - Fraction(7, 4)) < Fraction(1, 10**12)


def test_identity_pair_bound():
    # structurally identical sides round identically, so only the final
    # comparison subtraction contributes
    br = derive_bound(ORIG, ORIG, ONES)
    assert br.terms == (("comparison", 2 * D + H),)
    assert br.magnitude_bound == 2 * D + H
    br2 = derive_bound(ORIG, ORIG, {"a": 3, "b": 5, "c": 7})
    assert br2.magnitude_bound == 22 * D + H


def test_zero_params_zero_bound():
    p0 = ErrorModelParams(delta=0, eta=0)
    br = derive_bound(ORIG, OPT, ONES, params=p0)
    assert br.magnitude_bound == 0
    assert eval_bound(br) == 0.0
    assert epsilon_fma_paper(1, 1, 1, params=p0) == 0


# ---------------------------------------------------------------------------
# eval_bound rounding direction


def test_eval_bound_frozen():
    def as_float(q):
        return eval_bound(BoundResult(q, (("comparison", q),)))

    z = as_float(Fraction(0))
    assert z == 0.0 and math.copysign(1.0, z) == 1.0
    assert bits_of(as_float(Fraction(1, 2**51))) == 0x3CC0000000000000
    assert as_float(Fraction(2) ** 2000) == math.inf
    # below the least subnormal still rounds up to something positive
    assert as_float(H) == MIN_SUBNORMAL


# ---------------------------------------------------------------------------
# derivation invariants


def picks_from(flags):
    return itertools.cycle(flags or [True])


pairs = st.tuples(
    expr_trees(),
    st.lists(st.booleans(), max_size=8),
).map(lambda t: (t[0], contract(t[0], picks_from(t[1]))))

mag_envs = st.fixed_dictionaries({v: mags for v in ("a", "b", "c")})


@given(pairs, mag_envs)
def test_terms_sum_to_bound(pair, env):
    e1, e2 = pair
    br = derive_bound(e1, e2, env)
    assert sum(t for _, t in br.terms) == br.magnitude_bound


@given(pairs, mag_envs, mag_envs)
def test_bound_monotone_in_magnitudes(pair, env_a, env_b):
    e1, e2 = pair
    lo = {v: min(env_a[v], env_b[v]) for v in env_a}
    hi = {v: max(env_a[v], env_b[v]) for v in env_a}
    lo_bound = derive_bound(e1, e2, lo).magnitude_bound
    hi_bound = derive_bound(e1, e2, hi).magnitude_bound
    assert lo_bound <= hi_bound


@settings(max_examples=300)
@given(
    pairs,
    st.fixed_dictionaries({v: moderate_double for v in ("a", "b", "c")}),
)
def test_bound_sound_on_samples(pair, env):
    # the central soundness claim: for inputs within the stated magnitudes,
    # the two computed values differ by at most the derived bound
    e1, e2 = pair
    v1 = eval_expr_fp(e1, env)
    v2 = eval_expr_fp(e2, env)
    if not (is_finite(v1) and is_finite(v2)):
        return  # the model only covers overflow-free evaluations
    br = derive_bound(e1, e2, {v: abs(x) for v, x in env.items()})
    assert abs(to_rational(v1) - to_rational(v2)) <= br.magnitude_bound
    diff = b64_sub(v1, v2)
    if is_finite(diff):
        assert abs(to_rational(diff)) <= br.magnitude_bound


# ---------------------------------------------------------------------------
# compiled evaluators agree with the exact reference


SANDWICH_REL = Fraction(1) + Fraction(1, 2**38)
SANDWICH_ABS = Fraction(1, 2**1040)


def assert_sandwich(exact, fast):
    assert is_finite(fast)
    q = to_rational(fast)
    assert exact <= q
    assert q <= exact * SANDWICH_REL + SANDWICH_ABS


@given(mags, mags, mags)
def test_compiled_derived_matches_exact(ma, mb, mc):
    cb = compile_derived_bound(ORIG, OPT, ("a", "b", "c"))
    exact = derive_bound(ORIG, OPT, {"a": ma, "b": mb, "c": mc}).magnitude_bound
    assert_sandwich(exact, cb((ma, mb, mc)))


@given(mags, mags)
def test_compiled_two_part_max(ma, mb):
    # sides with different magnitude polynomials: the compiled form carries
    # one polynomial per side and takes the larger, exactly as the exact
    # derivation takes max(m1, m2) for the comparison term
    e1 = Mul(Var("a"), Var("b"))
    e2 = Add(Var("a"), Var("b"))
    cb = compile_derived_bound(e1, e2, ("a", "b"))
    exact = derive_bound(e1, e2, {"a": ma, "b": mb}).magnitude_bound
    assert_sandwich(exact, cb((ma, mb)))


def test_compiled_two_part_both_branches():
    e1 = Mul(Var("a"), Var("b"))
    e2 = Add(Var("a"), Var("b"))
    cb = compile_derived_bound(e1, e2, ("a", "b"))
    for ma, mb in ((0.5, 0.5), (4.0, 4.0)):
        exact = derive_bound(e1, e2, {"a": ma, "b": mb}).magnitude_bound
        assert_sandwich(exact, cb((ma, mb)))


def test_compiled_identity_pair():
    cb = compile_derived_bound(ORIG, ORIG, ("a", "b", "c"))
    exact = derive_bound(ORIG, ORIG, ONES).magnitude_bound
    assert_sandwich(exact, cb((1.0, 1.0, 1.0)))


@given(mags, mags, mags)
def test_compiled_paper_matches_exact(ma, mb, mc):
    cb = compile_paper_bound()
    exact = epsilon_fma_paper(ma, mb, mc)
    assert_sandwich(exact, cb((ma, mb, mc)))


def test_compiled_survives_subnormal_magnitudes():
    # regression: a subnormal magnitude used to underflow the intermediate
    # coefficient product and silently drop the monomial
    cb = compile_derived_bound(ORIG, OPT, ("a", "b", "c"))
    triple = (2.225073858507203e-309, 83886085.0, 0.0)
    exact = derive_bound(ORIG, OPT, dict(zip("abc", triple))).magnitude_bound
    assert_sandwich(exact, cb(triple))


extreme = st.floats(min_value=0.0, max_value=1.7e308, allow_nan=False)


@given(extreme, extreme, extreme)
def test_compiled_extreme_magnitudes(ma, mb, mc):
    # magnitudes beyond the float fast path route through exact evaluation
    cb = compile_derived_bound(ORIG, OPT, ("a", "b", "c"))
    exact = derive_bound(ORIG, OPT, {"a": ma, "b": mb, "c": mc}).magnitude_bound
    fast = cb((ma, mb, mc))
    if is_finite(fast):
        assert_sandwich(exact, fast)
    else:
        # only a bound that truly has no binary64 home may round to inf
        assert exact > to_rational(1.7976931348623157e308)


# ---------------------------------------------------------------------------
# errors


def test_mismatched_variable_sets():
    with pytest.raises(MismatchedExpressionsError):
        derive_bound(Add(Var("a"), Var("b")), Var("a"), {"a": 1, "b": 1})


def test_missing_magnitude():
    with pytest.raises(UnknownVariableError):
        derive_bound(ORIG, OPT, {"a": 1, "b": 1})
    with pytest.raises(UnknownVariableError):
        compile_derived_bound(ORIG, OPT, ("a", "b"))


def test_bad_magnitudes():
    with pytest.raises(ValueError):
        derive_bound(ORIG, OPT, {"a": -1, "b": 1, "c": 1})
    with pytest.raises(ValueError):
        derive_bound(ORIG, OPT, {"a": math.inf, "b": 1, "c": 1})
    with pytest.raises(TypeError):
        derive_bound(ORIG, OPT, {"a": "big", "b": 1, "c": 1})


def test_error_types_are_value_errors():
    assert issubclass(MismatchedExpressionsError, ValueError)
    assert issubclass(UnknownVariableError, ValueError)

"""Round-off error bounds for straight-line double expressions.

The model charges every floating-point operation a relative error `delta`
and an absolute underflow term `eta`: computing `x op y` yields
`(x op y)(1 + d) + e` with `|d| <= delta`, `|e| <= eta`.  `derive_bound`
propagates interval-style error estimates through an original and an
optimized expression over shared inputs and returns a sound upper bound on
how far apart the two computed results can be, assuming only input
magnitudes.  `epsilon_fma_paper` is a closed-form bound for the canonical
three-input case, kept verbatim for auditing against the derived one.

All internal arithmetic is exact: values are dyadic rationals m * 2**e, so
no rounding happens until `eval_bound` converts the final bound to a
binary64, rounding upward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Union

from .fp_semantics import Binary64, b64_add, b64_fma, b64_mul, is_finite, round_rational_up
from ._bits import bits_of

DEFAULT_DELTA = Fraction(1, 2**53)
DEFAULT_ETA = Fraction(1, 2**1075)


class MismatchedExpressionsError(ValueError):
    """Original and optimized expressions read different variable sets."""


class UnknownVariableError(ValueError):
    """A magnitude is missing for a variable the expressions read."""


# ---------------------------------------------------------------------------
# Exact dyadic arithmetic


class _Dyadic:
    """Exact m * 2**e; closed under the + and * the propagation needs."""

    __slots__ = ("m", "e")

    def __init__(self, m: int, e: int = 0):
        if m:
            shift = (m & -m).bit_length() - 1
            if shift:
                m >>= shift
                e += shift
        else:
            e = 0
        self.m = m
        self.e = e

    @classmethod
    def from_fraction(cls, q: Fraction) -> _Dyadic:
        den = q.denominator
        if den & (den - 1):
            raise ValueError(f"not a dyadic rational: {q}")
        return cls(q.numerator, 1 - den.bit_length())

    @classmethod
    def from_float(cls, x: float) -> _Dyadic:
        return cls.from_fraction(Fraction(x))

    def to_fraction(self) -> Fraction:
        if self.e >= 0:
            return Fraction(self.m << self.e)
        return Fraction(self.m, 1 << -self.e)

    def __add__(self, other: _Dyadic) -> _Dyadic:
        if self.e >= other.e:
            return _Dyadic((self.m << (self.e - other.e)) + other.m, other.e)
        return _Dyadic(self.m + (other.m << (other.e - self.e)), self.e)

    def __sub__(self, other: _Dyadic) -> _Dyadic:
        return self + _Dyadic(-other.m, other.e)

    def __mul__(self, other: _Dyadic) -> _Dyadic:
        return _Dyadic(self.m * other.m, self.e + other.e)

    def __lt__(self, other: _Dyadic) -> bool:
        return (self - other).m < 0

    def __repr__(self) -> str:
        return f"_Dyadic({self.m}, {self.e})"


_ZERO = _Dyadic(0)
_ONE = _Dyadic(1)
_TWO = _Dyadic(2)


# ---------------------------------------------------------------------------
# Parameters and expressions


@dataclass(frozen=True)
class ErrorModelParams:
    """Per-operation error constants.

    `delta` is the relative rounding bound (unit roundoff for binary64),
    `eta` the absolute underflow addend.  Both must be non-negative dyadic
    rationals; note the default eta, 2**-1075, is itself below the least
    subnormal, which is why bounds are kept exact rather than in binary64.
    """

    delta: Fraction = DEFAULT_DELTA
    eta: Fraction = DEFAULT_ETA

    def __post_init__(self):
        for name in ("delta", "eta"):
            q = Fraction(getattr(self, name))
            if q < 0:
                raise ValueError(f"{name} must be non-negative, got {q}")
            if q.denominator & (q.denominator - 1):
                raise ValueError(f"{name} must be a dyadic rational, got {q}")
            object.__setattr__(self, name, q)
        if self.delta >= 1:
            raise ValueError(f"delta must be below 1, got {self.delta}")


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True, eq=False)
class Const:
    value: Binary64

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Const):
            return NotImplemented
        return bits_of(self.value) == bits_of(other.value)

    def __hash__(self) -> int:
        return hash(bits_of(self.value))


@dataclass(frozen=True, slots=True)
class Add:
    lhs: FpExpr
    rhs: FpExpr


@dataclass(frozen=True, slots=True)
class Mul:
    lhs: FpExpr
    rhs: FpExpr


@dataclass(frozen=True, slots=True)
class Fma:
    a: FpExpr
    b: FpExpr
    c: FpExpr


FpExpr = Union[Var, Const, Add, Mul, Fma]


def expr_variables(e: FpExpr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Fma):
        return expr_variables(e.a) | expr_variables(e.b) | expr_variables(e.c)
    return expr_variables(e.lhs) | expr_variables(e.rhs)


def eval_expr_fp(e: FpExpr, env: Mapping[str, Binary64]) -> Binary64:
    """Evaluate with binary64 operations (Fma as a single rounding)."""
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Add):
        return b64_add(eval_expr_fp(e.lhs, env), eval_expr_fp(e.rhs, env))
    if isinstance(e, Mul):
        return b64_mul(eval_expr_fp(e.lhs, env), eval_expr_fp(e.rhs, env))
    return b64_fma(eval_expr_fp(e.a, env), eval_expr_fp(e.b, env), eval_expr_fp(e.c, env))


# ---------------------------------------------------------------------------
# Bounds


@dataclass(frozen=True)
class BoundResult:
    """A sound upper bound plus its per-operation breakdown.

    `magnitude_bound` is exact; `terms` pairs a per-operation label with the
    error that operation added on top of its operands' errors (the final
    entry is the comparison rounding term).  Terms sum to the bound.
    """

    magnitude_bound: Fraction
    terms: tuple[tuple[str, Fraction], ...]


def eval_bound(b: BoundResult) -> Binary64:
    """The bound as a binary64, rounded upward so it never under-approximates."""
    return round_rational_up(b.magnitude_bound)


def _coerce_mag(name: str, value) -> _Dyadic:
    if isinstance(value, Fraction):
        q = value
    elif isinstance(value, (int, float)):
        if isinstance(value, float) and not is_finite(value):
            raise ValueError(f"magnitude for {name!r} must be finite, got {value!r}")
        q = Fraction(value)
    else:
        raise TypeError(f"magnitude for {name!r} must be a number, got {type(value).__name__}")
    if q < 0:
        raise ValueError(f"magnitude for {name!r} must be non-negative, got {q}")
    return _Dyadic.from_fraction(q)


class _Propagation:
    """Walks an expression accumulating (magnitude, error) pairs.

    Generic over the coefficient arithmetic: anything with +, * and the
    given zero works, so the same walk yields exact dyadic bounds and the
    compiled polynomial form.
    """

    def __init__(self, mags, delta, eta, prefix: str, zero=None, const_of=None):
        self.mags = mags
        self.delta = delta
        self.eta = eta
        self.prefix = prefix
        self.zero = _ZERO if zero is None else zero
        self.const_of = const_of if const_of is not None else (
            lambda v: _Dyadic.from_float(abs(v))
        )
        self.counter = 0
        self.terms: list[tuple[str, object]] = []

    def _rounded(self, opname: str, mag, pre, child_err):
        # One rounding on a value of magnitude <= mag + pre, where pre bounds
        # the accumulated distance from the exact result.
        err = pre + self.delta * (mag + pre) + self.eta
        self.terms.append((f"{self.prefix}:{opname}[{self.counter}]", err - child_err))
        self.counter += 1
        return err

    def walk(self, e: FpExpr):
        if isinstance(e, Var):
            return self.mags[e.name], self.zero
        if isinstance(e, Const):
            return self.const_of(e.value), self.zero
        if isinstance(e, Add):
            ml, el = self.walk(e.lhs)
            mr, er = self.walk(e.rhs)
            mag = ml + mr
            pre = el + er
            return mag, self._rounded("add", mag, pre, pre)
        if isinstance(e, Mul):
            ml, el = self.walk(e.lhs)
            mr, er = self.walk(e.rhs)
            mag = ml * mr
            pre = el * mr + ml * er + el * er
            return mag, self._rounded("mul", mag, pre, el + er)
        ma, ea = self.walk(e.a)
        mb, eb = self.walk(e.b)
        mc, ec = self.walk(e.c)
        mag = ma * mb + mc
        pre = ea * mb + ma * eb + ea * eb + ec
        return mag, self._rounded("fma", mag, pre, ea + eb + ec)


def derive_bound(
    original: FpExpr,
    optimized: FpExpr,
    mags: Mapping[str, Union[Binary64, int, Fraction]],
    params: ErrorModelParams = ErrorModelParams(),
) -> BoundResult:
    """Bound |original - optimized| as computed in binary64.

    Both expressions are evaluated over the same inputs, of which only
    magnitude bounds are known: `mags[v] >= |value of v|`.  The result
    over-approximates the worst-case distance between the two computed
    values, including the final rounding incurred when the comparison itself
    subtracts them.
    """
    vs = expr_variables(original)
    vs_opt = expr_variables(optimized)
    if vs != vs_opt:
        raise MismatchedExpressionsError(
            f"variable sets differ: {sorted(vs)} vs {sorted(vs_opt)}"
        )
    missing = sorted(v for v in vs if v not in mags)
    if missing:
        raise UnknownVariableError(f"no magnitude for {', '.join(missing)}")
    dmags = {v: _coerce_mag(v, mags[v]) for v in vs}
    delta = _Dyadic.from_fraction(params.delta)
    eta = _Dyadic.from_fraction(params.eta)

    if original == optimized:
        # Structurally identical computations round identically, so only the
        # comparison subtraction can contribute.
        p = _Propagation(dmags, delta, eta, "original")
        m1, _ = p.walk(original)
        cmp_term = delta * m1 + eta
        return BoundResult(
            magnitude_bound=cmp_term.to_fraction(),
            terms=(("comparison", cmp_term.to_fraction()),),
        )

    p_orig = _Propagation(dmags, delta, eta, "original")
    m1, e1 = p_orig.walk(original)
    p_opt = _Propagation(dmags, delta, eta, "optimized")
    m2, e2 = p_opt.walk(optimized)

    # The verdict compares the two computed doubles with one more binary64
    # subtraction; both share the exact magnitude bound max(m1, m2).
    cmp_term = delta * (m2 if m1 < m2 else m1) + eta
    total = e1 + e2 + cmp_term

    terms = p_orig.terms + p_opt.terms + [("comparison", cmp_term)]
    return BoundResult(
        magnitude_bound=total.to_fraction(),
        terms=tuple((label, t.to_fraction()) for label, t in terms),
    )


def epsilon_fma_paper(
    abs_a: Union[Binary64, Fraction],
    abs_b: Union[Binary64, Fraction],
    abs_c: Union[Binary64, Fraction],
    params: ErrorModelParams = ErrorModelParams(),
) -> Fraction:
    """Closed-form published bound for a*b+c versus fma(a, b, c), verbatim.

    Transcribed exactly as published, including the first |a*b*c| factor
    (see the audit mode of the validator, which flags inputs where this
    formula and `derive_bound` disagree on the verdict).
    """
    A = _coerce_mag("abs_a", abs_a)
    B = _coerce_mag("abs_b", abs_b)
    C = _coerce_mag("abs_c", abs_c)
    d = _Dyadic.from_fraction(params.delta)
    h = _Dyadic.from_fraction(params.eta)

    inner = (
        A * B * C * d
        + h
        + A * B * (_TWO * d + d * d)
        + h * (_ONE + d)
        + C * d
        + h
    )
    return (inner * (_ONE + d) + h).to_fraction()


# ---------------------------------------------------------------------------
# Compiled per-sample evaluation
#
# For a fixed expression pair the derived bound is a polynomial in the input
# magnitudes with non-negative coefficients (two polynomials when the exact
# magnitudes of the sides differ, joined by a pointwise max).  Sampling
# validators evaluate that polynomial millions of times, so it is compiled
# once: exact coefficients, rounded upward into floats, then a per-sample
# float evaluation inflated by a slack that dominates every rounding the
# evaluation itself can commit (at least 1 + 2**-40 relative plus 2**-1050
# absolute, widened for very large polynomials).  Magnitudes too large for
# the float path fall back to exact rational evaluation, so the result
# always lies between the exact bound and slack times it; `derive_bound`
# remains the exact reference.


class _Poly:
    """Polynomial over named variables with exact Fraction coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: dict[tuple[int, ...], Fraction]):
        self.coeffs = {k: v for k, v in coeffs.items() if v}

    @classmethod
    def const(cls, q: Fraction, nvars: int) -> _Poly:
        return cls({(0,) * nvars: q})

    @classmethod
    def variable(cls, index: int, nvars: int) -> _Poly:
        key = tuple(1 if i == index else 0 for i in range(nvars))
        return cls({key: Fraction(1)})

    def __add__(self, other: _Poly) -> _Poly:
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, Fraction(0)) + v
        return _Poly(out)

    def __sub__(self, other: _Poly) -> _Poly:
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, Fraction(0)) - v
        return _Poly(out)

    def __mul__(self, other: _Poly) -> _Poly:
        out: dict[tuple[int, ...], Fraction] = {}
        for k1, v1 in self.coeffs.items():
            for k2, v2 in other.coeffs.items():
                key = tuple(a + b for a, b in zip(k1, k2))
                out[key] = out.get(key, Fraction(0)) + v1 * v2
        return _Poly(out)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, _Poly) and self.coeffs == other.coeffs


_EVAL_REL_SLACK = 1.0 + 2.0**-40
_EVAL_ABS_SLACK = 2.0**-1050


class CompiledBound:
    """Per-sample upward evaluation of a precompiled bound polynomial.

    Call with finite, non-negative input magnitudes in the variable order
    the compiler was given; returns a binary64 that over-approximates the
    exact bound.  Per monomial the factors at least 1 are multiplied first,
    then the coefficient, then the rest, so a subnormal intermediate is
    never amplified back up; magnitudes large enough that the leading
    factors alone could overflow are routed to an exact rational evaluation
    instead.
    """

    __slots__ = ("_parts", "_exact_parts", "_rel_slack", "_mag_limit")

    def __init__(self, polys: tuple[_Poly, ...]):
        parts = []
        exact_parts = []
        n_ops = 0
        max_degree = 0
        max_coeff = Fraction(0)
        for poly in polys:
            mons = []
            exact = []
            for key in sorted(poly.coeffs):
                coeff = poly.coeffs[key]
                if coeff < 0:
                    raise ValueError("bound polynomial has a negative coefficient")
                idxs = tuple(i for i, p in enumerate(key) for _ in range(p))
                mons.append((round_rational_up(coeff), idxs))
                exact.append((coeff, idxs))
                n_ops += 2 * len(idxs) + 2
                max_degree = max(max_degree, len(idxs))
                max_coeff = max(max_coeff, coeff)
            parts.append(tuple(mons))
            exact_parts.append(tuple(exact))
        self._parts = tuple(parts)
        self._exact_parts = tuple(exact_parts)
        # one rounding per multiply or add, relative in the normal range
        self._rel_slack = max(_EVAL_REL_SLACK, 1.0 + n_ops * 2.0**-50)
        # keep every prefix product of large factors, times the coefficient,
        # summed over a part's monomials, clear of overflow: above this
        # input magnitude go exact instead
        coeff_exp = max_coeff.numerator.bit_length() + 1 if max_coeff > 1 else 1
        count_exp = max(len(p) for p in parts).bit_length() if parts else 1
        self._mag_limit = (
            2.0 ** ((1020 - coeff_exp - count_exp) // max_degree)
            if max_degree
            else math.inf
        )

    def _eval_exact(self, mags: tuple[float, ...]) -> float:
        if not all(is_finite(m) for m in mags):
            return math.inf
        qs = tuple(Fraction(m) for m in mags)
        best = Fraction(0)
        for mons in self._exact_parts:
            acc = Fraction(0)
            for coeff, idxs in mons:
                term = coeff
                for i in idxs:
                    term *= qs[i]
                acc += term
            if acc > best:
                best = acc
        return round_rational_up(best)

    def __call__(self, mags: tuple[float, ...]) -> float:
        for m in mags:
            if not (m <= self._mag_limit):
                return self._eval_exact(mags)
        best = 0.0
        for mons in self._parts:
            acc = 0.0
            for coeff, idxs in mons:
                term = 1.0
                for i in idxs:
                    m = mags[i]
                    if m >= 1.0:
                        term *= m
                term *= coeff
                for i in idxs:
                    m = mags[i]
                    if m < 1.0:
                        term *= m
                acc += term
            if acc > best:
                best = acc
        return best * self._rel_slack + _EVAL_ABS_SLACK


def _poly_propagation(nvars: int, var_index: Mapping[str, int], params: ErrorModelParams, prefix: str) -> _Propagation:
    zero = _Poly({})
    return _Propagation(
        mags={v: _Poly.variable(i, nvars) for v, i in var_index.items()},
        delta=_Poly.const(params.delta, nvars),
        eta=_Poly.const(params.eta, nvars),
        prefix=prefix,
        zero=zero,
        const_of=lambda v: _Poly.const(Fraction(abs(v)), nvars),
    )


def compile_derived_bound(
    original: FpExpr,
    optimized: FpExpr,
    var_order: tuple[str, ...],
    params: ErrorModelParams = ErrorModelParams(),
) -> CompiledBound:
    """Compile derive_bound for this pair into a fast per-sample evaluator.

    `var_order` fixes the positional meaning of the magnitude tuple the
    evaluator takes; it must cover every variable the expressions read.
    """
    vs = expr_variables(original) | expr_variables(optimized)
    missing = sorted(v for v in vs if v not in var_order)
    if missing:
        raise UnknownVariableError(f"no position for {', '.join(missing)}")
    nvars = len(var_order)
    var_index = {v: i for i, v in enumerate(var_order)}
    delta = _Poly.const(params.delta, nvars)
    eta = _Poly.const(params.eta, nvars)

    if original == optimized:
        m1, _ = _poly_propagation(nvars, var_index, params, "original").walk(original)
        return CompiledBound((delta * m1 + eta,))

    m1, e1 = _poly_propagation(nvars, var_index, params, "original").walk(original)
    m2, e2 = _poly_propagation(nvars, var_index, params, "optimized").walk(optimized)
    base = e1 + e2 + eta
    first = base + delta * m1
    if m1 == m2:
        return CompiledBound((first,))
    return CompiledBound((first, base + delta * m2))


def compile_paper_bound(params: ErrorModelParams = ErrorModelParams()) -> CompiledBound:
    """Compile epsilon_fma_paper into a fast evaluator over (|a|, |b|, |c|)."""
    A, B, C = (_Poly.variable(i, 3) for i in range(3))
    d = _Poly.const(params.delta, 3)
    h = _Poly.const(params.eta, 3)
    one = _Poly.const(Fraction(1), 3)
    two = _Poly.const(Fraction(2), 3)
    inner = A * B * C * d + h + A * B * (two * d + d * d) + h * (one + d) + C * d + h
    return CompiledBound((inner * (one + d) + h,))

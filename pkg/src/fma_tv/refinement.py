"""Refinement between an original block and its fma-contracted form.

A verdict holds when (1) global environments are bit-identical, (2) local
environments agree: aligned intermediates are within the error bound and
everything outside the declared fresh sets is bit-identical entry for
entry, and (3) returned values are within the bound.  Poison must map to
poison.  The bound comes from the error model, per sample, from the
magnitudes of the actual arguments.

Two finiteness readings are supported.  Lenient treats a comparison whose
endpoints or difference overflow as vacuously true (the published reading);
strict demands finiteness.  Their divergence is observable and tested.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from math import inf, isfinite

from ._bits import hex_of
from .denotation import EvalError, GlobalEnv, LocalEnv, MachineState, interp_cfg2
from .error_model import (
    Add,
    Const,
    ErrorModelParams,
    Fma,
    FpExpr,
    Mul,
    Var,
    compile_derived_bound,
    compile_paper_bound,
    expr_variables,
)
from .fp_semantics import Double, Poison, Value, b64_sub
from .ir_core import (
    FBinop,
    FBinopKind,
    FMULADD_F64,
    FunctionDef,
    IntrinsicCall,
    LocalId,
    LocalRef,
    WellformednessError,
    WfKind,
    check_wellformed,
)


class Mode(enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


class BoundSource(enum.Enum):
    PAPER_FORMULA = "paper"
    DERIVED = "derived"
    BOTH = "both"


class Status(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    UNSUPPORTED = "unsupported"


class AlignmentError(ValueError):
    """Malformed or inconsistent alignment description."""


class UnsupportedExprError(ValueError):
    """The block computes something outside the error model's language."""


# ---------------------------------------------------------------------------
# Alignment


@dataclass(frozen=True)
class AlignmentSpec:
    """Which locals correspond across the rewrite.

    `pairs` lists (optimized id, original id) whose values must be within
    the bound; the fresh sets name locals that exist on one side only (or
    were renumbered) and are therefore exempt from the bit-identical
    leftover comparison.  Every paired id must be declared fresh on its
    side: a paired local is by definition not shared state.
    """

    pairs: tuple[tuple[LocalId, LocalId], ...] = ()
    fresh_optimized: frozenset[LocalId] = frozenset()
    fresh_original: frozenset[LocalId] = frozenset()

    def __post_init__(self):
        for opt_id, orig_id in self.pairs:
            if opt_id not in self.fresh_optimized:
                raise AlignmentError(f"paired id {opt_id} missing from fresh_optimized")
            if orig_id not in self.fresh_original:
                raise AlignmentError(f"paired id {orig_id} missing from fresh_original")

    def validate_against(self, params: tuple[LocalId, ...]) -> None:
        """Fresh sets may not claim shared inputs."""
        shared = (self.fresh_optimized | self.fresh_original) & set(params)
        if shared:
            names = ", ".join(sorted(str(p) for p in shared))
            raise AlignmentError(f"parameters cannot be fresh: {names}")


def identity_alignment() -> AlignmentSpec:
    return AlignmentSpec()


def load_alignment(text: str) -> AlignmentSpec:
    """Parse the JSON alignment form.

    Schema: {"pairs": [["%4", "%5"], ...], "fresh_optimized": ["%4", ...],
    "fresh_original": ["%4", ...]}; all keys optional, ids with % prefix.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise AlignmentError(f"alignment is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise AlignmentError("alignment must be a JSON object")
    unknown = set(doc) - {"pairs", "fresh_optimized", "fresh_original"}
    if unknown:
        raise AlignmentError(f"unknown alignment keys: {', '.join(sorted(unknown))}")

    def ident(s) -> LocalId:
        if not isinstance(s, str):
            raise AlignmentError(f"identifier must be a string, got {s!r}")
        try:
            return LocalId.parse(s)
        except ValueError as e:
            raise AlignmentError(str(e)) from None

    raw_pairs = doc.get("pairs", [])
    if not isinstance(raw_pairs, list):
        raise AlignmentError("pairs must be a list")
    pairs = []
    for entry in raw_pairs:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise AlignmentError(f"each pair must be a two-element list, got {entry!r}")
        pairs.append((ident(entry[0]), ident(entry[1])))

    def ident_set(key: str) -> frozenset[LocalId]:
        raw = doc.get(key, [])
        if not isinstance(raw, list):
            raise AlignmentError(f"{key} must be a list")
        return frozenset(ident(s) for s in raw)

    return AlignmentSpec(tuple(pairs), ident_set("fresh_optimized"), ident_set("fresh_original"))


# ---------------------------------------------------------------------------
# Configuration and verdicts


@dataclass(frozen=True)
class RefinementConfig:
    mode: Mode = Mode.LENIENT
    bound_source: BoundSource = BoundSource.BOTH
    params: ErrorModelParams = ErrorModelParams()


@dataclass(frozen=True)
class VerdictDetail:
    """Everything a report needs to reproduce or explain one check."""

    args: tuple[Value, ...] = ()
    message: str | None = None
    failed_clause: str | None = None
    failed_ids: tuple[str, ...] = ()
    observed_diff: float | None = None
    bound_used: float | None = None
    bound_source_used: str | None = None
    bound_paper: float | None = None
    bound_derived: float | None = None
    poison_result: bool = False
    vacuous: bool = False
    audited: bool = False
    paper_disagrees: bool = False

    def to_json(self) -> dict:
        def enc(x: float | None):
            if x is None:
                return None
            return {"decimal": repr(x), "hex": hex_of(x)}

        return {
            "args": [
                "poison" if isinstance(a, Poison) else {"decimal": repr(a.v), "hex": hex_of(a.v)}
                for a in self.args
            ],
            "message": self.message,
            "failed_clause": self.failed_clause,
            "failed_ids": list(self.failed_ids),
            "observed_diff": enc(self.observed_diff),
            "bound_used": enc(self.bound_used),
            "bound_source_used": self.bound_source_used,
            "bound_paper": enc(self.bound_paper),
            "bound_derived": enc(self.bound_derived),
            "poison_result": self.poison_result,
            "vacuous": self.vacuous,
            "audited": self.audited,
            "paper_disagrees": self.paper_disagrees,
        }


@dataclass(frozen=True)
class Verdict:
    status: Status
    detail: VerdictDetail = field(default_factory=VerdictDetail)

    def to_json(self) -> dict:
        return {"status": self.status.value, **self.detail.to_json()}


# ---------------------------------------------------------------------------
# Value and environment refinement


def double_refine(
    d1: Value, d2: Value, bound: float, cfg: RefinementConfig = RefinementConfig()
) -> bool:
    """Relate an optimized value `d1` to an original value `d2`.

    Poison only refines poison.  For defined doubles the computed
    difference must stay within `bound`; when an endpoint or the difference
    itself is non-finite, lenient mode accepts vacuously and strict mode
    rejects.
    """
    if isinstance(d1, Poison) and isinstance(d2, Poison):
        return d1.ty is d2.ty
    if isinstance(d1, Poison) or isinstance(d2, Poison):
        return False
    diff = b64_sub(d1.v, d2.v)
    finite = isfinite(d1.v) and isfinite(d2.v) and isfinite(diff)
    if cfg.mode is Mode.STRICT:
        return finite and abs(diff) <= bound
    return (not finite) or abs(diff) <= bound


def local_refine(
    opt_env: LocalEnv,
    orig_env: LocalEnv,
    align: AlignmentSpec,
    bound: float,
    cfg: RefinementConfig = RefinementConfig(),
) -> bool:
    """Relate final local environments.

    Each aligned pair must be present on both sides and within the bound;
    after removing all fresh ids from both environments, the leftovers must
    be equal as sequences, bit for bit.
    """
    for opt_id, orig_id in align.pairs:
        v_opt = opt_env.lookup(opt_id)
        v_orig = orig_env.lookup(orig_id)
        if v_opt is None or v_orig is None:
            return False
        if not double_refine(v_opt, v_orig, bound, cfg):
            return False
    removal = align.fresh_optimized | align.fresh_original
    return opt_env.remove_all(removal).entries == orig_env.remove_all(removal).entries


# ---------------------------------------------------------------------------
# Symbolic recovery


def recover_expr(f: FunctionDef) -> FpExpr:
    """The returned value of `f` as an expression over its parameters.

    Only fmul, fadd and the fmuladd intrinsic have counterparts in the
    error model; anything else raises UnsupportedExprError.
    """
    env: dict[LocalId, FpExpr] = {p: Var(str(p)) for p in f.params}

    def conv(e) -> FpExpr:
        if isinstance(e, LocalRef):
            if e.id not in env:
                raise UnsupportedExprError(f"undefined local {e.id}")
            return env[e.id]
        return Const(e.value)

    for instr in f.body.blk_code:
        if isinstance(instr, FBinop):
            if instr.fm_flags:
                raise UnsupportedExprError(f"fast-math flags on {instr.dest}")
            if instr.kind is FBinopKind.FMUL:
                node: FpExpr = Mul(conv(instr.lhs), conv(instr.rhs))
            elif instr.kind is FBinopKind.FADD:
                node = Add(conv(instr.lhs), conv(instr.rhs))
            else:
                raise UnsupportedExprError(f"no error model for {instr.kind}")
        else:
            if instr.callee.text != FMULADD_F64 or len(instr.args) != 3:
                raise UnsupportedExprError(f"unsupported call to {instr.callee}")
            node = Fma(conv(instr.args[0]), conv(instr.args[1]), conv(instr.args[2]))
        env[instr.dest] = node
    return conv(f.body.blk_term.value)


# ---------------------------------------------------------------------------
# The equivalence check


class EquivChecker:
    """Precomputed state for checking one block pair on many inputs.

    Construction validates everything input-independent: identical
    parameter lists, wellformedness, alignment consistency, callee names,
    and availability of the requested bound.  Violations that make the pair
    fall outside the supported fragment surface as UNSUPPORTED verdicts;
    violations that make the request itself ill-posed raise.
    """

    def __init__(
        self,
        original: FunctionDef,
        optimized: FunctionDef,
        alignment: AlignmentSpec,
        config: RefinementConfig = RefinementConfig(),
        globals_env: GlobalEnv | None = None,
        locals_env: LocalEnv | None = None,
    ):
        self.original = original
        self.optimized = optimized
        self.alignment = alignment
        self.config = config
        self.globals_env = globals_env if globals_env is not None else GlobalEnv.empty()
        self.locals_env = locals_env if locals_env is not None else LocalEnv.empty()

        if original.params != optimized.params:
            raise ValueError(
                "parameter lists differ: "
                f"({', '.join(map(str, original.params))}) vs "
                f"({', '.join(map(str, optimized.params))})"
            )
        self.params = original.params
        alignment.validate_against(self.params)

        unsupported: str | None = None
        for f, tag in ((original, "original"), (optimized, "optimized")):
            try:
                check_wellformed(f)
            except WellformednessError as e:
                if e.kind is WfKind.UNSUPPORTED_FLAGS and unsupported is None:
                    unsupported = f"{tag}: {e}"
                elif e.kind is not WfKind.UNSUPPORTED_FLAGS:
                    raise
        if unsupported is None:
            for f, tag in ((original, "original"), (optimized, "optimized")):
                for instr in f.body.blk_code:
                    if isinstance(instr, IntrinsicCall) and (
                        instr.callee.text != FMULADD_F64 or len(instr.args) != 3
                    ):
                        unsupported = f"{tag}: unsupported call to {instr.callee}"
                        break
                if unsupported:
                    break

        self.expr_original: FpExpr | None = None
        self.expr_optimized: FpExpr | None = None
        derived_unavailable: str | None = None
        if unsupported is None:
            try:
                self.expr_original = recover_expr(original)
                self.expr_optimized = recover_expr(optimized)
                if expr_variables(self.expr_original) != expr_variables(self.expr_optimized):
                    derived_unavailable = "expressions read different variables"
                    self.expr_original = self.expr_optimized = None
            except UnsupportedExprError as e:
                derived_unavailable = str(e)
                self.expr_original = self.expr_optimized = None

        self.paper_available = len(self.params) == 3
        self.derived_available = self.expr_original is not None
        self._derived_eval = None
        self._paper_eval = None
        if self.derived_available:
            self._derived_eval = compile_derived_bound(
                self.expr_original,
                self.expr_optimized,
                tuple(str(p) for p in self.params),
                config.params,
            )
        if self.paper_available:
            self._paper_eval = compile_paper_bound(config.params)

        if unsupported is None:
            src = config.bound_source
            if src is BoundSource.PAPER_FORMULA and not self.paper_available:
                unsupported = "published bound needs exactly three double parameters"
            elif src is BoundSource.DERIVED and not self.derived_available:
                unsupported = f"derived bound unavailable: {derived_unavailable}"
            elif src is BoundSource.BOTH and not (self.derived_available or self.paper_available):
                unsupported = f"no bound available: {derived_unavailable}"
        self.static_unsupported = unsupported

    # -- per-sample work

    def _bounds(self, args: tuple[Value, ...]) -> tuple[float | None, float | None]:
        """(derived, paper) bounds for these argument magnitudes."""
        mags = tuple(abs(a.v) if isinstance(a, Double) else 0.0 for a in args)
        if all(isfinite(m) for m in mags):
            derived = self._derived_eval(mags) if self._derived_eval is not None else None
            paper = self._paper_eval(mags) if self._paper_eval is not None else None
        else:
            derived = inf if self.derived_available else None
            paper = inf if self.paper_available else None
        return derived, paper

    @staticmethod
    def _classify(v_opt: Value | None, v_orig: Value | None):
        """Reduce one comparison to what double_refine needs per bound.

        None: holds for any bound.  False: fails for any bound.  Otherwise
        (|difference|, all-finite) awaiting the bound and mode.
        """
        if v_opt is None or v_orig is None:
            return False
        if isinstance(v_opt, Poison) and isinstance(v_orig, Poison):
            return None if v_opt.ty is v_orig.ty else False
        if isinstance(v_opt, Poison) or isinstance(v_orig, Poison):
            return False
        diff = b64_sub(v_opt.v, v_orig.v)
        return abs(diff), isfinite(v_opt.v) and isfinite(v_orig.v) and isfinite(diff)

    def _ok_with(self, checks, bound: float) -> bool:
        strict = self.config.mode is Mode.STRICT
        for c in checks:
            if c is None:
                continue
            if c is False:
                return False
            absdiff, finite = c
            if strict:
                if not (finite and absdiff <= bound):
                    return False
            elif finite and absdiff > bound:
                return False
        return True

    def check(self, args: tuple[Value, ...]) -> Verdict:
        if self.static_unsupported is not None:
            return Verdict(
                Status.UNSUPPORTED, VerdictDetail(args=args, message=self.static_unsupported)
            )
        try:
            ms_orig, _ = interp_cfg2(self.original, self.globals_env, self.locals_env, args)
            ms_opt, _ = interp_cfg2(self.optimized, self.globals_env, self.locals_env, args)
        except EvalError as e:
            return Verdict(Status.UNSUPPORTED, VerdictDetail(args=args, message=str(e)))

        bound_derived, bound_paper = self._bounds(args)
        if self.config.bound_source is BoundSource.PAPER_FORMULA:
            bound_used, source_used = bound_paper, "paper"
        elif self.config.bound_source is BoundSource.DERIVED:
            bound_used, source_used = bound_derived, "derived"
        elif bound_derived is not None:
            bound_used, source_used = bound_derived, "derived"
        else:
            bound_used, source_used = bound_paper, "paper"
        assert bound_used is not None

        mode = self.config.mode
        ret_orig, ret_opt = ms_orig.result, ms_opt.result

        globals_ok = ms_opt.globals == ms_orig.globals
        removal = self.alignment.fresh_optimized | self.alignment.fresh_original
        leftover_ok = (
            ms_opt.locals.remove_all(removal).entries
            == ms_orig.locals.remove_all(removal).entries
        )

        pair_checks = [
            self._classify(ms_opt.locals.lookup(opt_id), ms_orig.locals.lookup(orig_id))
            for opt_id, orig_id in self.alignment.pairs
        ]
        ret_check = self._classify(ret_opt, ret_orig)
        all_checks = pair_checks + [ret_check]

        pairs_ok = self._ok_with(pair_checks, bound_used)
        ret_ok = self._ok_with((ret_check,), bound_used)
        bad_pairs: tuple[str, ...] = ()
        if not pairs_ok:
            bad_pairs = tuple(
                f"{opt_id}~{orig_id}"
                for (opt_id, orig_id), c in zip(self.alignment.pairs, pair_checks)
                if not self._ok_with((c,), bound_used)
            )

        observed_diff = None
        vacuous = False
        if isinstance(ret_opt, Double) and isinstance(ret_orig, Double):
            diff = b64_sub(ret_opt.v, ret_orig.v)
            observed_diff = abs(diff)
            vacuous = mode is Mode.LENIENT and not (
                isfinite(ret_opt.v) and isfinite(ret_orig.v) and isfinite(diff)
            )

        audited = (
            self.config.bound_source is BoundSource.BOTH
            and bound_derived is not None
            and bound_paper is not None
        )
        paper_disagrees = audited and (
            self._ok_with(all_checks, bound_derived) != self._ok_with(all_checks, bound_paper)
        )

        if globals_ok and pairs_ok and leftover_ok and ret_ok:
            status, clause, ids = Status.PASS, None, ()
        elif not globals_ok:
            status, clause, ids = Status.FAIL, "globals", ()
        elif not (pairs_ok and leftover_ok):
            status, clause, ids = Status.FAIL, "locals", bad_pairs
        else:
            status, clause, ids = Status.FAIL, "return", ()

        return Verdict(
            status,
            VerdictDetail(
                args=args,
                failed_clause=clause,
                failed_ids=ids,
                observed_diff=observed_diff,
                bound_used=bound_used,
                bound_source_used=source_used,
                bound_paper=bound_paper,
                bound_derived=bound_derived,
                poison_result=isinstance(ret_opt, Poison) and isinstance(ret_orig, Poison),
                vacuous=vacuous,
                audited=audited,
                paper_disagrees=paper_disagrees,
            ),
        )


def check_equiv(
    f_opt: FunctionDef,
    f_orig: FunctionDef,
    g: GlobalEnv,
    l: LocalEnv,
    args: tuple[Value, ...],
    align: AlignmentSpec,
    cfg: RefinementConfig = RefinementConfig(),
) -> Verdict:
    """Check one input tuple; see EquivChecker for the batched form."""
    return EquivChecker(f_orig, f_opt, align, cfg, g, l).check(args)

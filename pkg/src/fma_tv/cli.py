"""Command-line driver: sampled validation, single runs, bound queries.

Three subcommands.  `validate` samples a block pair over a deterministic
input stream and reports whether the refinement held everywhere; `run`
denotes one block on given inputs and prints its trace; `bound` prints the
error bounds for a pair without running it.

Exit codes: 0 means every check passed; 1 means a verdict other than pass
was produced (a concrete failure, or an unsupported construct); 2 means no
verdict was produced at all (unreadable files, parse or configuration
errors).
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import random
import sys
import time
from dataclasses import dataclass

from . import __version__
from ._bits import float_from_hex, hex_of
from .denotation import EvalError, GlobalEnv, LocalEnv, interp_cfg2, strip_taus, value_to_str
from .error_model import (
    Add,
    Fma,
    Mul,
    Var,
    derive_bound,
    epsilon_fma_paper,
    eval_bound,
)
from .fp_semantics import (
    MAX_FINITE,
    MAX_SUBNORMAL,
    MIN_NORMAL,
    MIN_SUBNORMAL,
    Double,
    Poison,
    Value,
    is_finite,
    round_rational_up,
)
from .ir_core import FunctionDef, ParseError, WellformednessError, parse_module
from .refinement import (
    AlignmentError,
    BoundSource,
    EquivChecker,
    Mode,
    RefinementConfig,
    Status,
    UnsupportedExprError,
    load_alignment,
    recover_expr,
)

_MAX_COUNTEREXAMPLES = 16
_MAX_CORPUS_COMBINATIONS = 10_000


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class SamplerConfig:
    """Deterministic input generation for `validate`."""

    samples: int = 1_000_000
    seed: int = 0
    exp_min: int = -50
    exp_max: int = 50
    include_special_corpus: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if not -1074 <= self.exp_min <= self.exp_max <= 1023:
            raise ValueError(
                f"exponent range must satisfy -1074 <= min <= max <= 1023, "
                f"got [{self.exp_min}, {self.exp_max}]"
            )


def special_values() -> tuple[float, ...]:
    """Edge-of-format values crossed into a corpus before random sampling."""
    one_up = math.nextafter(1.0, math.inf)
    one_down = math.nextafter(1.0, -math.inf)
    vals = (
        0.0,
        -0.0,
        MIN_SUBNORMAL,
        -MIN_SUBNORMAL,
        MAX_SUBNORMAL,
        -MAX_SUBNORMAL,
        MIN_NORMAL,
        -MIN_NORMAL,
        one_down,
        -one_down,
        1.0,
        -1.0,
        one_up,
        -one_up,
        MAX_FINITE,
        -MAX_FINITE,
    )
    return vals


def corpus_tuples(n_params: int) -> list[tuple[float, ...]]:
    """Cross product of the special corpus, capped at 10^4 combinations."""
    product = itertools.product(special_values(), repeat=n_params)
    return list(itertools.islice(product, _MAX_CORPUS_COMBINATIONS))


def sample_tuple(rng: random.Random, n_params: int, cfg: SamplerConfig) -> tuple[float, ...]:
    """One pseudo-random input tuple: uniform sign, exponent, 52-bit mantissa."""
    out = []
    for _ in range(n_params):
        sign = -1.0 if rng.getrandbits(1) else 1.0
        exp = rng.randint(cfg.exp_min, cfg.exp_max)
        mant = rng.getrandbits(52)
        out.append(sign * math.ldexp(1.0 + math.ldexp(mant, -52), exp))
    return tuple(out)


# ---------------------------------------------------------------------------
# Reporting


def _dual(x: float | None):
    if x is None:
        return None
    return {"decimal": repr(x), "hex": hex_of(x)}


@dataclass
class Report:
    """Aggregation of one `validate` run; serialized as JSON."""

    config: dict
    verdict: str = "pass"
    exit_code: int = 0
    samples_run: dict | None = None
    counts: dict | None = None
    max_observed_diff: float | None = None
    worst_sample: dict | None = None
    paper_formula_discrepancies: int = 0
    paper_formula_examples: list | None = None
    counterexamples: list | None = None
    unsupported_reason: str | None = None
    stopped_early: bool = False
    timing_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "tool": f"fma-tv {__version__}",
            "config": self.config,
            "verdict": self.verdict,
            "exit_code": self.exit_code,
            "samples_run": self.samples_run or {"random": 0, "corpus": 0, "total": 0},
            "counts": self.counts or {},
            "max_observed_diff": _dual(self.max_observed_diff),
            "worst_sample": self.worst_sample,
            "paper_formula_discrepancies": self.paper_formula_discrepancies,
            "paper_formula_examples": self.paper_formula_examples or [],
            "counterexamples": self.counterexamples or [],
            "unsupported_reason": self.unsupported_reason,
            "stopped_early": self.stopped_early,
            "timing": {"seconds": self.timing_seconds},
        }

    def render(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Shared input plumbing


def _read_file(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _single_function(path: str) -> FunctionDef:
    functions = parse_module(_read_file(path))
    if len(functions) != 1:
        raise ParseError(1, 1, f"{path}: expected exactly one function definition, found {len(functions)}")
    return functions[0]


def _parse_assignments(spec: str, what: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        key, eq, value = item.partition("=")
        if not eq or not key.strip() or not value.strip():
            raise ValueError(f"malformed {what} entry {item!r}, expected name=value")
        key = key.strip()
        if key in out:
            raise ValueError(f"{what} names {key!r} twice")
        out[key] = value.strip()
    return out


def _resolve_names(params: tuple, assignments: dict[str, str], what: str) -> list[str]:
    """Map user-provided names onto parameters, each exactly once.

    Accepts the parameter's own spelling (`%0` or `0`, `%x` or `x`) and the
    positional letters a, b, c, ... as aliases.
    """
    values: list[str | None] = [None] * len(params)
    spellings = {str(p): i for i, p in enumerate(params)}
    spellings.update({p.text: i for i, p in enumerate(params)})
    for i in range(len(params)):
        letter = chr(ord("a") + i)
        spellings.setdefault(letter, i)
    for key, value in assignments.items():
        if key not in spellings:
            raise ValueError(f"unknown {what} name {key!r}; parameters are "
                             + ", ".join(str(p) for p in params))
        idx = spellings[key]
        if values[idx] is not None:
            raise ValueError(f"{what} for {params[idx]} given more than once")
        values[idx] = value
    missing = [str(p) for p, v in zip(params, values) if v is None]
    if missing:
        raise ValueError(f"missing {what} for {', '.join(missing)}")
    return values  # type: ignore[return-value]


def _parse_value(text: str) -> Value:
    if text == "poison":
        return Poison()
    if text.lower().startswith("0x"):
        return Double(float_from_hex(text))
    try:
        return Double(float(text))
    except ValueError:
        raise ValueError(f"cannot read {text!r} as a double (use decimal, 0x-hex bits, or poison)")


def _parse_magnitude(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ValueError(f"cannot read magnitude {text!r} as a number")
    if not is_finite(x) or x < 0:
        raise ValueError(f"magnitudes must be finite and non-negative, got {text!r}")
    return x


# ---------------------------------------------------------------------------
# validate


def cmd_validate(
    original_path: str,
    optimized_path: str,
    alignment_path: str,
    sampler: SamplerConfig = SamplerConfig(),
    cfg: RefinementConfig = RefinementConfig(),
    report_path: str | None = None,
    out=None,
    err=None,
) -> int:
    started = time.perf_counter()
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        original = _single_function(original_path)
        optimized = _single_function(optimized_path)
        alignment = load_alignment(_read_file(alignment_path))
        checker = EquivChecker(original, optimized, alignment, cfg)
    except (OSError, ParseError, AlignmentError, WellformednessError, ValueError) as e:
        print(f"error: {e}", file=err)
        return 2

    config_echo = {
        "original": original_path,
        "optimized": optimized_path,
        "alignment": alignment_path,
        "samples": sampler.samples,
        "seed": sampler.seed,
        "exp_min": sampler.exp_min,
        "exp_max": sampler.exp_max,
        "special_corpus": sampler.include_special_corpus,
        "mode": cfg.mode.value,
        "bound": cfg.bound_source.value,
        "delta": str(cfg.params.delta),
        "eta": str(cfg.params.eta),
        "threads": _threads_setting(err),
    }
    report = Report(config=config_echo)

    counts = {
        "pass": 0,
        "fail": 0,
        "unsupported": 0,
        "vacuous_pass": 0,
        "poison_pass": 0,
        "nonzero_diff": 0,
    }
    counterexamples: list[dict] = []
    paper_examples: list[dict] = []
    paper_discrepancies = 0
    worst: tuple[float, int, dict] | None = None
    n_random = n_corpus = 0
    stopped_early = False

    if checker.static_unsupported is not None:
        verdict = checker.check(())
        report.verdict = "unsupported"
        report.exit_code = 1
        report.unsupported_reason = checker.static_unsupported
        report.counterexamples = [{"index": None, **verdict.to_json()}]
    else:
        n_params = len(checker.params)
        index = 0

        def run_one(raw: tuple[float, ...], is_corpus: bool, index: int) -> bool:
            nonlocal paper_discrepancies, worst
            args = tuple(Double(x) for x in raw)
            v = checker.check(args)
            d = v.detail
            counts[v.status.value] += 1
            if v.status is Status.PASS:
                if d.vacuous:
                    counts["vacuous_pass"] += 1
                if d.poison_result:
                    counts["poison_pass"] += 1
            if d.observed_diff is not None and is_finite(d.observed_diff):
                if d.observed_diff > 0.0:
                    counts["nonzero_diff"] += 1
                if worst is None or d.observed_diff > worst[0]:
                    worst = (
                        d.observed_diff,
                        index,
                        {
                            "index": index,
                            "args": [_dual(x) for x in raw],
                            "observed_diff": _dual(d.observed_diff),
                            "bound_derived": _dual(d.bound_derived),
                            "bound_paper": _dual(d.bound_paper),
                        },
                    )
            if d.paper_disagrees:
                paper_discrepancies += 1
                if len(paper_examples) < _MAX_COUNTEREXAMPLES:
                    paper_examples.append({"index": index, **v.to_json()})
            if v.status is not Status.PASS:
                if len(counterexamples) < _MAX_COUNTEREXAMPLES:
                    counterexamples.append({"index": index, **v.to_json()})
                    return len(counterexamples) < _MAX_COUNTEREXAMPLES
                return False
            return True

        for raw in corpus_tuples(n_params) if sampler.include_special_corpus else []:
            keep_going = run_one(raw, True, index)
            n_corpus += 1
            index += 1
            if not keep_going:
                stopped_early = True
                break
        if not stopped_early:
            rng = random.Random(sampler.seed)
            for _ in range(sampler.samples):
                raw = sample_tuple(rng, n_params, sampler)
                keep_going = run_one(raw, False, index)
                n_random += 1
                index += 1
                if not keep_going:
                    stopped_early = True
                    break

        if counts["fail"]:
            report.verdict = "fail"
            report.exit_code = 1
        elif counts["unsupported"]:
            report.verdict = "unsupported"
            report.exit_code = 1
        else:
            report.verdict = "pass"
            report.exit_code = 0
        report.counterexamples = counterexamples

    report.samples_run = {"random": n_random, "corpus": n_corpus, "total": n_random + n_corpus}
    report.counts = counts
    report.stopped_early = stopped_early
    report.paper_formula_discrepancies = paper_discrepancies
    report.paper_formula_examples = paper_examples
    if worst is not None:
        report.max_observed_diff = worst[0]
        report.worst_sample = worst[2]
    report.timing_seconds = round(time.perf_counter() - started, 6)

    if report_path is not None:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.render())
        summary = (
            f"{report.verdict.upper()}: {report.samples_run['total']} checks, "
            f"{counts['fail']} failures, {counts['unsupported']} unsupported; "
            f"report written to {report_path}"
        )
        print(summary, file=out)
    else:
        out.write(report.render())
    return report.exit_code


def _threads_setting(err) -> int:
    """FMA_TV_THREADS caps parallelism; this build always runs sequentially."""
    raw = os.environ.get("FMA_TV_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        print(f"warning: ignoring non-integer FMA_TV_THREADS={raw!r}", file=err)
        return 1
    return max(1, min(n, 1))


# ---------------------------------------------------------------------------
# run


def cmd_run(block_path: str, inputs: str, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        f = _single_function(block_path)
        assignments = _parse_assignments(inputs, "input")
        raw_values = _resolve_names(f.params, assignments, "input")
        args = tuple(_parse_value(v) for v in raw_values)
    except (OSError, ParseError, ValueError) as e:
        print(f"error: {e}", file=err)
        return 2
    try:
        state, trace = interp_cfg2(f, GlobalEnv.empty(), LocalEnv.empty(), args)
    except EvalError as e:
        print(f"error: {e}", file=err)
        return 1
    for event in strip_taus(trace):
        print(str(event), file=out)
    print("final locals:", file=out)
    for ident, value in state.locals.entries:
        print(f"  {ident} = {value_to_str(value)}", file=out)
    print(f"result: {value_to_str(state.result)}", file=out)
    return 0


# ---------------------------------------------------------------------------
# bound


def _fma_shape(original, optimized) -> bool:
    """True when the pair is a*b+c against fma(a, b, c) over plain variables."""
    if not isinstance(optimized, Fma):
        return False
    a, b, c = optimized.a, optimized.b, optimized.c
    if not all(isinstance(x, Var) for x in (a, b, c)):
        return False
    products = (Mul(a, b), Mul(b, a))
    sums = [Add(p, c) for p in products] + [Add(c, p) for p in products]
    return any(original == s for s in sums)


def cmd_bound(
    original_path: str, optimized_path: str, mags: str, out=None, err=None
) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        original = _single_function(original_path)
        optimized = _single_function(optimized_path)
        expr_orig = recover_expr(original)
        expr_opt = recover_expr(optimized)
        assignments = _parse_assignments(mags, "magnitude")
        raw_values = _resolve_names(original.params, assignments, "magnitude")
        magnitudes = {str(p): _parse_magnitude(v) for p, v in zip(original.params, raw_values)}
        result = derive_bound(expr_orig, expr_opt, magnitudes)
    except (OSError, ParseError, UnsupportedExprError, ValueError) as e:
        print(f"error: {e}", file=err)
        return 2
    total = eval_bound(result)
    print(f"derived bound: {total!r} ({hex_of(total)})", file=out)
    for label, term in result.terms:
        term_f = round_rational_up(term)
        print(f"  {label:<24} {term_f!r}", file=out)
    if _fma_shape(expr_orig, expr_opt) or _fma_shape(expr_opt, expr_orig):
        ma, mb, mc = (magnitudes[str(p)] for p in original.params)
        paper = round_rational_up(epsilon_fma_paper(ma, mb, mc))
        print(f"paper-formula bound: {paper!r} ({hex_of(paper)})", file=out)
    return 0


# ---------------------------------------------------------------------------
# argparse wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fma-tv",
        description="Validate fused-multiply-add contraction on straight-line double blocks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="sample a block pair and check refinement")
    p_val.add_argument("--original", required=True)
    p_val.add_argument("--optimized", required=True)
    p_val.add_argument("--alignment", required=True)
    p_val.add_argument("--samples", type=int, default=1_000_000)
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--exp-min", type=int, default=-50)
    p_val.add_argument("--exp-max", type=int, default=50)
    p_val.add_argument("--no-special-corpus", action="store_true")
    p_val.add_argument("--mode", choices=["strict", "lenient"], default="lenient")
    p_val.add_argument("--bound", choices=["paper", "derived", "both"], default="both")
    p_val.add_argument("--report")

    p_run = sub.add_parser("run", help="denote one block and print its trace")
    p_run.add_argument("--block", required=True)
    p_run.add_argument("--inputs", required=True, help="a=1.0,b=0x3FF0000000000000,c=poison")

    p_bound = sub.add_parser("bound", help="print error bounds for a block pair")
    p_bound.add_argument("--original", required=True)
    p_bound.add_argument("--optimized", required=True)
    p_bound.add_argument("--mags", required=True, help="a=1.0,b=1.0,c=1.0")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            sampler = SamplerConfig(
                samples=args.samples,
                seed=args.seed,
                exp_min=args.exp_min,
                exp_max=args.exp_max,
                include_special_corpus=not args.no_special_corpus,
            )
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        cfg = RefinementConfig(mode=Mode(args.mode), bound_source=BoundSource(args.bound))
        return cmd_validate(
            args.original, args.optimized, args.alignment, sampler, cfg, args.report
        )
    if args.command == "run":
        return cmd_run(args.block, args.inputs)
    return cmd_bound(args.original, args.optimized, args.mags)


def entry_point() -> None:
    sys.exit(main())

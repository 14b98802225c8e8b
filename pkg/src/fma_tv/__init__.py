"""Translation validation for fused-multiply-add contraction.

Checks that replacing `fmul`+`fadd` with `@llvm.fmuladd.f64` in a
straight-line double-precision block refines the original: globals and
untouched locals stay bit-identical, and values the rewrite touched stay
within a derived round-off bound.
"""

__version__ = "0.1.0"

"""Haar multipliers and Calderon-Zygmund checks on finite weighted dyadic trees."""

from .certify import (CertOptions, CertReport, certify, empirical_lp_probe,
                      petermichl_symbol_bounds, size_constant, smoothness_constants,
                      stability_sweep, symbol_conditions, weak_11_probe,
                      weak_integral_identity)
from .haar import (HaarCoefficients, HaarSystem, analyze, build_haar,
                   haar_lipschitz_constant, synthesize, verify_haar)
from .metric import ball, delta, smallest_common_cube, verify_normal, verify_ultrametric
from .operators import (AlphaSequence, KernelMatrix, Symbol, alpha_preset,
                        apply_multiplier, assemble_kernel, l2_norm_estimate,
                        petermichl_adjoint_apply, petermichl_apply,
                        petermichl_compose_diag, petermichl_symbol)
from .tree import (DyadicTree, TreeError, TreeStats, build_random, build_uniform,
                   load_tree, verify_dyadic)

__version__ = "0.1.0"

__all__ = [
    "AlphaSequence", "CertOptions", "CertReport", "DyadicTree", "HaarCoefficients",
    "HaarSystem", "KernelMatrix", "Symbol", "TreeError", "TreeStats", "alpha_preset",
    "analyze", "apply_multiplier", "assemble_kernel", "ball", "build_haar", "build_random",
    "build_uniform", "certify", "delta", "empirical_lp_probe", "haar_lipschitz_constant",
    "l2_norm_estimate", "load_tree", "petermichl_adjoint_apply", "petermichl_apply",
    "petermichl_compose_diag", "petermichl_symbol", "petermichl_symbol_bounds",
    "size_constant", "smallest_common_cube", "smoothness_constants", "stability_sweep",
    "symbol_conditions", "synthesize", "verify_dyadic", "verify_haar", "verify_normal",
    "verify_ultrametric", "weak_11_probe", "weak_integral_identity",
]

"""Forward-backward envelope methods for composite minimization ``f + g``."""

__version__ = "0.1.0"

from .fbe import CompositeProblem, FbCache, NonFiniteError, fb_cache, fbe_gradient, gamma_condition
from .linops import LinearOperator, aslinearoperator, norm_estimate
from .problems import ProblemSpec, build_problem, gen_synthetic, lambda_max, load_dataset
from .solver import PRESETS, SolveParams, SolveTrace, preset, solve

__all__ = [
    "CompositeProblem",
    "FbCache",
    "NonFiniteError",
    "fb_cache",
    "fbe_gradient",
    "gamma_condition",
    "LinearOperator",
    "aslinearoperator",
    "norm_estimate",
    "ProblemSpec",
    "build_problem",
    "gen_synthetic",
    "lambda_max",
    "load_dataset",
    "PRESETS",
    "SolveParams",
    "SolveTrace",
    "preset",
    "solve",
]

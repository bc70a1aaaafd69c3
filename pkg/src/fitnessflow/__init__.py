"""Structure-preserving finite volumes for fitness-driven cross-diffusion.

Simulates ``d_t u_i = -div(u_i grad f_i) + u_i f_i`` with ``f = m - A u``
and checks the gradient-flow structure of its solutions.
"""
__version__ = "0.1.0"

from .grid import Grid  # noqa: E402
from .model import ExtinctionPattern, ProblemData  # noqa: E402
from .solver import SolverConfig, Trajectory, run, step  # noqa: E402

__all__ = ["Grid", "ProblemData", "ExtinctionPattern", "SolverConfig", "Trajectory", "run", "step"]

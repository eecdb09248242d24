"""Occlusion-free target tracking with a split-Bregman trajectory optimizer."""

from .basis import BasisSet, build_basis, eval_at, eval_trajectory
from .ccp import CcpConfig, ccp_solve
from .metrics import MetricsReport, summarize, visibility_score
from .mpc import MpcConfig, MpcController
from .reform import StackedSystem, assemble_A
from .sim import Scenario, load_scenario, run
from .solver import Boundary, Predictions, SolverConfig, SplitBregmanSolver
from .world import Ellipsoid, LosGrid, TargetState, WorldState

__version__ = "0.1.0"

"""Triangle-weighted refinement of pairwise translation directions on a view graph."""

from .exceptions import DegenerateVector, GenerationFailure, InputMismatch, InsufficientEvidence, SolveFailure
from .geometry import canonicalize, correspondence_normal, unoriented_angle, unoriented_error
from .viewgraph import TriangleIndex, ViewGraph, enumerate_triangles, graph_stats, load_scene, save_scene
from .sweep import DirectionField, SweepConfig, SweepReport, run, sweep
from .initializers import InitResult, initialize
from .gnlm import LMConfig, TangentState, gn_step, lm_step, run_gn, run_lm
from .synthetic import (
    CorruptionSpec,
    GraphModel,
    background_support_constant,
    gen_theory_instance,
    make_instance,
    stress_instance,
    theory_bound,
)
from .evaluation import ErrorStats, PhasePoint, direction_error_stats, phase_sweep, recovery_fraction

__version__ = "0.1.0"

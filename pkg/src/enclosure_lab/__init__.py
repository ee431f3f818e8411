"""Minimal invariant subspaces of quantum measurement models.

Structure analysis of Kraus channels, identifiability and the contraction
constant of block statistics, seeded trajectory ensembles, and a feedback
controller that stabilizes a chosen block.
"""
__version__ = "0.1.0"

from .algebra import TOL, Tolerances, project_to_state, sanitize_state
from .channel import KrausChannel, apply_adjoint, apply_channel, enumerate_words, step_distribution
from .control import (ControlConfig, FeedbackController, check_controllability, choose_epsilon,
                      estimate_delta0, expected_Z_of_u, lyapunov_VRZ)
from .identify import analyze_identifiability, compute_kappa, find_id_witness
from .structure import BlockDecomposition, compute_period, decompose, verify_no_transient
from .trajectory import (exact_expectation_W, fit_rate, lyapunov_W, selection_statistics,
                         simulate_ensemble)

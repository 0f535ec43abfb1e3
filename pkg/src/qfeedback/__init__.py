"""Switching feedback stabilization of quantum filters.

Modules
-------
qstate     density matrices, projection, superoperators
operators  spin and two-qubit operators, target states
dynamics   filter equation and its integrators, noise streams
control    feedback and hysteresis switching laws
analysis   Lyapunov functions, generators, reachability
harness    configs, ensembles, result files, CLI
"""

from qfeedback.qstate import DensityMatrix, ProjectionError, Tolerances, project_to_density
from qfeedback.operators import TargetSpec, angular_momentum_ops, spin_eigenstate, target_state
from qfeedback.dynamics import SystemSpec, spin_system, two_qubit_system, filter_step
from qfeedback.control import ControlLaw, spin_switching_law, two_qubit_switching_law

__version__ = "0.1.0"

__all__ = [
    "ControlLaw",
    "DensityMatrix",
    "ProjectionError",
    "SystemSpec",
    "TargetSpec",
    "Tolerances",
    "angular_momentum_ops",
    "filter_step",
    "project_to_density",
    "spin_eigenstate",
    "spin_switching_law",
    "spin_system",
    "target_state",
    "two_qubit_switching_law",
    "two_qubit_system",
]

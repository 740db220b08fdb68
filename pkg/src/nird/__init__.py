"""Nested iteration with range decomposition (NIRD) for 2D elliptic problems.

A single-process laboratory: FOSLS discretisation on newest-vertex-bisection
meshes, ACE-driven nested iteration, partition-of-unity range decomposition
across simulated ranks and the measured constants of the method.
"""
from .fosls import DiscreteField, ProblemSpec, apply_L, kernel_component, lsf, modified_lsf
from .mesh import MeshForest, unit_square_macro
from .orchestrator import NirdConfig, nird_run
from .problems import ProblemId, instantiate
from .refine import AceModel, ace_select, ni_solve

__version__ = "0.1.0"

__all__ = [
    "AceModel", "DiscreteField", "MeshForest", "NirdConfig", "ProblemId", "ProblemSpec", "ace_select",
    "apply_L", "instantiate", "kernel_component", "lsf", "modified_lsf", "ni_solve", "nird_run",
    "unit_square_macro",
]

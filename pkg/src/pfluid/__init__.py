"""Finite element solver and verification harness for unsteady
shear-thinning flow with power-law type stress.

Subpackages follow the pipeline: constitutive algebra (pstructure),
triangulations (mesh), discrete spaces (fespace), weak forms (assembly),
time stepping (stepper), error studies and inequality checks
(verification), and the command line front end (cli).
"""

from .pstructure import StressModel, sym_part
from .mesh import Mesh, unit_square_mesh, refine_uniform
from .fespace import FESpace, DiscreteField, quadrature_for

__all__ = [
    "StressModel",
    "sym_part",
    "Mesh",
    "unit_square_mesh",
    "refine_uniform",
    "FESpace",
    "DiscreteField",
    "quadrature_for",
]

__version__ = "0.1.0"

"""Nonconforming rotated-Q1 tetrahedral element for the Stokes equations."""

from .assembly import FormKind, GramKind
from .errors import RQ1Error
from .mesh import Mesh, generate_ball_mesh, generate_box_mesh, read_mesh, write_mesh
from .system import BoundarySpec, solve_stokes

__all__ = [
    "FormKind", "GramKind", "RQ1Error", "Mesh", "generate_ball_mesh", "generate_box_mesh",
    "read_mesh", "write_mesh", "BoundarySpec", "solve_stokes",
]
__version__ = "0.1.0"

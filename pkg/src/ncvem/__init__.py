"""Nonconforming virtual elements of arbitrary order for the Poisson problem."""

from .assembly import DofMap, LinearSystem, apply_dirichlet, assemble, build_dof_map, solve
from .element import LocalElement, build_local_element, check_element
from .generators import MESH_KINDS, generate_mesh
from .mesh import Mesh, check_regularity, read_mesh, write_mesh

__all__ = [
    "DofMap",
    "LinearSystem",
    "LocalElement",
    "MESH_KINDS",
    "Mesh",
    "apply_dirichlet",
    "assemble",
    "build_dof_map",
    "build_local_element",
    "check_element",
    "check_regularity",
    "generate_mesh",
    "read_mesh",
    "solve",
    "write_mesh",
]
__version__ = "0.1.0"

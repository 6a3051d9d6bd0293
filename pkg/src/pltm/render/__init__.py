"""Flare and depth-of-field integrators over interchangeable lens backends."""

from .backend import NeuralBackend, OracleBackend, Transport
from .color import mape, xyz_to_srgb
from .dof import DofResult, render_dof
from .film import BILINEAR, BOX, Film, splat
from .flare import Light, combine, render_flare
from .imageio import read_pfm, write_pfm, write_png
from .scene import SceneDesc, get_scene

__all__ = [
    "BILINEAR", "BOX", "DofResult", "Film", "Light", "NeuralBackend", "OracleBackend",
    "SceneDesc", "Transport", "combine", "get_scene", "mape", "read_pfm", "render_dof",
    "render_flare", "splat", "write_pfm", "write_png", "xyz_to_srgb",
]

"""First-order (ABCD) model of the all-transmit path.

Rays are ``(height, angle)`` pairs in a meridional plane; angles are plain
slopes (not n-reduced), so the system matrix has determinant
``n_in / n_out``.  This baseline is only meant to be accurate near the axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lens import LensSystem, _check_band


@dataclass(frozen=True)
class AbcdMatrix:
    a: float
    b: float
    c: float
    d: float
    wavelength: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @classmethod
    def from_matrix(cls, m, wavelength):
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]), float(wavelength))


def translation(distance: float) -> np.ndarray:
    return np.array([[1.0, distance], [0.0, 1.0]])


def refraction(radius: float, n1: float, n2: float) -> np.ndarray:
    """Paraxial refraction at a spherical (radius 0: planar) interface."""
    power = 0.0 if radius == 0.0 else (n1 - n2) / (radius * n2)
    return np.array([[1.0, 0.0], [power, n1 / n2]])


def abcd_of(lens: LensSystem, wavelength: float) -> AbcdMatrix:
    """System matrix from the input plane to the output plane."""
    _check_band(wavelength)
    m = np.eye(2)
    z = lens.input_plane_z
    for surf, (before, after) in zip(lens.elements, lens.media()):
        m = translation(surf.z - z) @ m
        z = surf.z
        if surf.is_optical:
            m = refraction(surf.radius, before.ior(wavelength), after.ior(wavelength)) @ m
    m = translation(lens.output_plane_z - z) @ m
    return AbcdMatrix.from_matrix(m, wavelength)


def abcd_trace(m: AbcdMatrix, height, angle):
    """Map input ``(height, angle)`` to output; works elementwise on arrays."""
    h = np.asarray(height, dtype=np.float64)
    u = np.asarray(angle, dtype=np.float64)
    return m.a * h + m.b * u, m.c * h + m.d * u


def effective_focal_length(lens: LensSystem, wavelength: float = 587.6) -> float:
    return -1.0 / abcd_of(lens, wavelength).c

"""Forward light tracing of lens flare from a distant light."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..lens import LensSystem
from ..spectrum import sample_wavelength, spectral_to_xyz
from ..tracer import FORWARD, path_interactions
from .film import BOX, Film, run_tiles, splat, tile_rng

TILE_RAYS = 1 << 16


@dataclass(frozen=True)
class Light:
    """Collimated light: unit ``direction`` of travel (positive z) and a
    spectral intensity scale.  ``spectrum`` maps wavelengths (nm) to relative
    power; ``None`` is an equal-energy spectrum."""

    direction: tuple
    intensity: float = 1.0
    spectrum: object = None

    @classmethod
    def from_angle(cls, theta_deg: float, phi_deg: float = 90.0, intensity: float = 1.0):
        t, p = math.radians(theta_deg), math.radians(phi_deg)
        return cls((math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)), intensity)

    def unit(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        if d[2] <= 0.0:
            raise ValueError("light must travel towards +z")
        return d

    def power(self, wavelength):
        s = 1.0 if self.spectrum is None else self.spectrum(wavelength)
        return self.intensity * np.asarray(s, dtype=np.float64)


def sample_disc(u, radius: float):
    """Area-uniform points in a disc from uniforms ``u`` of shape (N, 2)."""
    rr = radius * np.sqrt(u[:, 0])
    ph = 2.0 * math.pi * u[:, 1]
    return np.column_stack([rr * np.cos(ph), rr * np.sin(ph)])


def render_flare(lens: LensSystem, backend, light: Light, film: Film, spp: int, paths,
                 seed: int = 0, filter: str = BOX, threads: int = 1) -> dict[int, Film]:
    """Per-path flare images from ``spp`` light samples per path.

    Input points are uniform over a disc of the housing radius on the input
    plane.  Each valid exit ray adds ``I_out * G`` with ``G`` the cosine
    between the exit direction and the sensor normal, scaled so that pixel
    values are irradiance relative to the incident irradiance.  Tiles and
    their random streams depend only on ``seed``, the path id and the tile
    index, so both backends see identical input rays.
    """
    w_in = light.unit()
    radius = lens.housing_semi_aperture
    area = math.pi * radius * radius
    out = {}
    n_tiles = (spp + TILE_RAYS - 1) // TILE_RAYS
    for pid in paths:
        pid = int(pid)
        if path_interactions(pid, lens, FORWARD) is None or not backend.has_path(pid, FORWARD):
            raise KeyError(f"unknown path id {pid}")

        def tile(t, pid=pid):
            n = min(TILE_RAYS, spp - t * TILE_RAYS)
            rng = tile_rng(seed, pid, t)
            u = rng.random((n, 3))
            p = sample_disc(u[:, :2], radius)
            lam, pdf = sample_wavelength(u[:, 2])
            res = backend.query(pid, p, np.broadcast_to(w_in, (n, 3)), lam, FORWARD)
            part = film.blank()
            v = res.valid
            if v.any():
                g = np.abs(res.direction[v, 2])
                rad = res.intensity[v] * g * light.power(lam[v])
                xyz = spectral_to_xyz(lam[v], rad, pdf[v]) * (area / (spp * film.pixel_area))
                splat(part, res.position[v], xyz, filter)
            return part

        acc = film.blank()
        for part in run_tiles(tile, n_tiles, threads):
            acc.merge(part)
        out[pid] = acc
    return out


def combine(films: dict[int, Film]) -> Film:
    it = iter(films.values())
    total = next(it).blank()
    for f in films.values():
        total.merge(f)
    return total

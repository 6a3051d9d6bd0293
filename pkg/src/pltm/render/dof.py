"""Backward path tracing through the full-transmit lens path."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..lens import LensSystem
from ..spectrum import sample_wavelength, spectral_to_xyz
from ..tracer import BACKWARD
from .film import Film, run_tiles, tile_rng
from .flare import sample_disc
from .scene import SceneDesc, radiance

FULL_TRANSMIT = 0
TILE_ROWS = 8


@dataclass
class DofResult:
    film: Film
    object_hits: np.ndarray  # (H, W, objects + 1) first-hit counts, last column = sky
    valid_fraction: float

    def upright(self) -> np.ndarray:
        """XYZ image rotated by 180 degrees so the scene appears upright."""
        return self.film.xyz[::-1, ::-1]

    def upright_objects(self) -> np.ndarray:
        return self.object_hits[::-1, ::-1]


def render_dof(lens: LensSystem, backend, scene: SceneDesc, film: Film, spp: int,
               sensor_offset: float = 0.0, seed: int = 0, threads: int = 1) -> DofResult:
    """Render ``scene`` with ``spp`` samples per pixel.

    Each sample picks a point in its pixel on the sensor (moved by
    ``sensor_offset`` along the axis) and a uniform point on the disc of
    the housing radius on the backward plane; the backend maps the joining
    ray through the full-transmit path and the exit ray gathers scene
    radiance.  With ``dz`` the sensor-to-plane distance, a sample carries
    ``L * I_out * cos^4(theta) * A_disc / dz^2``, the sensor irradiance
    estimator for area sampling of the plane.

    The film stores the image as it lands on the sensor (inverted); see
    :meth:`DofResult.upright`.
    """
    if spp < 1:
        raise ValueError("spp must be at least 1")
    z_s = lens.output_plane_z + sensor_offset
    z_b = lens.backward_plane_z
    dz = z_s - z_b
    if dz <= 0.0:
        raise ValueError("sensor must lie behind the backward plane")
    radius = lens.housing_semi_aperture
    area = math.pi * radius * radius
    n_obj = scene.object_count() + 1
    pw, ph = film.pixel_size
    n_tiles = (film.height + TILE_ROWS - 1) // TILE_ROWS

    def tile(t):
        r0 = t * TILE_ROWS
        rows = min(TILE_ROWS, film.height - r0)
        n = rows * film.width * spp
        rng = tile_rng(seed, t)
        u = rng.random((n, 7))
        pix = np.arange(n) // spp
        row = r0 + pix // film.width
        col = pix % film.width
        sx = -0.5 * film.sensor_width + (col + u[:, 0]) * pw
        sy = 0.5 * film.sensor_height - (row + u[:, 1]) * ph
        q = sample_disc(u[:, 2:4], radius)
        lam, pdf = sample_wavelength(u[:, 4])
        w = np.column_stack([q[:, 0] - sx, q[:, 1] - sy, np.full(n, -dz)])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        res = backend.query(FULL_TRANSMIT, q, w, lam, BACKWARD)
        v = np.flatnonzero(res.valid)
        contrib = np.zeros((n, 3))
        obj = np.full(n, n_obj - 1)
        if len(v):
            o = np.column_stack([res.position[v], np.full(len(v), lens.input_plane_z)])
            L, hit = radiance(scene, o, res.direction[v], lam[v], u[v, 5:7])
            cos4 = w[v, 2] ** 4
            rad = L * res.intensity[v] * cos4 * (area / (dz * dz))
            contrib[v] = spectral_to_xyz(lam[v], rad, pdf[v])
            obj[v] = np.where(hit < 0, n_obj - 1, hit)
        local = (row - r0) * film.width + col
        npx = rows * film.width
        xyz = np.stack([np.bincount(local, weights=contrib[:, k], minlength=npx) for k in range(3)],
                       axis=-1) / spp
        hits = np.bincount(local * n_obj + obj, minlength=npx * n_obj).reshape(npx, n_obj)
        return xyz.reshape(rows, film.width, 3), hits.reshape(rows, film.width, n_obj), len(v)

    parts = run_tiles(tile, n_tiles, threads)
    out = film.blank()
    out.xyz = np.concatenate([p[0] for p in parts], axis=0)
    out.count[:] = spp
    hits = np.concatenate([p[1] for p in parts], axis=0)
    n_valid = sum(p[2] for p in parts)
    return DofResult(out, hits, n_valid / (film.width * film.height * spp))

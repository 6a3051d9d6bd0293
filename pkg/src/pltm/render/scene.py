"""Procedural scenes for the depth-of-field integrator.

Scenes sit in front of the lens (negative z, millimetres) with +y up.  All
surfaces are diffuse with checker-modulated spectral albedo; a point light
and a constant sky provide illumination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SKY = -1
GROUND = 0


def _smooth_step(lam, edge, width):
    return 1.0 / (1.0 + np.exp(-(lam - edge) / width))


SPECTRA = {
    "white": lambda lam: np.full_like(lam, 0.8),
    "grey": lambda lam: np.full_like(lam, 0.5),
    "red": lambda lam: 0.08 + 0.8 * _smooth_step(lam, 590.0, 12.0),
    "green": lambda lam: 0.06 + 0.7 * np.exp(-0.5 * ((lam - 535.0) / 35.0) ** 2),
    "blue": lambda lam: 0.08 + 0.75 * (1.0 - _smooth_step(lam, 500.0, 12.0)),
}


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: str
    checks: int = 12
    emission: float = 0.0


@dataclass(frozen=True)
class SceneDesc:
    """Ground plane ``y = ground_y``, spheres, one point light, sky."""

    name: str
    spheres: tuple
    ground_y: float
    ground_albedo: str = "grey"
    ground_check: float = 150.0
    light_position: tuple = (1500.0, 3000.0, 0.0)
    light_intensity: float = 2.0e7
    sky: float = 0.25
    checker_contrast: float = 0.25
    depths: tuple = field(default=())

    def object_count(self) -> int:
        return 1 + len(self.spheres)


def _depth_for_offset(offset_mm: float, focal_mm: float) -> float:
    # thin-lens object distance that comes into focus ``offset_mm`` behind
    # the infinity focus position
    return focal_mm * focal_mm / offset_mm + focal_mm


def _checker_scene(focal_mm=59.4) -> SceneDesc:
    d = [_depth_for_offset(o, focal_mm) for o in (3.0, 2.0, 1.0)]
    spheres = (
        Sphere((-150.0, -130.0, -d[0]), 70.0, "red"),
        Sphere((0.0, -100.0, -d[1]), 100.0, "green"),
        Sphere((380.0, -10.0, -d[2]), 190.0, "blue"),
    )
    return SceneDesc("checker", spheres, ground_y=-200.0, depths=tuple(d))


SCENES = {"checker": _checker_scene}


def get_scene(name: str) -> SceneDesc:
    try:
        return SCENES[name]()
    except KeyError:
        raise KeyError(f"unknown scene {name!r}; available: {sorted(SCENES)}") from None


# ----------------------------------------------------------- intersection

def intersect_scene(scene: SceneDesc, o, d):
    """Nearest hit: ``(t, object id, point, normal)``; id -1 means sky."""
    n = len(o)
    best = np.full(n, np.inf)
    obj = np.full(n, SKY, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (scene.ground_y - o[:, 1]) / d[:, 1]
    hit = (tg > 1e-6) & np.isfinite(tg)
    best = np.where(hit, tg, best)
    obj = np.where(hit, GROUND, obj)
    for k, s in enumerate(scene.spheres):
        c = np.asarray(s.center)
        oc = o - c
        b = np.einsum("ij,ij->i", oc, d)
        cc = np.einsum("ij,ij->i", oc, oc) - s.radius * s.radius
        disc = b * b - cc
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > 1e-6, t0, t1)
        ok &= (t > 1e-6) & (t < best)
        best = np.where(ok, t, best)
        obj = np.where(ok, k + 1, obj)
    p = o + np.where(np.isfinite(best), best, 0.0)[:, None] * d
    nrm = np.zeros_like(p)
    nrm[obj == GROUND] = (0.0, 1.0, 0.0)
    for k, s in enumerate(scene.spheres):
        m = obj == k + 1
        if m.any():
            nrm[m] = (p[m] - np.asarray(s.center)) / s.radius
    return best, obj, p, nrm


def albedo(scene: SceneDesc, obj, p, lam):
    """Checker-modulated spectral albedo at hit points."""
    a = np.zeros(len(obj))
    g = obj == GROUND
    if g.any():
        q = np.floor(p[g, 0] / scene.ground_check) + np.floor(p[g, 2] / scene.ground_check)
        base = SPECTRA[scene.ground_albedo](lam[g])
        a[g] = np.where(q % 2 == 0, base, scene.checker_contrast * base)
    for k, s in enumerate(scene.spheres):
        m = obj == k + 1
        if m.any():
            v = (p[m] - np.asarray(s.center)) / s.radius
            th = np.arccos(np.clip(v[:, 1], -1.0, 1.0))
            ph = np.arctan2(v[:, 2], v[:, 0])
            q = np.floor(th / math.pi * s.checks) + np.floor((ph + math.pi) / math.pi * s.checks)
            base = SPECTRA[s.albedo](lam[m])
            a[m] = np.where(q % 2 == 0, base, scene.checker_contrast * base)
    return a


def emission(scene: SceneDesc, obj):
    e = np.zeros(len(obj))
    for k, s in enumerate(scene.spheres):
        if s.emission:
            e[obj == k + 1] = s.emission
    return e


def _direct(scene, p, nrm, obj, lam, a):
    lp = np.asarray(scene.light_position, dtype=np.float64)
    to_l = lp - p
    dist2 = np.einsum("ij,ij->i", to_l, to_l)
    dist = np.sqrt(dist2)
    ldir = to_l / dist[:, None]
    cos = np.einsum("ij,ij->i", nrm, ldir)
    lit = cos > 0.0
    if lit.any():
        ts, _, _, _ = intersect_scene(scene, p[lit] + 1e-3 * nrm[lit], ldir[lit])
        blocked = ts < dist[lit]
        idx = np.flatnonzero(lit)
        lit[idx[blocked]] = False
    return np.where(lit, a / math.pi * scene.light_intensity * cos / dist2, 0.0)


def _cosine_dirs(nrm, u):
    r = np.sqrt(u[:, 0])
    ph = 2.0 * math.pi * u[:, 1]
    lx, ly, lz = r * np.cos(ph), r * np.sin(ph), np.sqrt(np.maximum(1.0 - u[:, 0], 0.0))
    helper = np.where(np.abs(nrm[:, 0:1]) > 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    t = np.cross(helper, nrm)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(nrm, t)
    return lx[:, None] * t + ly[:, None] * b + lz[:, None] * nrm


def radiance(scene: SceneDesc, o, d, lam, u):
    """Two-bounce diffuse estimate of incoming radiance along rays.

    ``u`` holds two uniforms per ray for the cosine-weighted bounce.
    Returns ``(radiance, first-hit object id)``.
    """
    _, obj, p, nrm = intersect_scene(scene, o, d)
    out = np.full(len(o), scene.sky)
    hit = obj != SKY
    if not hit.any():
        return out, obj
    idx = np.flatnonzero(hit)
    p1, n1, o1, l1 = p[idx], nrm[idx], obj[idx], lam[idx]
    face = np.einsum("ij,ij->i", n1, d[idx]) > 0.0
    n1 = np.where(face[:, None], -n1, n1)
    a1 = albedo(scene, o1, p1, l1)
    val = emission(scene, o1) + _direct(scene, p1, n1, o1, l1, a1)
    d2 = _cosine_dirs(n1, u[idx])
    _, obj2, p2, nrm2 = intersect_scene(scene, p1 + 1e-3 * n1, d2)
    l2 = np.full(len(idx), scene.sky)
    h2 = obj2 != SKY
    if h2.any():
        n2 = nrm2[h2]
        face2 = np.einsum("ij,ij->i", n2, d2[h2]) > 0.0
        n2 = np.where(face2[:, None], -n2, n2)
        a2 = albedo(scene, obj2[h2], p2[h2], l1[h2])
        l2[h2] = emission(scene, obj2[h2]) + _direct(scene, p2[h2], n2, obj2[h2], l1[h2], a2)
    val += a1 * l2
    out[idx] = val
    return out, obj

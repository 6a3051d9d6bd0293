"""Sequential geometric-optics tracer with Fresnel splitting.

All routines work on batches: positions and directions are ``(N, 3)``
arrays, scalars per ray are ``(N,)``.  Rays are never mutated in place.

Path ids
--------
A light path is the ordered list of interactions at optical surfaces, each
``"T"`` (transmit) or ``"R"`` (reflect).  Its id sets bit ``k`` when the
``(k+1)``-th interaction is a reflection, so the all-transmit path is 0 and a
ghost that reflects at the 3rd and then the 5th interaction is
``0b10100 = 20``.  The aperture stop and the end planes are not interactions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lens import STOP, LensSystem, Surface

EPS = 1e-6
FORWARD = "forward"
BACKWARD = "backward"
MAX_INTERACTIONS = 62


@dataclass
class RayState:
    origin: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray
    wavelength: np.ndarray

    def __post_init__(self):
        self.origin = np.atleast_2d(np.asarray(self.origin, dtype=np.float64))
        self.direction = np.atleast_2d(np.asarray(self.direction, dtype=np.float64))
        n = len(self.origin)
        self.intensity = np.broadcast_to(np.asarray(self.intensity, dtype=np.float64), (n,)).copy()
        self.wavelength = np.broadcast_to(np.asarray(self.wavelength, dtype=np.float64), (n,)).copy()
        if self.direction.shape != self.origin.shape or self.origin.shape[1] != 3:
            raise ValueError("origin and direction must both be (N, 3)")

    @classmethod
    def make(cls, origin, direction, wavelength=550.0, intensity=1.0, normalize=True):
        d = np.atleast_2d(np.asarray(direction, dtype=np.float64))
        if normalize:
            d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.atleast_2d(np.asarray(origin, dtype=np.float64))
        o, d = np.broadcast_arrays(o, d)
        return cls(o.copy(), d.copy(), intensity, wavelength)

    def __len__(self):
        return len(self.origin)

    def take(self, idx) -> "RayState":
        return RayState(self.origin[idx], self.direction[idx], self.intensity[idx],
                        self.wavelength[idx])


@dataclass
class Hit:
    mask: np.ndarray
    point: np.ndarray
    normal: np.ndarray  # unit, facing the incoming ray
    distance: np.ndarray


@dataclass
class TraceOutput:
    path_id: int
    position: np.ndarray  # (2,) on the output plane
    direction: np.ndarray  # (3,)
    intensity: float


@dataclass
class TraceResult:
    """Per-ray result of tracing one path; invalid rays hold NaN."""

    path_id: int
    valid: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray

    def output(self, i: int) -> TraceOutput | None:
        if not self.valid[i]:
            return None
        return TraceOutput(self.path_id, self.position[i].copy(), self.direction[i].copy(),
                           float(self.intensity[i]))


@dataclass
class PathHits:
    """Valid outputs of one path inside a batch trace (``index`` into the batch)."""

    index: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray


# ---------------------------------------------------------------- primitives

def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _intersect_arrays(o, d, surf: Surface):
    n = len(o)
    if surf.radius == 0.0:
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (surf.z - o[:, 2]) / dz
        ok = (np.abs(dz) > 1e-12) & (t > EPS)
        p = o + t[:, None] * d
        nrm = np.zeros((n, 3))
        nrm[:, 2] = -np.sign(dz)
    else:
        c = np.array([0.0, 0.0, surf.center_z])
        r = surf.radius
        oc = o - c
        b = _dot(oc, d)
        cc = _dot(oc, oc) - r * r
        disc = b * b - cc
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = -b - sq
        t2 = -b + sq
        side = np.sign(r)
        z1 = o[:, 2] + t1 * d[:, 2]
        z2 = o[:, 2] + t2 * d[:, 2]
        v1 = (t1 > EPS) & ((z1 - c[2]) * side <= 0.0)
        v2 = (t2 > EPS) & ((z2 - c[2]) * side <= 0.0)
        t = np.where(v1, t1, t2)
        ok = (disc >= 0.0) & (v1 | v2)
        p = o + t[:, None] * d
        nrm = (p - c) / abs(r)
        flip = _dot(nrm, d) > 0.0
        nrm = np.where(flip[:, None], -nrm, nrm)
    rad2 = p[:, 0] ** 2 + p[:, 1] ** 2
    ok &= rad2 <= surf.semi_aperture ** 2
    return ok, p, nrm, t


def intersect(ray: RayState, surface: Surface) -> Hit:
    """Nearest hit of each ray with ``surface`` inside its clear aperture.

    Spherical surfaces are treated as the cap on the vertex side of the
    sphere.  ``mask`` is False for misses, hits closer than ``EPS`` and hits
    beyond the clear semi-aperture.
    """
    ok, p, nrm, t = _intersect_arrays(ray.origin, ray.direction, surface)
    return Hit(ok, p, nrm, t)


def reflect(w, n):
    w = np.asarray(w, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return w - 2.0 * _dot(w, n)[..., None] * n


def refract(w, n, eta):
    """Snell transmission of ``w`` through a surface with normal ``n``.

    ``eta`` is n1/n2.  Returns ``(direction, ok)``; ``ok`` is False on total
    internal reflection, where the direction is NaN.
    """
    w = np.asarray(w, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    cos_i = -_dot(w, n)
    n = np.where((cos_i < 0)[..., None], -n, n)
    cos_i = np.abs(cos_i)
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    ok = k >= 0.0
    cos_t = np.sqrt(np.maximum(k, 0.0))
    t = eta[..., None] * w + (eta * cos_i - cos_t)[..., None] * n
    t = np.where(ok[..., None], t, np.nan)
    return t, ok


def fresnel_dielectric(cos_i, n1, n2):
    """Unpolarized Fresnel reflectance and transmittance ``(R, T)``."""
    cos_i = np.clip(np.asarray(cos_i, dtype=np.float64), 0.0, 1.0)
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    sin_t2 = (n1 / n2) ** 2 * (1.0 - cos_i * cos_i)
    tir = sin_t2 >= 1.0
    cos_t = np.sqrt(np.maximum(1.0 - sin_t2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
        rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
        r = 0.5 * (rs * rs + rp * rp)
    r = np.where(tir | (cos_i == 0.0), 1.0, r)
    return r, 1.0 - r


# --------------------------------------------------------------- path codes

def encode_path(interactions) -> int:
    """Integer id of a T/R sequence (bit k set iff interaction k+1 is R)."""
    pid = 0
    for k, step in enumerate(interactions):
        if step == "R":
            pid |= 1 << k
        elif step != "T":
            raise ValueError(f"interaction must be 'T' or 'R', got {step!r}")
    return pid


def decode_path(path_id: int, length: int) -> tuple[str, ...]:
    if path_id < 0 or path_id >> length:
        raise ValueError(f"path id {path_id} does not fit in {length} interactions")
    return tuple("R" if (path_id >> k) & 1 else "T" for k in range(length))


def _start(lens: LensSystem, mode: str):
    if mode == FORWARD:
        return 0, 1
    if mode == BACKWARD:
        return len(lens.elements) - 1, -1
    raise ValueError(f"mode must be 'forward' or 'backward', got {mode!r}")


def surface_walk(path_id: int, lens: LensSystem, mode: str = FORWARD):
    """Element visits ``[(element index, 'T'|'R'|'stop'), ...]`` for a path.

    Returns None if the path cannot end on the output plane of ``mode``.
    """
    idx, step = _start(lens, mode)
    n_elem = len(lens.elements)
    hops = []
    k = 0
    while 0 <= idx < n_elem:
        if lens.elements[idx].kind == STOP:
            hops.append((idx, "stop"))
            idx += step
            continue
        if k >= MAX_INTERACTIONS:
            return None
        if (path_id >> k) & 1:
            hops.append((idx, "R"))
            step = -step
        else:
            hops.append((idx, "T"))
        idx += step
        k += 1
    exits_rear = idx >= n_elem
    if exits_rear != (mode == FORWARD) or path_id >> k:
        return None
    return hops


def path_interactions(path_id: int, lens: LensSystem, mode: str = FORWARD):
    hops = surface_walk(path_id, lens, mode)
    if hops is None:
        return None
    return tuple(a for _, a in hops if a != "stop")


def enumerate_paths(lens: LensSystem, max_reflections: int = 2, mode: str = FORWARD) -> list[int]:
    """Ids of every T/R sequence reaching the output plane, ascending."""
    if max_reflections < 0 or max_reflections % 2:
        raise ValueError("max_reflections must be a non-negative even number")
    optical = [i for i, s in enumerate(lens.elements) if s.kind != STOP]
    start, step0 = _start(lens, mode)
    n_elem = len(lens.elements)
    out = []

    def walk(idx, step, k, n_r, bits):
        while 0 <= idx < n_elem and lens.elements[idx].kind == STOP:
            idx += step
        if not 0 <= idx < n_elem:
            if (idx >= n_elem) == (mode == FORWARD):
                out.append(bits)
            return
        walk(idx + step, step, k + 1, n_r, bits)
        if n_r < max_reflections:
            walk(idx - step, -step, k + 1, n_r + 1, bits | (1 << k))

    if optical:
        walk(start, step0, 0, 0, 0)
    return sorted(out)


# ------------------------------------------------------------------ tracing

def _media_iors(lens: LensSystem, wavelength):
    """(before, after) index arrays per element for every ray's wavelength."""
    cache = {}

    def n_of(m):
        if m.name not in cache:
            cache[m.name] = np.asarray(m.ior(wavelength), dtype=np.float64) * np.ones_like(wavelength)
        return cache[m.name]

    return [(n_of(b), n_of(a)) for b, a in lens.media()]


def _entry_ok(lens: LensSystem, rays: RayState, mode: str):
    z0 = lens.input_plane_z if mode == FORWARD else lens.backward_plane_z
    sign = 1.0 if mode == FORWARD else -1.0
    o, d = rays.origin, rays.direction
    ok = (d[:, 2] * sign) > 1e-12
    ok &= np.abs(o[:, 2] - z0) <= 1e-9 * max(1.0, abs(z0))
    ok &= o[:, 0] ** 2 + o[:, 1] ** 2 <= lens.housing_semi_aperture ** 2
    return ok


def _exit_plane(lens: LensSystem, mode: str) -> float:
    return lens.output_plane_z if mode == FORWARD else lens.input_plane_z


def _land(o, d, z_out):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (z_out - o[:, 2]) / d[:, 2]
    ok = (t > 0.0) & np.isfinite(t)
    p = o + t[:, None] * d
    return ok, p


def _in_sensor(lens, p):
    return (np.abs(p[:, 0]) <= 0.5 * lens.sensor_width) & (np.abs(p[:, 1]) <= 0.5 * lens.sensor_height)


def trace_path(rays: RayState, path_id: int, lens: LensSystem, mode: str = FORWARD,
               sensor_clip: bool = False, events: list | None = None) -> TraceResult:
    """Trace every ray along one fixed interaction sequence.

    Rays start on the input plane (``mode="forward"``) or on the backward
    plane behind the rear element (``mode="backward"``).  A ray is invalid if
    it enters outside the housing, misses an aperture, is absorbed by the
    stop, hits TIR on a transmit step, or ends anywhere but the output plane.
    With ``sensor_clip`` forward rays must also land inside the sensor.

    ``events``, if given, receives ``(element, action, ray index, factor)``
    tuples for every Fresnel event (an instrumented trace).
    """
    n = len(rays)
    res_p = np.full((n, 2), np.nan)
    res_d = np.full((n, 3), np.nan)
    res_i = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    hops = surface_walk(path_id, lens, mode)
    if hops is None:
        return TraceResult(path_id, valid, res_p, res_d, res_i)
    media = _media_iors(lens, rays.wavelength)
    idx = np.flatnonzero(_entry_ok(lens, rays, mode))
    o = rays.origin[idx]
    d = rays.direction[idx]
    inten = rays.intensity[idx]
    step = 1 if mode == FORWARD else -1
    for e, act in hops:
        if not len(idx):
            break
        ok, p, nrm, _ = _intersect_arrays(o, d, lens.elements[e])
        if not ok.all():
            idx, p, nrm, d, inten = idx[ok], p[ok], nrm[ok], d[ok], inten[ok]
        o = p
        if act == "stop":
            continue
        before, after = media[e]
        n1, n2 = (before[idx], after[idx]) if step > 0 else (after[idx], before[idx])
        cos_i = -_dot(d, nrm)
        r, t = fresnel_dielectric(cos_i, n1, n2)
        if act == "T":
            d, ok = refract(d, nrm, n1 / n2)
            factor = t
            if not ok.all():
                idx, o, d, inten, factor = idx[ok], o[ok], d[ok], inten[ok], factor[ok]
        else:
            d = reflect(d, nrm)
            factor = r
            step = -step
        inten = inten * factor
        if events is not None:
            events.append((e, act, idx.copy(), factor.copy()))
    if len(idx):
        ok, p = _land(o, d, _exit_plane(lens, mode))
        if sensor_clip and mode == FORWARD:
            ok &= _in_sensor(lens, p)
        idx, p, d, inten = idx[ok], p[ok], d[ok], inten[ok]
        valid[idx] = True
        res_p[idx] = p[:, :2]
        res_d[idx] = d
        res_i[idx] = inten
    return TraceResult(path_id, valid, res_p, res_d, res_i)


def trace_all_batch(rays: RayState, lens: LensSystem, max_reflections: int = 2,
                    i_min: float = 1e-4, mode: str = FORWARD,
                    sensor_clip: bool = False) -> dict[int, PathHits]:
    """Split every ray at each surface (depth first) into all T/R paths.

    Branches whose throughput drops below ``i_min`` are pruned.  Returns the
    valid outputs of each path id, keys ascending.
    """
    if max_reflections < 0 or max_reflections % 2:
        raise ValueError("max_reflections must be a non-negative even number")
    if not 0.0 <= i_min < 1.0:
        raise ValueError("i_min must lie in [0, 1)")
    media = _media_iors(lens, rays.wavelength)
    n_elem = len(lens.elements)
    z_out = _exit_plane(lens, mode)
    found: dict[int, list] = {}

    def branch(idx, o, d, inten, e, step, k, n_r, bits):
        while len(idx):
            if not 0 <= e < n_elem:
                if (e >= n_elem) != (mode == FORWARD):
                    return
                ok, p = _land(o, d, z_out)
                if sensor_clip and mode == FORWARD:
                    ok &= _in_sensor(lens, p)
                if ok.any():
                    found.setdefault(bits, []).append((idx[ok], p[ok, :2], d[ok], inten[ok]))
                return
            ok, p, nrm, _ = _intersect_arrays(o, d, lens.elements[e])
            if not ok.all():
                idx, p, nrm, d, inten = idx[ok], p[ok], nrm[ok], d[ok], inten[ok]
            o = p
            if lens.elements[e].kind == STOP:
                e += step
                continue
            before, after = media[e]
            n1, n2 = (before[idx], after[idx]) if step > 0 else (after[idx], before[idx])
            cos_i = -_dot(d, nrm)
            r, t = fresnel_dielectric(cos_i, n1, n2)
            if n_r < max_reflections:
                i_r = inten * r
                keep = (i_r >= i_min) & (i_r > 0.0)
                if keep.any():
                    branch(idx[keep], o[keep], reflect(d[keep], nrm[keep]), i_r[keep],
                           e - step, -step, k + 1, n_r + 1, bits | (1 << k))
            d, ok = refract(d, nrm, n1 / n2)
            inten = inten * t
            ok &= (inten >= i_min) & (inten > 0.0)
            if not ok.all():
                idx, o, d, inten = idx[ok], o[ok], d[ok], inten[ok]
            e += step
            k += 1

    idx = np.flatnonzero(_entry_ok(lens, rays, mode))
    start, step0 = _start(lens, mode)
    branch(idx, rays.origin[idx], rays.direction[idx], rays.intensity[idx], start, step0, 0, 0, 0)
    out = {}
    for pid in sorted(found):
        parts = found[pid]
        ii = np.concatenate([q[0] for q in parts])
        order = np.argsort(ii, kind="stable")
        out[pid] = PathHits(ii[order], np.concatenate([q[1] for q in parts])[order],
                            np.concatenate([q[2] for q in parts])[order],
                            np.concatenate([q[3] for q in parts])[order])
    return out


def trace_all(ray: RayState, lens: LensSystem, max_reflections: int = 2, i_min: float = 1e-4,
              mode: str = FORWARD, sensor_clip: bool = False) -> list[TraceOutput]:
    """All outputs of a single input ray, ordered by path id."""
    if len(ray) != 1:
        raise ValueError("trace_all takes a single ray; use trace_all_batch for batches")
    hits = trace_all_batch(ray, lens, max_reflections, i_min, mode, sensor_clip)
    return [TraceOutput(pid, h.position[0].copy(), h.direction[0].copy(), float(h.intensity[0]))
            for pid, h in hits.items()]


# --------------------------------------------------------- canonicalization

@dataclass
class SymmetryTransform:
    """Rotation by ``-angle`` about the axis, then optional y-mirror."""

    angle: np.ndarray
    mirror: np.ndarray
    _cs: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.angle = np.asarray(self.angle, dtype=np.float64)
        self.mirror = np.asarray(self.mirror, dtype=bool)
        self._cs = (np.cos(self.angle), np.sin(self.angle))

    def apply(self, v):
        """World frame -> canonical frame (``v`` is (N,2) or (N,3))."""
        c, s = self._cs
        v = np.array(v, dtype=np.float64)
        x, y = v[:, 0].copy(), v[:, 1].copy()
        v[:, 0] = c * x + s * y
        v[:, 1] = -s * x + c * y
        v[:, 1] = np.where(self.mirror, -v[:, 1], v[:, 1])
        return v

    def inverse(self, v):
        """Canonical frame -> world frame."""
        c, s = self._cs
        v = np.array(v, dtype=np.float64)
        y = np.where(self.mirror, -v[:, 1], v[:, 1])
        x = v[:, 0].copy()
        v[:, 0] = c * x - s * y
        v[:, 1] = s * x + c * y
        return v

    def take(self, idx) -> "SymmetryTransform":
        return SymmetryTransform(self.angle[idx], self.mirror[idx])


def canonicalize(p_in, w_in):
    """Reduce an input ray to radius and a quarter-sphere direction.

    ``p_in`` is (N,2) (or (N,3); z ignored), ``w_in`` (N,3).  The rotation
    puts ``p_in`` on the +x half-axis; the mirror makes the direction's y
    component non-negative.  For ``r == 0`` the rotation instead aligns the
    direction's transverse part with +x.  Returns ``(r, w_canon, transform)``.
    """
    p = np.atleast_2d(np.asarray(p_in, dtype=np.float64))
    w = np.atleast_2d(np.asarray(w_in, dtype=np.float64))
    r = np.hypot(p[:, 0], p[:, 1])
    ang = np.where(r > 0.0, np.arctan2(p[:, 1], p[:, 0]), np.arctan2(w[:, 1], w[:, 0]))
    c, s = np.cos(ang), np.sin(ang)
    wy = -s * w[:, 0] + c * w[:, 1]
    mirror = wy < 0.0
    xf = SymmetryTransform(ang, mirror)
    wc = xf.apply(w)
    wc[:, 1] = np.abs(wc[:, 1])
    return r, wc, xf


def canonical_rays(r, w_canon, wavelength, lens: LensSystem, mode: str = FORWARD) -> RayState:
    """Input rays in the canonical frame: origin (r, 0, plane z)."""
    z0 = lens.input_plane_z if mode == FORWARD else lens.backward_plane_z
    r = np.asarray(r, dtype=np.float64)
    o = np.zeros((len(r), 3))
    o[:, 0] = r
    o[:, 2] = z0
    return RayState(o, np.asarray(w_canon, dtype=np.float64), 1.0, wavelength)

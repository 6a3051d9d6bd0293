"""Rotationally symmetric lens prescriptions.

Geometry is in millimetres with the optical axis along +z; wavelengths are in
nanometres.  A prescription is loaded from the JSON schema documented in
``docs/lens_schema.md`` and turned into an immutable :class:`LensSystem`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

LAMBDA_MIN = 380.0
LAMBDA_MAX = 780.0

SPHERICAL = "spherical"
PLANAR = "planar"
STOP = "stop"
SENSOR = "sensor-plane"
INPUT = "input-plane"

_DOC_KINDS = (SPHERICAL, PLANAR, STOP)
BACKWARD_PLANE_GAP = 1.0


class LensFormatError(ValueError):
    """The document is not well-formed (bad JSON, missing or mistyped field)."""


class LensValidationError(ValueError):
    """The document parsed but violates a lens invariant."""


def _check_band(wavelength):
    lam = np.asarray(wavelength, dtype=np.float64)
    if np.any(lam < LAMBDA_MIN) or np.any(lam > LAMBDA_MAX) or np.any(~np.isfinite(lam)):
        raise ValueError(
            f"wavelength outside supported band [{LAMBDA_MIN:g}, {LAMBDA_MAX:g}] nm")
    return lam


@dataclass(frozen=True)
class Material:
    """Dispersive medium.

    ``model`` is ``"constant"`` (``params = (n,)``) or ``"cauchy"``
    (``params = (A, B, C)`` with B in um^2 and C in um^4).
    """

    name: str
    model: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.model == "constant":
            if len(self.params) != 1:
                raise LensValidationError(f"material {self.name!r}: constant model takes 1 parameter")
        elif self.model == "cauchy":
            if len(self.params) not in (2, 3):
                raise LensValidationError(f"material {self.name!r}: cauchy model takes A, B[, C]")
            if len(self.params) == 2:
                object.__setattr__(self, "params", (*self.params, 0.0))
        else:
            raise LensValidationError(f"material {self.name!r}: unknown dispersion model {self.model!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def ior(self, wavelength):
        """Index at ``wavelength`` (nm, scalar or array); no band check."""
        if self.model == "constant":
            return np.broadcast_to(np.float64(self.params[0]), np.shape(wavelength)).copy() \
                if np.ndim(wavelength) else float(self.params[0])
        a, b, c = self.params
        um2 = (np.asarray(wavelength, dtype=np.float64) * 1e-3) ** 2
        n = a + b / um2 + c / (um2 * um2)
        return float(n) if np.ndim(n) == 0 else n


AIR = Material("air", "constant", (1.0,))


def ior_at(material: Material, wavelength):
    """Refractive index of ``material`` at ``wavelength`` nm (380-780)."""
    _check_band(wavelength)
    return material.ior(wavelength)


@dataclass(frozen=True)
class Surface:
    kind: str
    z: float
    radius: float
    semi_aperture: float
    material_after: str = "air"

    @property
    def is_optical(self) -> bool:
        return self.kind in (SPHERICAL, PLANAR)

    @property
    def center_z(self) -> float:
        return self.z + self.radius

    def sag(self, h):
        """Axial displacement of the surface from its vertex at height ``h``."""
        if self.radius == 0.0:
            return np.zeros_like(np.asarray(h, dtype=np.float64))
        r = self.radius
        return r - math.copysign(1.0, r) * np.sqrt(r * r - np.asarray(h, dtype=np.float64) ** 2)

    def z_extent(self) -> tuple[float, float]:
        """(min z, max z) covered by the clear aperture."""
        if self.radius == 0.0 or not math.isfinite(self.semi_aperture):
            return self.z, self.z
        s = float(self.sag(self.semi_aperture))
        return (self.z + min(0.0, s), self.z + max(0.0, s))


@dataclass(frozen=True, eq=True)
class LensSystem:
    """Validated, immutable lens prescription.

    ``surfaces`` lists every surface a forward ray can meet, ordered by axial
    position: the optical surfaces and the aperture stop from the document,
    followed by the sensor (output) plane.  The input plane is kept apart in
    :attr:`input_plane` since rays are born on it rather than hitting it.
    """

    name: str
    elements: tuple[Surface, ...]
    materials: Mapping[str, Material]
    housing_semi_aperture: float
    input_plane_z: float
    output_plane_z: float
    sensor_width: float
    sensor_height: float
    backward_plane_z: float | None = None
    surfaces: tuple[Surface, ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "materials", MappingProxyType(dict(self.materials)))
        sensor = Surface(SENSOR, self.output_plane_z, 0.0, math.inf, "air")
        object.__setattr__(self, "surfaces", tuple(self.elements) + (sensor,))
        _validate(self)
        if self.backward_plane_z is None:
            rear = max(s.z_extent()[1] for s in self.elements)
            object.__setattr__(self, "backward_plane_z", rear + BACKWARD_PLANE_GAP)
        if not self.backward_plane_z < self.output_plane_z:
            raise LensValidationError("backward plane must lie in front of the output plane")

    @property
    def input_plane(self) -> Surface:
        return Surface(INPUT, self.input_plane_z, 0.0, self.housing_semi_aperture, "air")

    @property
    def optical_surfaces(self) -> tuple[Surface, ...]:
        return tuple(s for s in self.elements if s.is_optical)

    @property
    def stop(self) -> Surface:
        return next(s for s in self.elements if s.kind == STOP)

    def material(self, name: str) -> Material:
        if name == "air":
            return self.materials.get("air", AIR)
        return self.materials[name]

    def media(self) -> list[tuple[Material, Material]]:
        """(medium before, medium after) for every element, front to back."""
        out = []
        before = self.material("air")
        for s in self.elements:
            after = self.material(s.material_after)
            out.append((before, after))
            before = after
        return out

    def with_stop_scale(self, factor: float) -> "LensSystem":
        """Copy with the aperture stop's semi-aperture scaled by ``factor``."""
        elems = tuple(
            Surface(s.kind, s.z, s.radius, s.semi_aperture * factor, s.material_after)
            if s.kind == STOP else s for s in self.elements)
        return LensSystem(self.name, elems, dict(self.materials), self.housing_semi_aperture,
                          self.input_plane_z, self.output_plane_z, self.sensor_width,
                          self.sensor_height, self.backward_plane_z)

    def with_output_plane(self, z: float) -> "LensSystem":
        return LensSystem(self.name, self.elements, dict(self.materials), self.housing_semi_aperture,
                          self.input_plane_z, z, self.sensor_width, self.sensor_height,
                          self.backward_plane_z)

    def to_dict(self) -> dict:
        mats = {}
        for name, m in self.materials.items():
            mats[name] = {"model": m.model, "params": list(m.params)}
        doc = {
            "name": self.name,
            "housing_semi_aperture_mm": self.housing_semi_aperture,
            "input_plane_z_mm": self.input_plane_z,
            "output_plane_z_mm": self.output_plane_z,
            "backward_plane_z_mm": self.backward_plane_z,
            "sensor_width_mm": self.sensor_width,
            "sensor_height_mm": self.sensor_height,
            "materials": mats,
            "surfaces": [
                {"type": s.kind, "z_mm": s.z, "radius_mm": s.radius,
                 "semi_aperture_mm": s.semi_aperture, "material_after": s.material_after}
                for s in self.elements
            ],
        }
        return doc

    def lens_hash(self) -> bytes:
        """SHA-256 of the canonical serialization (32 bytes)."""
        return hashlib.sha256(serialize_lens_system(self).encode("utf-8")).digest()


def _validate(lens: LensSystem) -> None:
    elems = lens.elements
    if not elems:
        raise LensValidationError("lens has no surfaces")
    stops = [s for s in elems if s.kind == STOP]
    if len(stops) != 1:
        raise LensValidationError(f"exactly one aperture stop required, found {len(stops)}")
    if not any(s.is_optical for s in elems):
        raise LensValidationError("lens has no optical surface")
    for i, s in enumerate(elems):
        if s.kind not in _DOC_KINDS:
            raise LensValidationError(f"surfaces[{i}]: unknown kind {s.kind!r}")
        if not (s.semi_aperture > 0 and math.isfinite(s.semi_aperture)):
            raise LensValidationError(f"surfaces[{i}]: clear semi-aperture must be positive")
        if s.kind == SPHERICAL and s.radius == 0.0:
            raise LensValidationError(f"surfaces[{i}]: spherical surface needs a non-zero radius")
        if s.kind in (PLANAR, STOP) and s.radius != 0.0:
            raise LensValidationError(f"surfaces[{i}]: {s.kind} surface must have radius 0")
        if s.kind == SPHERICAL and abs(s.radius) < s.semi_aperture:
            raise LensValidationError(
                f"surfaces[{i}]: |radius| {abs(s.radius):g} smaller than semi-aperture "
                f"{s.semi_aperture:g}; cap cannot span the aperture")
        if s.semi_aperture > lens.housing_semi_aperture + 1e-12:
            raise LensValidationError(f"surfaces[{i}]: semi-aperture exceeds housing")
        if s.material_after != "air" and s.material_after not in lens.materials:
            raise LensValidationError(f"surfaces[{i}]: unknown material {s.material_after!r}")
        if i and not s.z > elems[i - 1].z:
            raise LensValidationError(
                f"surfaces[{i}]: non-increasing axial position ({s.z:g} after {elems[i - 1].z:g})")
    if elems[-1].material_after != "air":
        raise LensValidationError("last surface must exit into air")
    front = min(s.z_extent()[0] for s in elems)
    rear = max(s.z_extent()[1] for s in elems)
    if not lens.input_plane_z < front:
        raise LensValidationError("input plane must lie in front of the first surface")
    if not lens.output_plane_z > rear:
        raise LensValidationError("output plane must lie behind the last surface")
    if not (lens.sensor_width > 0 and lens.sensor_height > 0):
        raise LensValidationError("sensor dimensions must be positive")
    grid = np.arange(LAMBDA_MIN, LAMBDA_MAX + 1e-9, 5.0)
    for name, m in lens.materials.items():
        if np.any(np.asarray(m.ior(grid)) < 1.0):
            raise LensValidationError(f"material {name!r}: ior below 1 inside the visible band")


_REQUIRED_TOP = {
    "name": str,
    "housing_semi_aperture_mm": (int, float),
    "input_plane_z_mm": (int, float),
    "output_plane_z_mm": (int, float),
    "sensor_width_mm": (int, float),
    "sensor_height_mm": (int, float),
    "materials": dict,
    "surfaces": list,
}
_REQUIRED_SURF = {
    "type": str,
    "z_mm": (int, float),
    "radius_mm": (int, float),
    "semi_aperture_mm": (int, float),
    "material_after": str,
}


def _field(obj, key, types, where):
    if key not in obj:
        raise LensFormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, types):
        raise LensFormatError(f"{where}.{key}: wrong type {type(val).__name__}")
    return val


def parse_lens_system(document: str) -> LensSystem:
    """Parse and validate a lens document (JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise LensFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise LensFormatError("top level must be an object")
    top = {k: _field(doc, k, t, "lens") for k, t in _REQUIRED_TOP.items()}
    materials = {}
    for name, spec in top["materials"].items():
        where = f"materials.{name}"
        if not isinstance(spec, dict):
            raise LensFormatError(f"{where}: must be an object")
        model = _field(spec, "model", str, where)
        params = _field(spec, "params", list, where)
        if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in params):
            raise LensFormatError(f"{where}.params: numbers expected")
        materials[name] = Material(name, model, tuple(params))
    elements = []
    for i, s in enumerate(top["surfaces"]):
        where = f"surfaces[{i}]"
        if not isinstance(s, dict):
            raise LensFormatError(f"{where}: must be an object")
        f = {k: _field(s, k, t, where) for k, t in _REQUIRED_SURF.items()}
        kind = f["type"]
        if kind not in _DOC_KINDS:
            raise LensFormatError(f"{where}.type: expected one of {_DOC_KINDS}, got {kind!r}")
        elements.append(Surface(kind, float(f["z_mm"]), float(f["radius_mm"]),
                                float(f["semi_aperture_mm"]), f["material_after"]))
    back = doc.get("backward_plane_z_mm")
    if back is not None and (isinstance(back, bool) or not isinstance(back, (int, float))):
        raise LensFormatError("lens.backward_plane_z_mm: wrong type")
    return LensSystem(
        name=top["name"],
        elements=tuple(elements),
        materials=materials,
        housing_semi_aperture=float(top["housing_semi_aperture_mm"]),
        input_plane_z=float(top["input_plane_z_mm"]),
        output_plane_z=float(top["output_plane_z_mm"]),
        sensor_width=float(top["sensor_width_mm"]),
        sensor_height=float(top["sensor_height_mm"]),
        backward_plane_z=None if back is None else float(back),
    )


def serialize_lens_system(lens: LensSystem) -> str:
    return json.dumps(lens.to_dict(), indent=2, sort_keys=True)


def load_lens(path) -> LensSystem:
    return parse_lens_system(Path(path).read_text(encoding="utf-8"))


BUNDLED = {
    "biconvex": "biconvex.lens.json",
    "dgauss59": "dgauss59.lens.json",
    "wide22": "wide22.lens.json",
}


def bundled_lens_path(name: str) -> Path:
    return Path(str(resources.files("pltm.data") / "lenses" / BUNDLED[name]))


def load_bundled(name: str) -> LensSystem:
    """Load one of the prescriptions shipped with the package."""
    return load_lens(bundled_lens_path(name))

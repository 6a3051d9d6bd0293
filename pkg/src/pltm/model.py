"""Factorized classifier/regressor predictor and its binary file format."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lens import LensSystem
from .nn import Mlp, RegressorTargets, direction_from_transverse, mlp_forward
from .training import normalize_inputs
from .tracer import BACKWARD, FORWARD

MAGIC = b"PLTM-NN\0"
VERSION = 1
HEADER = struct.Struct("<8sIIQ32s4f4f5d5d")
MODES = {FORWARD: 0, BACKWARD: 1}


class ModelFormatError(ValueError):
    pass


class LensMismatchError(ValueError):
    pass


@dataclass
class FactorizedModel:
    """Classifier gate plus regressor for one path of one lens."""

    classifier: Mlp
    regressor: Mlp
    input_min: np.ndarray
    input_max: np.ndarray
    targets: RegressorTargets
    path_id: int
    lens_hash: bytes
    mode: str = FORWARD
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.input_min = np.asarray(self.input_min, dtype=np.float32)
        self.input_max = np.asarray(self.input_max, dtype=np.float32)
        if self.input_min.shape != (4,) or self.input_max.shape != (4,):
            raise ValueError("input normalization must have 4 dimensions")
        if self.classifier.sizes[0] != 4 or self.classifier.sizes[-1] != 1:
            raise ValueError("classifier must map 4 inputs to 1 logit")
        if self.regressor.sizes[0] != 4 or self.regressor.sizes[-1] != 5:
            raise ValueError("regressor must map 4 inputs to 5 outputs")

    def check_lens(self, lens: LensSystem):
        if lens.lens_hash() != self.lens_hash:
            raise LensMismatchError(f"model for path {self.path_id} was trained on a different lens")


@dataclass
class Prediction:
    """Per-ray prediction; rows with ``valid`` False hold NaN."""

    valid: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray


def _features(r, w, wavelength):
    w = np.asarray(w)
    return np.column_stack([np.asarray(r), w[:, 0], w[:, 1], np.asarray(wavelength)]).astype(np.float32)


def _normalized(fm: FactorizedModel, x):
    xn = normalize_inputs(x, fm.input_min, fm.input_max)
    out = (xn < -1.0) | (xn > 1.0)
    if out.any():
        fm.clamped += int(out.any(axis=1).sum())
        np.clip(xn, -1.0, 1.0, out=xn)
    return xn


def classify(fm: FactorizedModel, r, w, wavelength, threshold: float = 0.5, fast: bool = False):
    """Boolean gate: sigmoid(logit) >= threshold."""
    xn = _normalized(fm, _features(r, w, wavelength))
    if threshold <= 0.0:
        return np.ones(len(xn), dtype=bool)
    if threshold >= 1.0:
        return np.zeros(len(xn), dtype=bool)
    logit = mlp_forward(fm.classifier, xn, fast=fast)[:, 0]
    return logit >= np.float32(np.log(threshold / (1.0 - threshold)))


def regress(fm: FactorizedModel, xn, fast: bool = False):
    raw = mlp_forward(fm.regressor, xn, fast=fast).astype(np.float64)
    t = fm.targets
    phys = raw * t.scale + t.offset
    d, _ = direction_from_transverse(phys[:, 2:4], t.axial_sign)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return phys[:, 0:2], d, np.clip(phys[:, 4], 0.0, 1.0)


def predict(fm: FactorizedModel, r, w, wavelength, threshold: float = 0.5,
            fast: bool = False) -> Prediction:
    """Gate with the classifier, then evaluate the regressor on the survivors.

    ``w`` holds canonical directions, (N, 2) transverse or (N, 3).  Inputs
    outside the training bounds are clamped and counted in ``fm.clamped``.
    Returned directions have unit length and intensities lie in [0, 1].
    """
    xn = _normalized(fm, _features(r, w, wavelength))
    n = len(xn)
    if threshold <= 0.0:
        gate = np.ones(n, dtype=bool)
    else:
        cut = np.float32(np.log(threshold / (1.0 - threshold))) if threshold < 1.0 else np.inf
        gate = mlp_forward(fm.classifier, xn, fast=fast)[:, 0] >= cut
    pos = np.full((n, 2), np.nan)
    dirs = np.full((n, 3), np.nan)
    inten = np.full(n, np.nan)
    idx = np.flatnonzero(gate)
    if len(idx):
        p, d, i = regress(fm, xn[idx], fast=fast)
        pos[idx], dirs[idx], inten[idx] = p, d, i
    return Prediction(gate, pos, dirs, inten)


# ---------------------------------------------------------------- file io

def _pack_mlp(m: Mlp) -> bytes:
    sizes = m.sizes
    parts = [struct.pack("<I", len(sizes) - 1), struct.pack(f"<{len(sizes)}I", *sizes),
             struct.pack("<I", {"tanh": 0, "relu": 1}[m.activation])]
    for w, b in zip(m.weights, m.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def _unpack_mlp(buf: bytes, off: int):
    (n_layers,) = struct.unpack_from("<I", buf, off)
    off += 4
    if not 1 <= n_layers <= 64:
        raise ModelFormatError(f"implausible layer count {n_layers}")
    sizes = struct.unpack_from(f"<{n_layers + 1}I", buf, off)
    off += 4 * (n_layers + 1)
    (act,) = struct.unpack_from("<I", buf, off)
    off += 4
    ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        nw = fi * fo * 4
        if off + nw + fo * 4 > len(buf):
            raise ModelFormatError("truncated parameter block")
        ws.append(np.frombuffer(buf, dtype="<f4", count=fi * fo, offset=off).reshape(fi, fo).astype(np.float32))
        off += nw
        bs.append(np.frombuffer(buf, dtype="<f4", count=fo, offset=off).astype(np.float32))
        off += fo * 4
    return Mlp(ws, bs, {0: "tanh", 1: "relu"}.get(act, "tanh")), off


def model_bytes(fm: FactorizedModel) -> bytes:
    t = fm.targets
    head = HEADER.pack(MAGIC, VERSION, MODES[fm.mode], fm.path_id, fm.lens_hash,
                       *map(float, fm.input_min), *map(float, fm.input_max),
                       *map(float, t.offset), *map(float, t.scale))
    body = head + _pack_mlp(fm.classifier) + _pack_mlp(fm.regressor)
    return body + struct.pack("<I", zlib.crc32(body))


def save_model(path, fm: FactorizedModel) -> None:
    Path(path).write_bytes(model_bytes(fm))


def load_model(path, lens: LensSystem | None = None) -> FactorizedModel:
    """Read a model file; with ``lens`` the lens hash must match."""
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size + 4:
        raise ModelFormatError(f"{path}: truncated header")
    magic, version, mode, pid, lhash, *nums = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ModelFormatError(f"{path}: checksum mismatch (truncated or corrupt)")
    try:
        clf, off = _unpack_mlp(buf, HEADER.size)
        reg, off = _unpack_mlp(buf, off)
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated network block") from exc
    if off != len(buf) - 4:
        raise ModelFormatError(f"{path}: {len(buf) - 4 - off} trailing bytes")
    modes = {v: k for k, v in MODES.items()}
    if mode not in modes:
        raise ModelFormatError(f"{path}: unknown mode {mode}")
    axial = 1.0 if modes[mode] == FORWARD else -1.0
    targets = RegressorTargets(np.array(nums[8:13]), np.array(nums[13:18]), axial)
    fm = FactorizedModel(clf, reg, np.array(nums[0:4]), np.array(nums[4:8]), targets, pid, lhash,
                         modes[mode])
    if lens is not None:
        fm.check_lens(lens)
    return fm


# single networks, written by ``train --kind`` before the pair is assembled
NET_MAGIC = b"PLTM-NET"
NET_HEADER = struct.Struct("<8sII32sQ4f4f5d5d")
NET_KINDS = {"classifier": 0, "regressor": 1}


def save_network(path, kind: str, m: Mlp, lens_hash: bytes, path_id: int, mode: str,
                 input_min, input_max, targets: RegressorTargets | None = None) -> None:
    t = targets or RegressorTargets(np.zeros(5), np.ones(5))
    head = NET_HEADER.pack(NET_MAGIC, VERSION, NET_KINDS[kind] | (MODES[mode] << 8), lens_hash,
                           path_id, *map(float, input_min), *map(float, input_max),
                           *map(float, t.offset), *map(float, t.scale))
    body = head + _pack_mlp(m)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_network(path) -> dict:
    buf = Path(path).read_bytes()
    if len(buf) < NET_HEADER.size + 4:
        raise ModelFormatError(f"{path}: truncated header")
    magic, version, kind_mode, lhash, pid, *nums = NET_HEADER.unpack_from(buf)
    if magic != NET_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ModelFormatError(f"{path}: checksum mismatch (truncated or corrupt)")
    m, _ = _unpack_mlp(buf, NET_HEADER.size)
    kinds = {v: k for k, v in NET_KINDS.items()}
    modes = {v: k for k, v in MODES.items()}
    mode = modes[kind_mode >> 8]
    return {"kind": kinds[kind_mode & 0xFF], "mlp": m, "lens_hash": lhash, "path_id": pid,
            "mode": mode, "input_min": np.array(nums[0:4]), "input_max": np.array(nums[4:8]),
            "targets": RegressorTargets(np.array(nums[8:13]), np.array(nums[13:18]),
                                        1.0 if mode == FORWARD else -1.0)}


def assemble(classifier: dict, regressor: dict) -> FactorizedModel:
    """Pair two network files into a model; they must describe one path."""
    for key in ("lens_hash", "path_id", "mode"):
        if classifier[key] != regressor[key]:
            raise ModelFormatError(f"classifier and regressor disagree on {key}")
    if not (np.array_equal(classifier["input_min"], regressor["input_min"])
            and np.array_equal(classifier["input_max"], regressor["input_max"])):
        raise ModelFormatError("classifier and regressor disagree on input bounds")
    return FactorizedModel(classifier["mlp"], regressor["mlp"], classifier["input_min"],
                           classifier["input_max"], regressor["targets"], classifier["path_id"],
                           classifier["lens_hash"], classifier["mode"])

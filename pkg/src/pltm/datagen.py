"""Training data for the per-path lens maps.

Inputs live in the canonical domain ``(r, wx, wy, lambda)``: radius on the
input plane, the two transverse components of the quarter-sphere direction
(``wy >= 0``) and the wavelength.  Samplers work in a primary sample space
``u in [0, 1)^4`` that the uniform sampler maps to the domain, so the
Metropolis chains below target the same density as uniform sampling
restricted to the valid region.

Dataset files are little-endian: a fixed header (see ``HEADER``) followed by
``record_count`` rows of ``RECORD_WIDTH`` float32 values laid out as
``FIELDS``.  Layout details are in ``docs/file_formats.md``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .lens import LensSystem
from .spectrum import sample_wavelength
from .tracer import BACKWARD, FORWARD, TraceResult, canonical_rays, trace_path

FIELDS = ("r", "wx", "wy", "wavelength", "valid", "px", "py", "ox", "oy", "oz", "intensity")
RECORD_WIDTH = len(FIELDS)
INPUT_DIM = 4
MAGIC = b"PLTM"
VERSION = 1
HEADER = struct.Struct("<4sIIIQ32sQQII4f4f")
KINDS = {"regressor": 0, "classifier": 1}
MODES = {FORWARD: 0, BACKWARD: 1}


class DatasetFormatError(ValueError):
    pass


class NoValidSeedError(RuntimeError):
    """Uniform rejection found no valid input for a path within the budget."""


@dataclass(frozen=True)
class Domain:
    """Sampled region of the canonical input space."""

    mode: str = FORWARD
    max_angle_deg: float = 80.0
    r_max: float | None = None

    def radius(self, lens: LensSystem) -> float:
        return lens.housing_semi_aperture if self.r_max is None else self.r_max

    def bounds(self, lens: LensSystem):
        s = math.sin(math.radians(self.max_angle_deg))
        lo = np.array([0.0, -s, 0.0, 380.0])
        hi = np.array([self.radius(lens), s, s, 780.0])
        return lo, hi


@dataclass
class Samples:
    """Canonical inputs; directions are full unit vectors (N, 3)."""

    r: np.ndarray
    w: np.ndarray
    wavelength: np.ndarray

    def __len__(self):
        return len(self.r)

    def features(self) -> np.ndarray:
        return np.column_stack([self.r, self.w[:, 0], self.w[:, 1], self.wavelength])

    def take(self, idx) -> "Samples":
        return Samples(self.r[idx], self.w[idx], self.wavelength[idx])


def _axial(wx, wy, mode):
    sign = 1.0 if mode == FORWARD else -1.0
    return sign * np.sqrt(np.maximum(1.0 - wx * wx - wy * wy, 0.0))


def samples_from_features(x, mode: str) -> Samples:
    """Inverse of :meth:`Samples.features` (axial component re-derived)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.column_stack([x[:, 1], x[:, 2], _axial(x[:, 1], x[:, 2], mode)])
    return Samples(x[:, 0].copy(), w, x[:, 3].copy())


def primary_to_input(u, lens: LensSystem, domain: Domain) -> Samples:
    """Map primary samples to canonical inputs.

    r is uniform on [0, r_max]; the direction is area-uniform over the part
    of the quarter-sphere within ``max_angle_deg`` of the axis; lambda is
    CIE-importance sampled.  Values are rounded to float32 so that stored
    records reproduce exactly the rays that were traced.
    """
    u = np.asarray(u, dtype=np.float64)
    cos_max = math.cos(math.radians(domain.max_angle_deg))
    r = u[:, 0] * domain.radius(lens)
    cos_t = 1.0 - u[:, 1] * (1.0 - cos_max)
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    phi = u[:, 2] * math.pi
    wx = sin_t * np.cos(phi)
    wy = sin_t * np.sin(phi)
    lam, _ = sample_wavelength(u[:, 3])
    x = np.column_stack([r, wx, wy, lam]).astype(np.float32).astype(np.float64)
    x[:, 2] = np.abs(x[:, 2])
    return samples_from_features(x, domain.mode)


def sample_input_uniform(rng: np.random.Generator, lens: LensSystem, n: int,
                         domain: Domain = Domain()) -> Samples:
    return primary_to_input(rng.random((n, INPUT_DIM)), lens, domain)


def trace_samples(samples: Samples, path_id: int, lens: LensSystem, mode: str) -> TraceResult:
    rays = canonical_rays(samples.r, samples.w, samples.wavelength, lens, mode)
    return trace_path(rays, path_id, lens, mode)


def _records(samples: Samples, res: TraceResult, valid_only: bool) -> np.ndarray:
    rec = np.zeros((len(samples), RECORD_WIDTH), dtype=np.float32)
    rec[:, :4] = samples.features()
    v = res.valid
    rec[:, 4] = v
    rec[v, 5:7] = res.position[v]
    rec[v, 7:10] = res.direction[v]
    rec[v, 10] = res.intensity[v]
    if valid_only and not v.all():
        raise AssertionError("regressor record without a valid trace")
    return rec


@dataclass
class McmcConfig:
    chains: int = 16
    burn_in: int = 1000
    restart_prob: float = 0.1
    sigma: tuple = (0.02, 0.02, 0.02, 0.025)
    seed_budget: int = 2_000_000
    target_accept: tuple = (0.2, 0.8)
    adapt_every: int = 100


@dataclass
class McmcStats:
    accept_rate: float = 0.0
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(INPUT_DIM))
    proposals: int = 0


def _find_seeds(rng, lens, path_id, domain, count, budget):
    found_u = []
    tried = 0
    batch = 4096
    while tried < budget and sum(len(f) for f in found_u) < count:
        m = min(batch, budget - tried)
        u = rng.random((m, INPUT_DIM))
        res = trace_samples(primary_to_input(u, lens, domain), path_id, lens, domain.mode)
        found_u.append(u[res.valid])
        tried += m
        batch = min(batch * 2, 262144)
    seeds = np.concatenate(found_u) if found_u else np.zeros((0, INPUT_DIM))
    if not len(seeds):
        raise NoValidSeedError(f"no valid seed for path {path_id} in {budget} uniform trials")
    idx = np.arange(count) % len(seeds)
    return seeds[idx]


def mcmc_valid_sampler(lens: LensSystem, path_id: int, n: int, rng: np.random.Generator,
                       domain: Domain = Domain(), config: McmcConfig = McmcConfig(),
                       stats: McmcStats | None = None):
    """Yield blocks of valid records drawn by Metropolis chains.

    The target is the indicator of the valid region in primary sample space.
    Proposals are Gaussian steps (per-dimension ``sigma``), replaced by an
    independent uniform draw with probability ``restart_prob``; out-of-range
    or invalid proposals are rejected and the chain repeats its state.
    ``sigma`` is rescaled during burn-in until the acceptance rate sits in
    ``target_accept``.  Chains advance in lockstep and their states are
    emitted round-robin by chain index, ``chains`` records per step.
    """
    c = config.chains
    u = _find_seeds(rng, lens, path_id, domain, c, config.seed_budget)
    cur = primary_to_input(u, lens, domain)
    cur_res = trace_samples(cur, path_id, lens, domain.mode)
    sigma = np.asarray(config.sigma, dtype=np.float64).copy()
    lo, hi = config.target_accept
    acc_window = 0
    prop_window = 0
    acc_total = 0
    prop_total = 0

    def step():
        nonlocal u, cur, acc_window, prop_window, acc_total, prop_total
        prop = u + rng.normal(size=u.shape) * sigma
        restart = rng.random(c) < config.restart_prob
        prop[restart] = rng.random((int(restart.sum()), INPUT_DIM))
        inside = np.all((prop >= 0.0) & (prop < 1.0), axis=1)
        prop = np.where(inside[:, None], prop, u)
        cand = primary_to_input(prop, lens, domain)
        res = trace_samples(cand, path_id, lens, domain.mode)
        acc = res.valid & inside
        u = np.where(acc[:, None], prop, u)
        cur = Samples(np.where(acc, cand.r, cur.r), np.where(acc[:, None], cand.w, cur.w),
                      np.where(acc, cand.wavelength, cur.wavelength))
        for name in ("valid", "intensity"):
            setattr(cur_res, name, np.where(acc, getattr(res, name), getattr(cur_res, name)))
        cur_res.position = np.where(acc[:, None], res.position, cur_res.position)
        cur_res.direction = np.where(acc[:, None], res.direction, cur_res.direction)
        acc_window += int(acc.sum())
        prop_window += c
        acc_total += int(acc.sum())
        prop_total += c

    for i in range(config.burn_in):
        step()
        if (i + 1) % config.adapt_every == 0:
            rate = acc_window / max(prop_window, 1)
            if rate < lo:
                sigma *= 0.6
            elif rate > hi:
                sigma = np.minimum(sigma * 1.6, 0.5)
            acc_window = prop_window = 0
    acc_total = prop_total = 0
    emitted = 0
    while emitted < n:
        step()
        take = min(c, n - emitted)
        yield _records(cur.take(slice(0, take)), _take_result(cur_res, take), valid_only=True)
        emitted += take
        if stats is not None:
            stats.accept_rate = acc_total / max(prop_total, 1)
            stats.sigma = sigma.copy()
            stats.proposals = prop_total


def _take_result(res: TraceResult, k: int) -> TraceResult:
    return TraceResult(res.path_id, res.valid[:k], res.position[:k], res.direction[:k],
                       res.intensity[:k])


def mcmc_records(lens, path_id, n, rng, domain=Domain(), config=McmcConfig(), stats=None):
    blocks = list(mcmc_valid_sampler(lens, path_id, n, rng, domain, config, stats))
    if not blocks:
        return np.zeros((0, RECORD_WIDTH), dtype=np.float32)
    return np.concatenate(blocks)


# ------------------------------------------------------------------- files

@dataclass
class DatasetHeader:
    kind: str
    mode: str
    path_id: int
    lens_hash: bytes
    seed: int
    record_count: int
    input_min: np.ndarray
    input_max: np.ndarray


@dataclass
class Dataset:
    header: DatasetHeader
    records: np.ndarray  # (n, RECORD_WIDTH) float32

    @property
    def inputs(self) -> np.ndarray:
        return self.records[:, :4]

    @property
    def valid(self) -> np.ndarray:
        return self.records[:, 4] > 0.5


def input_bounds(records: np.ndarray, lens: LensSystem, domain: Domain):
    """Per-dimension min/max covering the data (falls back to the domain)."""
    lo, hi = domain.bounds(lens)
    if len(records):
        x = records[:, :4].astype(np.float64)
        lo = np.minimum(lo, x.min(axis=0))
        hi = np.maximum(hi, x.max(axis=0))
    return lo.astype(np.float32), hi.astype(np.float32)


def make_dataset(kind, records, lens, path_id, domain, seed) -> Dataset:
    lo, hi = input_bounds(records, lens, domain)
    hdr = DatasetHeader(kind, domain.mode, int(path_id), lens.lens_hash(), int(seed), len(records),
                        lo, hi)
    return Dataset(hdr, np.ascontiguousarray(records, dtype=np.float32))


def write_dataset(path, ds: Dataset) -> None:
    h = ds.header
    if len(ds.records) != h.record_count:
        raise ValueError("record_count does not match payload")
    head = HEADER.pack(MAGIC, VERSION, KINDS[h.kind], MODES[h.mode], h.path_id, h.lens_hash,
                       h.seed, h.record_count, RECORD_WIDTH, 0, *map(float, h.input_min),
                       *map(float, h.input_max))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(ds.records.astype("<f4", copy=False).tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    (magic, version, kind, mode, pid, lhash, seed, count, width, _, *bounds) = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if width != RECORD_WIDTH:
        raise DatasetFormatError(f"{path}: record width {width}, expected {RECORD_WIDTH}")
    payload = len(raw) - HEADER.size
    if payload != count * width * 4:
        raise DatasetFormatError(f"{path}: payload holds {payload} bytes, header says {count} records")
    rec = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(count, width).astype(np.float32)
    kinds = {v: k for k, v in KINDS.items()}
    modes = {v: k for k, v in MODES.items()}
    hdr = DatasetHeader(kinds[kind], modes[mode], pid, lhash, seed, count,
                        np.array(bounds[:4], dtype=np.float32), np.array(bounds[4:], dtype=np.float32))
    return Dataset(hdr, rec)


def dataset_file_size(n: int) -> int:
    return HEADER.size + n * RECORD_WIDTH * 4


# ---------------------------------------------------------------- builders

def build_regressor_dataset(lens: LensSystem, path_id: int, n: int, seed: int = 0,
                            domain: Domain = Domain(), config: McmcConfig = McmcConfig(),
                            stats: McmcStats | None = None) -> Dataset:
    """``n`` valid records from the Metropolis sampler."""
    rng = np.random.default_rng(seed)
    rec = mcmc_records(lens, path_id, n, rng, domain, config, stats) if n else \
        np.zeros((0, RECORD_WIDTH), dtype=np.float32)
    return make_dataset("regressor", rec, lens, path_id, domain, seed)


def _uniform_invalid(rng, lens, path_id, domain, n):
    out = []
    got = 0
    while got < n:
        u = rng.random((max(4096, 2 * (n - got)), INPUT_DIM))
        s = primary_to_input(u, lens, domain)
        res = trace_samples(s, path_id, lens, domain.mode)
        rec = _records(s, res, valid_only=False)[~res.valid]
        out.append(rec)
        got += len(rec)
    return np.concatenate(out)[:n] if out else np.zeros((0, RECORD_WIDTH), dtype=np.float32)


def _boundary_invalid(rng, lens, path_id, domain, valid_rec, n, scale=0.03):
    """Invalid inputs found by small perturbations of valid ones."""
    lo, hi = domain.bounds(lens)
    span = hi - lo
    out = []
    got = 0
    while got < n:
        base = valid_rec[rng.integers(0, len(valid_rec), size=max(4096, 2 * (n - got))), :4]
        x = base.astype(np.float64) + rng.normal(size=base.shape) * scale * span
        x = np.clip(x, lo, hi)
        x[:, 1:3] /= np.maximum(1.0, np.hypot(x[:, 1], x[:, 2]) / span[2])[:, None]
        x = x.astype(np.float32).astype(np.float64)
        s = samples_from_features(x, domain.mode)
        res = trace_samples(s, path_id, lens, domain.mode)
        rec = _records(s, res, valid_only=False)[~res.valid]
        out.append(rec)
        got += len(rec)
    return np.concatenate(out)[:n]


def boundary_fraction(valid_rec, invalid_rec, lens, domain, radius=0.05) -> float:
    """Share of invalid inputs within ``radius`` (normalized units) of a valid one."""
    if not len(valid_rec) or not len(invalid_rec):
        return 0.0
    lo, hi = domain.bounds(lens)
    span = hi - lo
    tree = cKDTree((valid_rec[:, :4] - lo) / span)
    d, _ = tree.query((invalid_rec[:, :4] - lo) / span, k=1, distance_upper_bound=radius)
    return float(np.mean(np.isfinite(d)))


def build_classifier_dataset(lens: LensSystem, path_id: int, n: int, seed: int = 0,
                             domain: Domain = Domain(), config: McmcConfig = McmcConfig(),
                             min_boundary_fraction: float = 0.10,
                             oversample_fraction: float = 0.25) -> Dataset:
    """Balanced valid/invalid records, shuffled with the run seed.

    Invalid records come from uniform rejection.  If fewer than
    ``min_boundary_fraction`` of them lie near a valid sample, a share
    ``oversample_fraction`` of the invalid half is replaced with invalid
    perturbations of valid samples.
    """
    rng = np.random.default_rng(seed)
    n_valid = n // 2 + n % 2
    n_invalid = n // 2
    valid = mcmc_records(lens, path_id, n_valid, rng, domain, config) if n_valid else \
        np.zeros((0, RECORD_WIDTH), dtype=np.float32)
    invalid = _uniform_invalid(rng, lens, path_id, domain, n_invalid) if n_invalid else \
        np.zeros((0, RECORD_WIDTH), dtype=np.float32)
    if n_invalid and len(valid):
        probe = slice(0, min(20000, n_invalid))
        if boundary_fraction(valid, invalid[probe], lens, domain) < min_boundary_fraction:
            k = int(round(oversample_fraction * n_invalid))
            invalid[:k] = _boundary_invalid(rng, lens, path_id, domain, valid, k)
    rec = np.concatenate([valid, invalid])
    rec = rec[rng.permutation(len(rec))]
    return make_dataset("classifier", rec, lens, path_id, domain, seed)

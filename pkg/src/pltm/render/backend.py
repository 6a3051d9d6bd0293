"""Lens transport backends shared by both integrators.

A backend answers one question: given world-frame input rays on the entry
plane of a mode, where does a path deliver them?  The oracle traces the
rays, the neural backend evaluates the trained per-path models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..lens import LensSystem
from ..model import FactorizedModel, predict
from ..tracer import FORWARD, RayState, canonicalize, trace_path


@dataclass
class Transport:
    """World-frame exit state; rows with ``valid`` False hold NaN."""

    valid: np.ndarray
    position: np.ndarray
    direction: np.ndarray
    intensity: np.ndarray


def entry_plane(lens: LensSystem, mode: str) -> float:
    return lens.input_plane_z if mode == FORWARD else lens.backward_plane_z


class OracleBackend:
    name = "oracle"

    def __init__(self, lens: LensSystem, paths: dict[str, list[int]] | None = None):
        self.lens = lens
        self._paths = paths

    def has_path(self, path_id: int, mode: str) -> bool:
        return self._paths is None or path_id in self._paths.get(mode, [])

    def query(self, path_id: int, p_in, w_in, wavelength, mode: str = FORWARD) -> Transport:
        p_in = np.asarray(p_in, dtype=np.float64)
        o = np.column_stack([p_in[:, 0], p_in[:, 1], np.full(len(p_in), entry_plane(self.lens, mode))])
        res = trace_path(RayState(o, np.asarray(w_in, dtype=np.float64), 1.0, wavelength),
                         path_id, self.lens, mode)
        return Transport(res.valid, res.position, res.direction, res.intensity)


class NeuralBackend:
    """Per-path factorized models, keyed by ``(mode, path_id)``."""

    name = "neural"

    def __init__(self, lens: LensSystem, models, threshold: float = 0.5, fast: bool = False):
        self.lens = lens
        self.models: dict[tuple[str, int], FactorizedModel] = {}
        for fm in models:
            fm.check_lens(lens)
            self.models[(fm.mode, fm.path_id)] = fm
        self.threshold = threshold
        self.fast = fast

    def has_path(self, path_id: int, mode: str) -> bool:
        return (mode, path_id) in self.models

    def with_threshold(self, threshold: float) -> "NeuralBackend":
        return NeuralBackend(self.lens, list(self.models.values()), threshold, self.fast)

    def query(self, path_id: int, p_in, w_in, wavelength, mode: str = FORWARD) -> Transport:
        try:
            fm = self.models[(mode, path_id)]
        except KeyError:
            raise KeyError(f"no {mode} model for path {path_id}") from None
        r, wc, xf = canonicalize(p_in, w_in)
        pr = predict(fm, r, wc, wavelength, self.threshold, self.fast)
        v = pr.valid
        pos = np.full_like(pr.position, np.nan)
        dirs = np.full_like(pr.direction, np.nan)
        if v.any():
            sub = xf.take(v)
            pos[v] = sub.inverse(pr.position[v])
            dirs[v] = sub.inverse(pr.direction[v])
        return Transport(v, pos, dirs, pr.intensity)

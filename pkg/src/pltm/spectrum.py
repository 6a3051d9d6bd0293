"""CIE 1931 colour matching functions and wavelength importance sampling."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np

from .lens import LAMBDA_MAX, LAMBDA_MIN


@lru_cache(maxsize=1)
def cie_table() -> np.ndarray:
    """(81, 4) array of wavelength, xbar, ybar, zbar at 5 nm steps."""
    path = resources.files("pltm.data") / "cie1931_2deg_5nm.csv"
    with path.open("r", encoding="utf-8") as fh:
        table = np.loadtxt(fh, delimiter=",", skiprows=1)
    table.setflags(write=False)
    return table


def cmf(wavelength) -> np.ndarray:
    """Linearly interpolated (xbar, ybar, zbar), shape (..., 3)."""
    t = cie_table()
    lam = np.asarray(wavelength, dtype=np.float64)
    return np.stack([np.interp(lam, t[:, 0], t[:, k]) for k in (1, 2, 3)], axis=-1)


@lru_cache(maxsize=1)
def _sampling_tables():
    t = cie_table()
    lam = t[:, 0]
    f = t[:, 1] + t[:, 2] + t[:, 3]
    seg = 0.5 * (f[:-1] + f[1:]) * np.diff(lam)
    total = seg.sum()
    cdf = np.concatenate([[0.0], np.cumsum(seg)]) / total
    return lam, f / total, cdf


def wavelength_pdf(wavelength):
    """Density (1/nm) of :func:`sample_wavelength` at ``wavelength``."""
    lam, pdf, _ = _sampling_tables()
    return np.interp(wavelength, lam, pdf, left=0.0, right=0.0)


def sample_wavelength(u):
    """Inverse-CDF sample of p(lambda) proportional to xbar + ybar + zbar.

    The density is the piecewise-linear interpolation of the 5 nm table on
    [380, 780] nm and is inverted exactly per segment.  Returns
    ``(wavelength, pdf)``.
    """
    lam, pdf, cdf = _sampling_tables()
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(lam) - 2)
    h = lam[i + 1] - lam[i]
    f0 = pdf[i]
    slope = (pdf[i + 1] - f0) / h
    target = u - cdf[i]
    # solve f0*x + slope*x^2/2 = target for x in [0, h]
    disc = np.maximum(f0 * f0 + 2.0 * slope * target, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.abs(slope) > 1e-14, 2.0 * target / (f0 + np.sqrt(disc)),
                     target / np.where(f0 > 0, f0, 1.0))
    x = np.clip(np.nan_to_num(x), 0.0, h)
    wl = np.clip(lam[i] + x, LAMBDA_MIN, LAMBDA_MAX)
    return wl, f0 + slope * x


@lru_cache(maxsize=1)
def y_normalization() -> float:
    """1 / integral of ybar, so a unit flat spectrum has luminance Y = 1."""
    t = cie_table()
    return 1.0 / np.trapezoid(t[:, 2], t[:, 0])


def spectral_to_xyz(wavelength, radiance, pdf):
    """Monte Carlo XYZ estimate contributions, shape (..., 3)."""
    w = np.asarray(radiance, dtype=np.float64) / np.asarray(pdf, dtype=np.float64)
    return cmf(wavelength) * (w * y_normalization())[..., None]

"""Display encoding and image comparison."""

from __future__ import annotations

import numpy as np

# CIE XYZ (D65 white) to linear sRGB
XYZ_TO_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
SRGB_TO_XYZ = np.linalg.inv(XYZ_TO_SRGB)
DISPLAY_GAMMA = 2.2
MAPE_FLOOR = 1e-3


def xyz_to_linear_srgb(xyz, exposure: float = 1.0) -> np.ndarray:
    return np.asarray(xyz, dtype=np.float64) @ XYZ_TO_SRGB.T * exposure


def linear_srgb_to_xyz(rgb, exposure: float = 1.0) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ SRGB_TO_XYZ.T / exposure


def xyz_to_srgb(xyz, exposure: float = 1.0):
    """Return ``(uint8 image, linear float image)``.

    The float image is linear sRGB scaled by ``exposure``; the 8-bit copy is
    clipped to [0, 1] and gamma encoded with exponent 1/2.2.
    """
    lin = xyz_to_linear_srgb(xyz, exposure)
    disp = np.clip(lin, 0.0, 1.0) ** (1.0 / DISPLAY_GAMMA)
    return np.round(disp * 255.0).astype(np.uint8), lin


def luminance(image) -> np.ndarray:
    """Y channel of an XYZ image (H, W, 3), or the image itself if 2-D."""
    a = np.asarray(image, dtype=np.float64)
    return a[..., 1] if a.ndim == 3 else a


def mape(reference, test, floor: float = MAPE_FLOOR) -> float:
    """Mean over pixels of ``|ref - test| / max(ref, floor)`` on luminance."""
    ref = luminance(reference)
    tst = luminance(test)
    if ref.shape != tst.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {tst.shape}")
    return float(np.mean(np.abs(ref - tst) / np.maximum(ref, floor)))

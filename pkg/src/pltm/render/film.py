"""Film accumulation and splatting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOX = "box"
BILINEAR = "bilinear"


@dataclass
class Film:
    """XYZ accumulator over the physical sensor rectangle.

    Row 0 is the top of the sensor (+y), column 0 the left edge (-x).
    """

    width: int
    height: int
    sensor_width: float
    sensor_height: float
    xyz: np.ndarray = field(default=None, repr=False)
    count: np.ndarray = field(default=None, repr=False)
    dropped: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("film needs at least one pixel")
        if self.xyz is None:
            self.xyz = np.zeros((self.height, self.width, 3))
        if self.count is None:
            self.count = np.zeros((self.height, self.width), dtype=np.int64)

    @classmethod
    def for_lens(cls, lens, width: int, height: int | None = None) -> "Film":
        if height is None:
            height = max(1, int(round(width * lens.sensor_height / lens.sensor_width)))
        return cls(width, height, lens.sensor_width, lens.sensor_height)

    def blank(self) -> "Film":
        return Film(self.width, self.height, self.sensor_width, self.sensor_height)

    @property
    def pixel_size(self) -> tuple[float, float]:
        return self.sensor_width / self.width, self.sensor_height / self.height

    @property
    def pixel_area(self) -> float:
        pw, ph = self.pixel_size
        return pw * ph

    def pixel_centers(self):
        """Sensor coordinates (mm) of pixel centres, arrays of shape (H, W)."""
        pw, ph = self.pixel_size
        x = -0.5 * self.sensor_width + (np.arange(self.width) + 0.5) * pw
        y = 0.5 * self.sensor_height - (np.arange(self.height) + 0.5) * ph
        return np.meshgrid(x, y)

    def to_pixel(self, xy):
        """Continuous pixel coordinates (col, row) of sensor points."""
        xy = np.asarray(xy, dtype=np.float64)
        pw, ph = self.pixel_size
        return (xy[:, 0] + 0.5 * self.sensor_width) / pw, (0.5 * self.sensor_height - xy[:, 1]) / ph

    def merge(self, other: "Film") -> None:
        self.xyz += other.xyz
        self.count += other.count
        self.dropped += other.dropped

    def scaled(self, factor: float) -> "Film":
        return Film(self.width, self.height, self.sensor_width, self.sensor_height,
                    self.xyz * factor, self.count.copy(), self.dropped)

    def luminance(self) -> np.ndarray:
        return self.xyz[..., 1]

    def total(self) -> np.ndarray:
        return self.xyz.reshape(-1, 3).sum(axis=0)


def _accumulate(film: Film, flat_idx, weights, counts=True):
    n_pix = film.width * film.height
    acc = film.xyz.reshape(n_pix, 3)
    for k in range(3):
        acc[:, k] += np.bincount(flat_idx, weights=weights[:, k], minlength=n_pix)
    if counts:
        film.count.reshape(n_pix)[:] += np.bincount(flat_idx, minlength=n_pix)


def splat(film: Film, xy, weight, filter: str = BOX) -> int:
    """Add ``weight`` (N,) or (N,3) at sensor points ``xy`` (N,2) in mm.

    Points outside the sensor rectangle are dropped and counted in
    ``film.dropped``; the number dropped by this call is returned.  The
    bilinear filter spreads each splat over the four nearest pixel centres,
    clamping at the film border so every in-rectangle splat keeps its full
    weight.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim == 1:
        w = np.repeat(w[:, None], 3, axis=1)
    cx, cy = film.to_pixel(xy)
    inside = (cx >= 0.0) & (cx <= film.width) & (cy >= 0.0) & (cy <= film.height)
    inside &= np.isfinite(cx) & np.isfinite(cy)
    n_drop = int(len(xy) - inside.sum())
    film.dropped += n_drop
    cx, cy, w = cx[inside], cy[inside], w[inside]
    if filter == BOX:
        col = np.minimum(cx.astype(np.int64), film.width - 1)
        row = np.minimum(cy.astype(np.int64), film.height - 1)
        _accumulate(film, row * film.width + col, w)
    elif filter == BILINEAR:
        fx, fy = cx - 0.5, cy - 0.5
        x0, y0 = np.floor(fx), np.floor(fy)
        tx, ty = fx - x0, fy - y0
        x0, y0 = x0.astype(np.int64), y0.astype(np.int64)
        for dx, dy, f in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                          (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
            col = np.clip(x0 + dx, 0, film.width - 1)
            row = np.clip(y0 + dy, 0, film.height - 1)
            _accumulate(film, row * film.width + col, w * f[:, None], counts=(dx == 0 and dy == 0))
    else:
        raise ValueError(f"unknown filter {filter!r}")
    return n_drop


def run_tiles(fn, n_tiles: int, threads: int = 1) -> list:
    """Evaluate ``fn(tile)`` for every tile index, results in tile order."""
    if threads <= 1 or n_tiles <= 1:
        return [fn(i) for i in range(n_tiles)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_tiles)))


def tile_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one tile, fixed by the seed and tile keys."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])

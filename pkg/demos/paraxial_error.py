"""Compare the ABCD paraxial approximation with exact tracing.

Traces on-axis parallel rays at growing heights through the biconvex
singlet and prints where each crosses the sensor according to the
matrix model and to the tracer.

    python3 demos/paraxial_error.py
"""

import numpy as np

from pltm.lens import load_bundled
from pltm.paraxial import abcd_of, abcd_trace
from pltm.tracer import FORWARD, RayState, trace_path

WAVELENGTH = 587.6


def main():
    lens = load_bundled("biconvex")
    m = abcd_of(lens, WAVELENGTH)
    heights = np.linspace(0.25, 0.95 * lens.stop.semi_aperture, 8)
    n = len(heights)
    rays = RayState.make(np.column_stack([heights, np.zeros(n), np.full(n, lens.input_plane_z)]),
                         np.tile([0.0, 0.0, 1.0], (n, 1)), np.full(n, WAVELENGTH))
    exact = trace_path(rays, 0, lens, FORWARD)
    print(" height   paraxial    traced     error (mm)")
    for i, h in enumerate(heights):
        hp, _ = abcd_trace(m, h, 0.0)
        ht = exact.position[i, 0]
        print(f"{h:7.3f} {hp:10.4f} {ht:10.4f} {abs(ht - hp):12.2e}")


if __name__ == "__main__":
    main()

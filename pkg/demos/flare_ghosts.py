"""Render every two-reflection ghost of the bundled double-Gauss lens.

Uses the exact tracer, so no trained model is needed.  Writes
``flare_ghosts.pfm`` (linear XYZ) and ``flare_ghosts.png``.

    python3 demos/flare_ghosts.py [--width 192] [--spp 20000]
"""

import argparse
import os

import numpy as np

from pltm.lens import load_bundled
from pltm.render import Film, Light, OracleBackend, combine, render_flare, write_pfm, write_png, xyz_to_srgb
from pltm.tracer import enumerate_paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=192)
    ap.add_argument("--spp", type=int, default=20_000)
    ap.add_argument("--angle", type=float, default=8.0, help="light angle off axis, degrees")
    ap.add_argument("--out", default="flare_ghosts")
    args = ap.parse_args()

    lens = load_bundled("dgauss59")
    ghosts = [p for p in enumerate_paths(lens, 2) if p]
    films = render_flare(lens, OracleBackend(lens), Light.from_angle(args.angle), Film.for_lens(lens, args.width),
                         args.spp, ghosts, seed=1, threads=os.cpu_count() or 1)
    xyz = combine(films).xyz
    write_pfm(args.out + ".pfm", xyz)
    # expose so that the brightest 0.5% of pixels saturate
    y = xyz[..., 1]
    exposure = 1.0 / max(np.percentile(y[y > 0], 99.5), 1e-12) if (y > 0).any() else 1.0
    write_png(args.out + ".png", xyz_to_srgb(xyz, exposure)[0])
    energy = sorted(((f.xyz[..., 1].sum(), pid) for pid, f in films.items()), reverse=True)
    print(f"{len(ghosts)} ghosts; brightest:", ", ".join(f"{pid} ({e:.3g})" for e, pid in energy[:5]))


if __name__ == "__main__":
    main()

"""Command line front end: ``pltm <verb> [flags]``.

Every invocation writes ``run-<verb>.json`` (effective configuration plus a
summary) to ``--out-dir``.  Datasets and models are addressed as
``<out-dir>/<lens-hash>/<mode>-<path-id>/``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (Domain, McmcConfig, McmcStats, NoValidSeedError, build_classifier_dataset,
                      build_regressor_dataset, read_dataset, write_dataset)
from .lens import LensFormatError, LensValidationError, load_bundled, load_lens, BUNDLED
from .model import ModelFormatError, assemble, load_model, load_network, save_model, save_network
from .paraxial import abcd_of, abcd_trace
from .pipeline import artifact_dir, lens_tag
from .render import (Film, Light, NeuralBackend, OracleBackend, combine, get_scene, mape, read_pfm,
                     render_dof, render_flare, write_pfm, write_png, xyz_to_srgb)
from .tracer import (BACKWARD, FORWARD, RayState, enumerate_paths, path_interactions, trace_all,
                     trace_path)
from .training import TrainConfig, train

EXPECTED_ERRORS = (LensFormatError, LensValidationError, ModelFormatError, NoValidSeedError,
                   FileNotFoundError, KeyError, ValueError, RuntimeError, OSError)


class CliError(RuntimeError):
    pass


def _lens(arg: str):
    if arg in BUNDLED and not Path(arg).exists():
        return load_bundled(arg)
    return load_lens(arg)


def _domain(args) -> Domain:
    return Domain(args.mode, args.max_angle)


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _write_run(args, summary: dict) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {"version": __version__, "verb": args.verb, "config": cfg, "summary": summary}
    (out / f"run-{args.verb}.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _neural(lens, models_dir, threshold):
    root = Path(models_dir) / lens_tag(lens)
    files = sorted(root.glob("*/model.pltmnn"))
    if not files:
        raise CliError(f"no models under {root}")
    return NeuralBackend(lens, [load_model(f, lens) for f in files], threshold)


class _TimedBackend:
    """Wraps a backend and accumulates time and rays spent in queries."""

    def __init__(self, inner):
        self.inner = inner
        self.name = inner.name
        self.seconds = 0.0
        self.rays = 0

    def has_path(self, pid, mode):
        return self.inner.has_path(pid, mode)

    def query(self, pid, p, w, lam, mode=FORWARD):
        t = time.perf_counter()
        out = self.inner.query(pid, p, w, lam, mode)
        self.seconds += time.perf_counter() - t
        self.rays += len(p)
        return out


def _backend(args, lens):
    if args.backend == "oracle":
        return OracleBackend(lens)
    return _neural(lens, args.models or args.out_dir, args.threshold)


def _save_image(path: str, xyz, exposure: float, timing: dict) -> None:
    write_pfm(path, xyz)
    u8, _ = xyz_to_srgb(xyz, exposure)
    write_png(str(Path(path).with_suffix(".png")), u8)
    Path(path + ".json").write_text(json.dumps(timing, indent=2, sort_keys=True))


# ------------------------------------------------------------------ verbs

def cmd_validate(args):
    lens = _lens(args.lens)
    info = {"name": lens.name, "surfaces": len(lens.surfaces), "optical": len(lens.optical_surfaces),
            "lens_hash": lens.lens_hash().hex()}
    print(f"ok: {lens.name}: {info['optical']} optical surfaces, hash {lens_tag(lens)}")
    return info


def cmd_trace(args):
    lens = _lens(args.lens)
    z0 = lens.input_plane_z if args.mode == FORWARD else lens.backward_plane_z
    origin = [args.origin[0], args.origin[1], z0]
    ray = RayState.make([origin], [args.direction], args.wavelength)
    outs = trace_all(ray, lens, args.max_reflections, args.i_min, args.mode)
    for o in outs:
        seq = "".join(path_interactions(o.path_id, lens, args.mode))
        print(f"path {o.path_id} {seq} p=({o.position[0]:.9f},{o.position[1]:.9f}) "
              f"w=({o.direction[0]:.9f},{o.direction[1]:.9f},{o.direction[2]:.9f}) I={o.intensity:.9e}")
    return {"outputs": len(outs)}


def cmd_enumerate(args):
    lens = _lens(args.lens)
    ids = enumerate_paths(lens, args.max_reflections, args.mode)
    for pid in ids:
        print(f"{pid} {''.join(path_interactions(pid, lens, args.mode))}")
    return {"paths": ids}


def cmd_gen_data(args):
    lens = _lens(args.lens)
    dom = _domain(args)
    cfg = McmcConfig(chains=args.chains, burn_in=args.burn_in)
    t = time.perf_counter()
    stats = McmcStats()
    if args.kind == "regressor":
        ds = build_regressor_dataset(lens, args.path, args.n, args.seed, dom, cfg, stats)
    else:
        ds = build_classifier_dataset(lens, args.path, args.n, args.seed, dom, cfg)
    out = Path(args.output) if args.output else \
        artifact_dir(args.out_dir, lens, args.path, args.mode) / f"{args.kind}.pltm"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds)
    print(f"wrote {len(ds.records)} {args.kind} records to {out}")
    return {"file": str(out), "records": len(ds.records), "wall_s": time.perf_counter() - t,
            "valid_fraction": float(ds.valid.mean()) if len(ds.records) else 0.0,
            "accept_rate": stats.accept_rate if args.kind == "regressor" else None}


def cmd_train(args):
    lens = _lens(args.lens)
    data = Path(args.data)
    ds = read_dataset(data)
    if ds.header.lens_hash != lens.lens_hash():
        raise CliError(f"{data} was generated for a different lens")
    if args.path is not None and ds.header.path_id != args.path:
        raise CliError(f"{data} holds path {ds.header.path_id}, not {args.path}")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                      lr_decay=args.lr_decay, decay_interval=args.decay_interval, seed=args.seed,
                      finetune_epochs=args.finetune_epochs,
                      finetune_batch_size=args.finetune_batch_size, finetune_lr=args.finetune_lr,
                      direction_weight=args.direction_weight)
    t = time.perf_counter()
    m, log, extra = train(args.kind, ds, cfg, progress=lambda e, l: print(f"epoch {e} loss {l:.6g}"))
    out = data.parent
    log.write_csv(out / f"{args.kind}_log.csv")
    save_network(out / f"{args.kind}.net", args.kind, m, lens.lens_hash(), ds.header.path_id,
                 ds.header.mode, extra["input_min"], extra["input_max"], extra["targets"])
    summary = {"wall_s": time.perf_counter() - t, "final_train_loss": float(log.losses("train")[-1]),
               "train_config": cfg.to_dict()}
    other = out / ("regressor.net" if args.kind == "classifier" else "classifier.net")
    if other.exists():
        nets = {args.kind: load_network(out / f"{args.kind}.net")}
        nets["regressor" if args.kind == "classifier" else "classifier"] = load_network(other)
        save_model(out / "model.pltmnn", assemble(nets["classifier"], nets["regressor"]))
        summary["model"] = str(out / "model.pltmnn")
        print(f"assembled {out / 'model.pltmnn'}")
    return summary


def cmd_render_flare(args):
    lens = _lens(args.lens)
    be = _TimedBackend(_backend(args, lens))
    if args.paths == "all":
        paths = enumerate_paths(lens, args.max_reflections, FORWARD)
        if be.name == "neural":
            paths = [p for p in paths if be.has_path(p, FORWARD)]
    else:
        paths = [int(p) for p in args.paths.split(",")]
    film = Film.for_lens(lens, args.width)
    t = time.perf_counter()
    films = render_flare(lens, be, Light.from_angle(args.light_angle, args.light_azimuth), film,
                         args.spp, paths, args.seed, args.filter, _threads(args))
    wall = time.perf_counter() - t
    total = combine(films)
    timing = {"wall_s": wall, "rays": be.rays, "rays_per_s": be.rays / max(wall, 1e-12),
              "query_s": be.seconds, "backend": be.name, "paths": paths}
    _save_image(args.output, total.xyz, args.exposure, timing)
    print(json.dumps(timing, sort_keys=True))
    return timing


def cmd_render_dof(args):
    lens = _lens(args.lens)
    be = _TimedBackend(_backend(args, lens))
    film = Film.for_lens(lens, args.width)
    t = time.perf_counter()
    res = render_dof(lens, be, get_scene(args.scene), film, args.spp, args.sensor_offset, args.seed,
                     _threads(args))
    wall = time.perf_counter() - t
    timing = {"wall_s": wall, "rays": be.rays, "rays_per_s": be.rays / max(wall, 1e-12),
              "query_s": be.seconds, "backend": be.name, "valid_fraction": res.valid_fraction}
    _save_image(args.output, res.upright(), args.exposure, timing)
    print(json.dumps(timing, sort_keys=True))
    return timing


def _abcd_curve(lens, wavelength, n=9):
    """Exit-height error of the ABCD model against the oracle vs input height."""
    m = abcd_of(lens, wavelength)
    heights = np.linspace(0.0, lens.housing_semi_aperture, n + 1)[1:]
    o = np.column_stack([heights, np.zeros(n), np.full(n, lens.input_plane_z)])
    rays = RayState.make(o, np.tile([0.0, 0.0, 1.0], (n, 1)), wavelength)
    res = trace_path(rays, 0, lens)
    h_abcd, _ = abcd_trace(m, heights, 0.0)
    return [{"height_mm": float(h), "oracle_mm": None if not v else float(p[0]),
             "abcd_mm": float(a), "error_mm": None if not v else float(abs(p[0] - a))}
            for h, v, p, a in zip(heights, res.valid, res.position, h_abcd)]


def cmd_eval(args):
    if args.baseline == "abcd":
        lens = _lens(args.lens)
        curve = _abcd_curve(lens, args.wavelength)
        out = {"baseline": "abcd", "curve": curve}
        print(json.dumps(out, indent=2))
        return out
    if not (args.ref and args.test):
        raise CliError("eval needs --ref and --test (or --baseline abcd)")
    ref, test = read_pfm(args.ref), read_pfm(args.test)
    out = {"mape": mape(ref, test, args.floor)}
    for key, path in (("ref", args.ref), ("test", args.test)):
        side = Path(path + ".json")
        if side.exists():
            t = json.loads(side.read_text())
            out[key] = {"wall_s": t.get("wall_s"), "rays_per_s": t.get("rays_per_s")}
    print(json.dumps(out, sort_keys=True))
    return out


def cmd_bench(args):
    lens = _lens(args.lens)
    film = Film.for_lens(lens, args.width)
    scene = get_scene(args.scene)
    rows = {}
    for name in ("oracle", "neural"):
        inner = OracleBackend(lens) if name == "oracle" else _neural(lens, args.models or args.out_dir, 0.5)
        be = _TimedBackend(inner)
        t = time.perf_counter()
        render_dof(lens, be, scene, film, args.spp, 0.0, args.seed, _threads(args))
        wall = time.perf_counter() - t
        rows[name] = {"wall_s": wall, "query_s": be.seconds, "rays": be.rays,
                      "rays_per_s": be.rays / max(be.seconds, 1e-12)}
    out = {"oracle": rows["oracle"], "neural": rows["neural"],
           "speedup": rows["neural"]["rays_per_s"] / rows["oracle"]["rays_per_s"],
           "render_speedup": rows["oracle"]["wall_s"] / rows["neural"]["wall_s"],
           "threads": _threads(args)}
    print(json.dumps(out, indent=2, sort_keys=True))
    return out


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pltm", description="Precomputed lens transport maps.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads for rendering (default: all cores)")
    common.add_argument("--out-dir", default="out", help="artifact and run-log directory (default out)")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def lens_arg(sp, positional=False):
        if positional:
            sp.add_argument("lens", help="lens JSON file or bundled name")
        else:
            sp.add_argument("--lens", default="dgauss59", help="lens JSON file or bundled name")

    def mode_args(sp):
        sp.add_argument("--mode", choices=(FORWARD, BACKWARD), default=FORWARD)
        sp.add_argument("--max-angle", type=float, default=80.0,
                        help="largest input angle to the axis, degrees (default 80)")

    sp = verb("validate", cmd_validate, "Parse and validate a lens prescription.")
    lens_arg(sp, positional=True)

    sp = verb("trace", cmd_trace, "Trace one ray through all paths and print the outputs.")
    lens_arg(sp)
    sp.add_argument("--origin", type=float, nargs=2, default=(0.0, 0.0), metavar=("X", "Y"),
                    help="start point on the entry plane, mm")
    sp.add_argument("--direction", type=float, nargs=3, default=(0.0, 0.0, 1.0), metavar=("X", "Y", "Z"))
    sp.add_argument("--wavelength", type=float, default=550.0, help="nm")
    sp.add_argument("--max-reflections", type=int, default=2)
    sp.add_argument("--i-min", type=float, default=1e-4, help="throughput cutoff")
    sp.add_argument("--mode", choices=(FORWARD, BACKWARD), default=FORWARD)

    sp = verb("enumerate-paths", cmd_enumerate, "List path ids with their T/R sequences.")
    lens_arg(sp)
    sp.add_argument("--max-reflections", type=int, default=2)
    sp.add_argument("--mode", choices=(FORWARD, BACKWARD), default=FORWARD)

    sp = verb("gen-data", cmd_gen_data, "Generate a regressor or classifier dataset for one path.")
    lens_arg(sp)
    sp.add_argument("--kind", choices=("regressor", "classifier"), required=True)
    sp.add_argument("--path", type=int, default=0, help="path id (default 0, all transmit)")
    sp.add_argument("--n", type=int, default=2_000_000, help="record count (default 2000000)")
    sp.add_argument("--chains", type=int, default=16, help="Metropolis chains (default 16)")
    sp.add_argument("--burn-in", type=int, default=1000, help="burn-in steps per chain")
    sp.add_argument("--output", help="dataset file (default: artifact directory)")
    mode_args(sp)

    sp = verb("train", cmd_train, "Train a classifier or regressor on a dataset file.")
    lens_arg(sp)
    sp.add_argument("--kind", choices=("regressor", "classifier"), required=True)
    sp.add_argument("--data", required=True, help="dataset file from gen-data")
    sp.add_argument("--path", type=int, default=None, help="path id (checked against the dataset)")
    sp.add_argument("--epochs", type=int, default=40)
    sp.add_argument("--batch-size", type=int, default=8192)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--lr-decay", type=float, default=0.95)
    sp.add_argument("--decay-interval", type=int, default=10_000, help="batches per decay step")
    sp.add_argument("--finetune-epochs", type=int, default=0)
    sp.add_argument("--finetune-batch-size", type=int, default=8192)
    sp.add_argument("--finetune-lr", type=float, default=1e-6)
    sp.add_argument("--direction-weight", type=float, default=1.0,
                    help="weight of the regressor direction loss term")

    def render_common(sp):
        lens_arg(sp)
        sp.add_argument("--backend", choices=("oracle", "neural"), default="oracle")
        sp.add_argument("--models", help="model root (default: --out-dir)")
        sp.add_argument("--threshold", type=float, default=0.5, help="classifier threshold")
        sp.add_argument("--width", type=int, default=256, help="image width in pixels")
        sp.add_argument("--exposure", type=float, default=1.0, help="scale for the PNG copy")
        sp.add_argument("--out", dest="output", required=True, help="output PFM (a PNG is written beside it)")

    sp = verb("render-flare", cmd_render_flare, "Render lens flare from a distant light.")
    render_common(sp)
    sp.add_argument("--paths", default="all", help="'all' or comma-separated path ids")
    sp.add_argument("--spp", type=int, default=1_000_000, help="light samples per path")
    sp.add_argument("--light-angle", type=float, default=8.0, help="degrees off axis")
    sp.add_argument("--light-azimuth", type=float, default=90.0, help="degrees")
    sp.add_argument("--filter", choices=("box", "bilinear"), default="box")
    sp.add_argument("--max-reflections", type=int, default=2)

    sp = verb("render-dof", cmd_render_dof, "Render the built-in scene through the lens.")
    render_common(sp)
    sp.add_argument("--scene", default="checker")
    sp.add_argument("--spp", type=int, default=64, help="samples per pixel")
    sp.add_argument("--sensor-offset", type=float, default=2.0, help="sensor shift, mm")

    sp = verb("eval", cmd_eval, "Compare two PFM images (MAPE) or report the ABCD baseline error.")
    sp.add_argument("--ref")
    sp.add_argument("--test")
    sp.add_argument("--floor", type=float, default=1e-3, help="MAPE luminance floor")
    sp.add_argument("--baseline", choices=("abcd",), help="report ABCD vs oracle error curve")
    lens_arg(sp)
    sp.add_argument("--wavelength", type=float, default=587.6)

    sp = verb("bench", cmd_bench, "Render one DOF job on both backends and report the speedup.")
    lens_arg(sp)
    sp.add_argument("--models", help="model root (default: --out-dir)")
    sp.add_argument("--scene", default="checker")
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--spp", type=int, default=16)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t = time.perf_counter()
    try:
        summary = args.func(args) or {}
    except (CliError, *EXPECTED_ERRORS) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    summary = dict(summary)
    summary.setdefault("wall_s", time.perf_counter() - t)
    _write_run(args, summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())

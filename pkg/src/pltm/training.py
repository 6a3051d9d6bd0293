"""Training schedules for the classifier and regressor networks."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .datagen import Dataset, FORWARD
from .nn import Adam, Mlp, RegressorTargets, forward_cache, backprop, loss_classifier, loss_regressor

HIDDEN_WIDTH = 32
CLASSIFIER_LAYERS = 2
REGRESSOR_LAYERS = 5


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule.

    The learning rate is ``lr * lr_decay ** (step // decay_interval)``.  If
    ``finetune_epochs`` is positive, a second stage restarts Adam with
    ``finetune_lr`` and ``finetune_batch_size``.  ``direction_weight``
    scales the direction term of the regressor loss.
    """

    epochs: int = 40
    batch_size: int = 8192
    lr: float = 1e-4
    lr_decay: float = 0.95
    decay_interval: int = 10_000
    seed: int = 0
    finetune_epochs: int = 0
    finetune_batch_size: int = 8192
    finetune_lr: float = 1e-6
    val_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    direction_weight: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "decay_interval", "finetune_batch_size",
                     "finetune_lr", "eps", "direction_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be non-negative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# full-scale schedules
PER_PATH = TrainConfig(epochs=40, batch_size=8192, lr=1e-4)
FULL_TRANSMIT = TrainConfig(epochs=200, batch_size=32768, lr=1e-4, finetune_epochs=50,
                            finetune_batch_size=8192, finetune_lr=1e-6)
# desk scale (2M samples): larger first-stage rate, then a low-rate refinement
DESK = TrainConfig(epochs=40, batch_size=8192, lr=1e-3, finetune_epochs=20,
                   finetune_batch_size=8192, finetune_lr=1e-4)


def normalize_inputs(x, lo, hi):
    """Affine map of each input dimension from [lo, hi] to [-1, 1]."""
    lo = np.asarray(lo, dtype=np.float32)
    span = np.maximum(np.asarray(hi, dtype=np.float32) - lo, np.float32(1e-12))
    return (np.asarray(x, dtype=np.float32) - lo) * (np.float32(2.0) / span) - np.float32(1.0)


def regressor_targets(records: np.ndarray, mode: str) -> tuple[np.ndarray, RegressorTargets]:
    """Physical targets (N, 6) and a standardizing output map."""
    rec = records.astype(np.float64)
    target = rec[:, [5, 6, 7, 8, 9, 10]]
    cols = rec[:, [5, 6, 7, 8, 10]]
    if len(cols):
        off = cols.mean(axis=0)
        sc = cols.std(axis=0)
    else:
        off, sc = np.zeros(5), np.ones(5)
    sc = np.where(sc > 1e-9, sc, 1.0)
    return target, RegressorTargets(off, sc, 1.0 if mode == FORWARD else -1.0)


@dataclass
class TrainLog:
    rows: list

    def write_csv(self, path):
        terms = sorted({k for r in self.rows for k in r["terms"]})
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "split", "loss"] + terms)
            for r in self.rows:
                w.writerow([r["epoch"], r["split"], f"{float(r['loss']):.9g}"]
                           + [f"{float(r['terms'][t]):.9g}" if t in r["terms"] else "" for t in terms])

    def losses(self, split: str) -> np.ndarray:
        return np.array([r["loss"] for r in self.rows if r["split"] == split])


def _eval_loss(kind, m, x, y, spec, direction_weight=1.0, batch=65536):
    if not len(x):
        return float("nan"), {}
    tot = 0.0
    terms: dict[str, float] = {}
    for s in range(0, len(x), batch):
        out, _ = forward_cache(m, x[s:s + batch])
        w = len(out) / len(x)
        if kind == "classifier":
            val = loss_classifier(out, y[s:s + batch])
            part = {"bce": val}
        else:
            val, part = loss_regressor(out, y[s:s + batch], spec, direction_weight=direction_weight)
        tot += w * val
        for k, v in part.items():
            terms[k] = terms.get(k, 0.0) + w * v
    return tot, terms


def train(kind: str, dataset: Dataset, cfg: TrainConfig = PER_PATH, model: Mlp | None = None,
          progress=None):
    """Fit a classifier (all records, BCE) or regressor (valid records only).

    Returns ``(mlp, log, extra)`` where ``extra`` carries the input bounds
    and, for the regressor, the output map.  Raises
    :class:`TrainingDiverged` on a non-finite loss.
    """
    if kind not in ("classifier", "regressor"):
        raise ValueError(f"unknown model kind {kind!r}")
    if dataset.header.kind != kind:
        raise ValueError(f"dataset holds {dataset.header.kind} data, cannot train a {kind}")
    rec = dataset.records
    if kind == "regressor":
        rec = rec[dataset.valid]
    if not len(rec):
        raise ValueError("dataset has no usable records")
    lo, hi = dataset.header.input_min, dataset.header.input_max
    x = normalize_inputs(rec[:, :4], lo, hi)
    spec = None
    if kind == "classifier":
        y = rec[:, 4].astype(np.float64)
        sizes = [4] + [HIDDEN_WIDTH] * CLASSIFIER_LAYERS + [1]
    else:
        y, spec = regressor_targets(rec, dataset.header.mode)
        sizes = [4] + [HIDDEN_WIDTH] * REGRESSOR_LAYERS + [5]
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x))
    n_val = int(round(cfg.val_fraction * len(x)))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]
    m = model.copy() if model is not None else Mlp.init(sizes, rng)
    rows = []
    stages = [(cfg.epochs, cfg.batch_size, cfg.lr)]
    if cfg.finetune_epochs:
        stages.append((cfg.finetune_epochs, cfg.finetune_batch_size, cfg.finetune_lr))
    epoch = 0
    for n_epochs, bs, lr0 in stages:
        opt = Adam(m.params, cfg.beta1, cfg.beta2, cfg.eps)
        step = 0
        for _ in range(n_epochs):
            epoch += 1
            perm = rng.permutation(len(x_tr))
            run = 0.0
            run_terms: dict[str, float] = {}
            for s in range(0, len(perm), bs):
                b = perm[s:s + bs]
                out, cache = forward_cache(m, x_tr[b])
                if kind == "classifier":
                    val, g = loss_classifier(out, y_tr[b], want_grad=True)
                    terms = {"bce": val}
                else:
                    val, terms, g = loss_regressor(out, y_tr[b], spec, want_grad=True,
                                                   direction_weight=cfg.direction_weight)
                if not math.isfinite(val):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {s // bs}")
                dws, dbs = backprop(m, cache, g.astype(np.float32))
                grads = [p for wb in zip(dws, dbs) for p in wb]
                lr = lr0 * cfg.lr_decay ** (step // cfg.decay_interval)
                opt.step(m.params, grads, lr)
                step += 1
                w = len(b) / len(perm)
                run += w * val
                for k, v in terms.items():
                    run_terms[k] = run_terms.get(k, 0.0) + w * v
            rows.append({"epoch": epoch, "split": "train", "loss": run, "terms": run_terms})
            if n_val:
                vl, vt = _eval_loss(kind, m, x_val, y_val, spec, cfg.direction_weight)
                if not math.isfinite(vl):
                    raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
                rows.append({"epoch": epoch, "split": "val", "loss": vl, "terms": vt})
            if progress is not None:
                progress(epoch, rows[-1]["loss"])
    m.check()
    extra = {"input_min": np.asarray(lo, dtype=np.float32), "input_max": np.asarray(hi, dtype=np.float32),
             "targets": spec, "val_index": val_idx}
    return m, TrainLog(rows), extra


def scaled(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)

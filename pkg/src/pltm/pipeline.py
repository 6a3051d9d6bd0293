"""Dataset generation and training for one path, with on-disk artifacts.

Artifacts live under ``<root>/<lens-hash>/<mode>-<path-id>/``:
``classifier.pltm``, ``regressor.pltm`` (datasets), ``model.pltmnn`` and
the training logs.  The lens hash is the first 16 hex digits of the lens
serialization digest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import (Domain, McmcConfig, build_classifier_dataset, build_regressor_dataset,
                      read_dataset, write_dataset)
from .lens import LensSystem
from .model import FactorizedModel, load_model, save_model
from .training import DESK, TrainConfig, train


def lens_tag(lens: LensSystem) -> str:
    return lens.lens_hash().hex()[:16]


def artifact_dir(root, lens: LensSystem, path_id: int, mode: str) -> Path:
    return Path(root) / lens_tag(lens) / f"{mode}-{int(path_id)}"


@dataclass(frozen=True)
class PathRecipe:
    """Everything that determines one trained path model."""

    path_id: int = 0
    domain: Domain = Domain()
    n_classifier: int = 2_000_000
    n_regressor: int = 2_000_000
    mcmc: McmcConfig = McmcConfig()
    classifier_cfg: TrainConfig = TrainConfig()
    regressor_cfg: TrainConfig = TrainConfig()
    seed: int = 0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mcmc"]["sigma"] = list(self.mcmc.sigma)
        d["mcmc"]["target_accept"] = list(self.mcmc.target_accept)
        return d


def desk_dof_recipe(seed: int = 3) -> PathRecipe:
    """All-transmit backward model used for depth-of-field renders.

    Focus depends on exit directions far more than on exit positions, so
    the regressor weights its direction term up.
    """
    reg = TrainConfig(epochs=80, batch_size=8192, lr=1e-3, finetune_epochs=40,
                      finetune_batch_size=8192, finetune_lr=1e-4, direction_weight=100.0)
    return PathRecipe(0, Domain("backward", 45.0), 2_000_000, 2_000_000, McmcConfig(chains=256),
                      DESK, reg, seed)


def desk_flare_recipe(path_id: int, max_angle_deg: float = 12.0, seed: int = 3) -> PathRecipe:
    """Forward ghost model for lights up to ``max_angle_deg`` off axis."""
    reg = TrainConfig(epochs=80, batch_size=8192, lr=1e-3, finetune_epochs=40,
                      finetune_batch_size=8192, finetune_lr=1e-4)
    return PathRecipe(path_id, Domain("forward", max_angle_deg), 2_000_000, 2_000_000,
                      McmcConfig(chains=256), DESK, reg, seed)


def build_path_model(lens: LensSystem, recipe: PathRecipe, root=None, progress=None,
                     reuse: bool = True) -> FactorizedModel:
    """Generate both datasets, train both networks and assemble the model.

    With ``root`` the datasets, logs and model are written under
    :func:`artifact_dir`; an existing model with a matching recipe is
    reused when ``reuse`` is set.
    """
    say = progress or (lambda msg: None)
    mode = recipe.domain.mode
    out = artifact_dir(root, lens, recipe.path_id, mode) if root is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        recipe_file = out / "recipe.json"
        model_file = out / "model.pltmnn"
        want = json.dumps(recipe.to_dict(), sort_keys=True)
        if reuse and model_file.exists() and recipe_file.exists() and recipe_file.read_text() == want:
            say(f"reusing {model_file}")
            return load_model(model_file, lens)
    say(f"path {recipe.path_id}: classifier data ({recipe.n_classifier})")
    cds = build_classifier_dataset(lens, recipe.path_id, recipe.n_classifier, recipe.seed,
                                   recipe.domain, recipe.mcmc)
    say(f"path {recipe.path_id}: regressor data ({recipe.n_regressor})")
    rds = build_regressor_dataset(lens, recipe.path_id, recipe.n_regressor, recipe.seed + 1,
                                  recipe.domain, recipe.mcmc)
    say(f"path {recipe.path_id}: training classifier")
    clf, clog, cx = train("classifier", cds, recipe.classifier_cfg)
    say(f"path {recipe.path_id}: training regressor")
    reg, rlog, rx = train("regressor", rds, recipe.regressor_cfg)
    # both networks must share one input normalization
    lo, hi = cx["input_min"], cx["input_max"]
    if not (np.array_equal(lo, rx["input_min"]) and np.array_equal(hi, rx["input_max"])):
        raise RuntimeError("classifier and regressor datasets disagree on input bounds")
    fm = FactorizedModel(clf, reg, lo, hi, rx["targets"], recipe.path_id, lens.lens_hash(), mode)
    if out is not None:
        write_dataset(out / "classifier.pltm", cds)
        write_dataset(out / "regressor.pltm", rds)
        clog.write_csv(out / "classifier_log.csv")
        rlog.write_csv(out / "regressor_log.csv")
        save_model(model_file, fm)
        recipe_file.write_text(want)
    return fm


def load_datasets(root, lens: LensSystem, path_id: int, mode: str):
    d = artifact_dir(root, lens, path_id, mode)
    return read_dataset(d / "classifier.pltm"), read_dataset(d / "regressor.pltm")

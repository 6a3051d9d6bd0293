import json

import numpy as np
import pytest

from pltm.lens import load_bundled, parse_lens_system

BUNDLED_NAMES = ("biconvex", "dgauss59", "wide22")


def doublet_document(**overrides) -> dict:
    """Two separated biconvex singlets: four optical surfaces and a stop."""
    doc = {
        "name": "test-doublet",
        "housing_semi_aperture_mm": 10.0,
        "input_plane_z_mm": -5.0,
        "output_plane_z_mm": 60.0,
        "sensor_width_mm": 24.0,
        "sensor_height_mm": 24.0,
        "materials": {"glass": {"model": "cauchy", "params": [1.5046, 0.0042]}},
        "surfaces": [
            {"type": "spherical", "z_mm": 0.0, "radius_mm": 60.0, "semi_aperture_mm": 9.0,
             "material_after": "glass"},
            {"type": "spherical", "z_mm": 4.0, "radius_mm": -60.0, "semi_aperture_mm": 9.0,
             "material_after": "air"},
            {"type": "stop", "z_mm": 8.0, "radius_mm": 0.0, "semi_aperture_mm": 6.0,
             "material_after": "air"},
            {"type": "spherical", "z_mm": 12.0, "radius_mm": 80.0, "semi_aperture_mm": 9.0,
             "material_after": "glass"},
            {"type": "spherical", "z_mm": 16.0, "radius_mm": -80.0, "semi_aperture_mm": 9.0,
             "material_after": "air"},
        ],
    }
    doc.update(overrides)
    return doc


@pytest.fixture(scope="session")
def doublet():
    return parse_lens_system(json.dumps(doublet_document()))


@pytest.fixture(scope="session")
def biconvex():
    return load_bundled("biconvex")


@pytest.fixture(scope="session")
def dgauss():
    return load_bundled("dgauss59")


@pytest.fixture(scope="session", params=BUNDLED_NAMES)
def bundled(request):
    return load_bundled(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_model(tmp_path_factory, biconvex):
    """A quickly trained all-transmit model of the singlet (forward, 20 degrees)."""
    from pltm.datagen import Domain, McmcConfig
    from pltm.pipeline import PathRecipe, build_path_model
    from pltm.training import TrainConfig

    cfg = TrainConfig(epochs=30, batch_size=512, lr=3e-3, decay_interval=1000)
    recipe = PathRecipe(0, Domain("forward", 20.0), 20_000, 20_000,
                        McmcConfig(chains=64, burn_in=200), cfg, cfg, seed=11)
    root = tmp_path_factory.mktemp("models")
    fm = build_path_model(biconvex, recipe, root=root)
    return fm, recipe, root


# ------------------------------------------------------------ acceptance report

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    num, title = mark.args
    entry = _CRITERIA.setdefault(num, {"title": title, "ok": True, "ran": False, "details": []})
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        entry["ok"] &= rep.passed
    details = [v for k, v in item.user_properties if k == "detail"]
    if rep.when == "call":
        entry["details"].extend(details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        state = "PASS" if e["ran"] and e["ok"] else ("FAIL" if e["ran"] else "NOT RUN")
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {num:2d} {state}: {e['title']}" + (f" ({detail})" if detail else ""))

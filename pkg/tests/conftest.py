import sys
from pathlib import Path

import numpy as np
import pytest

from artifact.augmentation import build_augmented, close_loop
from artifact.io import parse_definition
from artifact.iqc import structure_factors
from artifact.lft import LftSystem, StateSpacePartition, UncertaintyStructure
from artifact.pipeline import build_model, load_config, synthesize
from artifact.synthesis import EllipsoidCertificate, Polytope

TESTS = Path(__file__).parent
DATA = TESTS / "data"
sys.path.insert(0, str(TESTS))


def make_scalar(a=0.5, b_d=0.5, c=1.0):
    """``x+ = a x + b_d d``, ``y = c x``, no uncertainty."""
    G = StateSpacePartition.from_blocks([[a]], None, [[b_d]], None, None, None, [[c]], None, None)
    return LftSystem(G, UncertaintyStructure([]), name="scalar-nominal")


def augment(sys):
    return build_augmented(sys, structure_factors(sys.delta))


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scalar_H():
    return augment(make_scalar())


@pytest.fixture
def unit_box():
    return Polytope.box([1.0])


@pytest.fixture
def hand_cert(scalar_H):
    """``P = 1``, ``tau1 = 0.5`` for ``x+ = 0.5 x + 0.5 d``."""
    return EllipsoidCertificate(np.eye(1), np.zeros((0, 0)), [], 0.5)


@pytest.fixture(scope="session")
def scalar_lft():
    return parse_definition(DATA / "scalar_system.json")


@pytest.fixture(scope="session")
def two_mass():
    return parse_definition(DATA / "two_mass_system.json"), parse_definition(DATA / "two_mass_controller.json")


@pytest.fixture(scope="session")
def two_mass_cl(two_mass):
    sys_, K = two_mass
    return close_loop(augment(sys_), K)


@pytest.fixture(scope="session")
def two_mass_cfg():
    return load_config(DATA / "two_mass_ghost.json")


@pytest.fixture(scope="session")
def two_mass_result(two_mass_cfg):
    """Real-mode closed-loop certificates (synthesized once per session)."""
    model = build_model(two_mass_cfg)
    return model, synthesize(model, two_mass_cfg, "real")


@pytest.fixture(scope="session")
def scalar_cfg():
    return load_config(DATA / "scalar_local.json")


@pytest.fixture(scope="session")
def scalar_result(scalar_cfg):
    model = build_model(scalar_cfg)
    return model, synthesize(model, scalar_cfg, "real")


@pytest.fixture(scope="session")
def scalar_float_result(scalar_cfg):
    model = build_model(scalar_cfg)
    return model, synthesize(model, scalar_cfg, "float")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])

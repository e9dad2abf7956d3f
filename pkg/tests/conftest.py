from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from rgbvlp.config import build_energies, build_leds, build_receiver, load_config
from rgbvlp.geometry import gamma_matrix

settings.register_profile("ci", max_examples=50, deadline=None)
settings.load_profile("ci")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def rx(cfg):
    return build_receiver(cfg)


@pytest.fixture(scope="session")
def leds(cfg):
    return build_leds(cfg)


@pytest.fixture(scope="session")
def energies(cfg, leds):
    return tuple(build_energies(led.waveforms) for led in leds)


@pytest.fixture(scope="session")
def gammas(cfg, rx):
    return gamma_matrix(rx, cfg.scene.lambertian_order, cfg.scene.height)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

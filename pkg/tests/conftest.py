import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h=32, w=32, c=3):
    return rng.random((h, w, c))


def tiny_config(**overrides):
    from greenhaze.trees import GbtParams
    from greenhaze.ushape import TrainConfig

    base = dict(input_size=32, levels=2, rft_keep=6, gbt=GbtParams(rounds=5, max_depth=3), seed=0, omega_trees=5)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_set():
    from greenhaze.harness import make_synthetic_set, procedural_scenes

    return make_synthetic_set(procedural_scenes(12, 32, seed=1), seed=2)


@pytest.fixture(scope="session")
def tiny_result(tiny_set):
    from greenhaze.ushape import train_pipeline

    return train_pipeline([(p.hazy, p.clear) for p in tiny_set.pairs], tiny_config())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

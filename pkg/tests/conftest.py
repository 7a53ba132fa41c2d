import time
from types import SimpleNamespace

import pytest
from hypothesis import HealthCheck, settings

from placeattr.synthworld import WorldConfig, default_attributes, simulate

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def small_world():
    """A quick world with every default attribute, strong enough to see signals."""
    cfg = WorldConfig(n_places=300, n_people=800, n_days=21, attribute_specs=default_attributes(1.0), rng_seed=11)
    world, log = simulate(cfg)
    return world, log


@pytest.fixture(scope="session")
def planted_world():
    """The full-size acceptance world (2000 places, 5000 people, 90 days) and its STEPS matrix."""
    from placeattr.features import FeaturizerConfig, featurize

    t0 = time.perf_counter()
    world, log = simulate(WorldConfig(attribute_specs=default_attributes(0.8), rng_seed=0))
    fm = featurize(log, world.places, FeaturizerConfig())
    return SimpleNamespace(world=world, log=log, steps=fm, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def planted_ablation(planted_world):
    from placeattr.evaluator import ablate

    world, fm = planted_world.world, planted_world.steps
    return {t.attribute_name: ablate(fm, t, k=10, seed=0, merge_transitions=False) for t in world.labels}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

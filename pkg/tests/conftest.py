import numpy as np
import pytest

from diffscan.classifier import (
    DataLaw,
    LabelMapping,
    PoisonSpec,
    TrainConfig,
    corner_patch,
    default_arch,
    poison_dataset,
    train,
)
from diffscan.diffusion import MixtureDenoiser, NoiseSchedule, isotropic_prior


@pytest.fixture(scope="session")
def law():
    return DataLaw()


@pytest.fixture(scope="session")
def train_set(law):
    return law.sample(150, np.random.default_rng([11, 1]))


@pytest.fixture(scope="session")
def test_set(law):
    return law.sample(60, np.random.default_rng([11, 2]))


@pytest.fixture(scope="session")
def clean_model(train_set):
    model, _ = train(train_set, default_arch(), TrainConfig(epochs=10, seed=3))
    return model


@pytest.fixture(scope="session")
def patch_poison(law):
    pattern, mask = corner_patch(law.shape, 4, "BR", np.random.default_rng(5))
    return PoisonSpec("patch", pattern, LabelMapping("all-to-one", target=2), 0.15, mask=mask)


@pytest.fixture(scope="session")
def trojan_model(train_set, patch_poison):
    poisoned, _ = poison_dataset(train_set, patch_poison, seed=4)
    model, _ = train(poisoned, default_arch(), TrainConfig(epochs=10, seed=3))
    return model


@pytest.fixture(scope="session")
def source_patch(law):
    pattern, mask = corner_patch(law.shape, 3, "BR", np.random.default_rng(5))
    return PoisonSpec("patch", pattern, LabelMapping("one-to-one", target=2, source=0), 0.15, mask=mask)


@pytest.fixture(scope="session")
def source_trojan(train_set, source_patch):
    poisoned, _ = poison_dataset(train_set, source_patch, seed=4)
    model, _ = train(poisoned, default_arch(), TrainConfig(epochs=10, seed=3))
    return model


@pytest.fixture(scope="session")
def generator(law):
    return MixtureDenoiser(isotropic_prior(law.shape, 0.06), NoiseSchedule.linear(50))


@pytest.fixture(scope="session")
def heldout(law):
    return law.heldout_per_class(64, 5)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line, print it and fail the test when the criterion does not hold."""

    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
        request.config.stash.setdefault(ACCEPTANCE, {})[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

import numpy as np
import pytest
import torch

from mccseg.encoder import EncoderConfig, MaskableViT


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_encoder():
    torch.manual_seed(0)
    return MaskableViT(EncoderConfig()).double().eval()


@pytest.fixture
def tiny_config():
    return EncoderConfig(image_size=16, patch_size=4, depth=2, heads=2, dim=8, num_classes=2, aux_layer=1)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(criterion, passed, detail):
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

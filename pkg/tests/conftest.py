from __future__ import annotations

import numpy as np
import pytest
import torch

from semvad.neural.model import EndpointModel, ModelConfig

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


TINY = ModelConfig(d_enc=16, d_hidden=32, d_model=32, n_heads=4, n_layers=1, d_ff=32,
                   n_prompt=2, max_audio_tokens=16)


@pytest.fixture
def tiny_model() -> EndpointModel:
    torch.manual_seed(0)
    model = EndpointModel(TINY)
    model.eval()
    return model


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

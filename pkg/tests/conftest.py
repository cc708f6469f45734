from __future__ import annotations

import numpy as np
import pytest
import torch

import wsnad  # noqa: F401  (sets the float64 default dtype)
from wsnad.data import Corpus, build_adjacency, grid_coordinates
from wsnad.model import ModelConfig, build_backbone
from wsnad.pipeline import synth_corpus


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_cfg() -> ModelConfig:
    return ModelConfig(n_modalities=2, d_state=4, d_k=4, fusion_hidden=8, gcn_hidden=8, d_z=8, head_hidden=8)


@pytest.fixture
def toy_backbone(toy_cfg):
    return build_backbone(toy_cfg, seed=3)


@pytest.fixture
def toy_graph():
    return build_adjacency(grid_coordinates(4), k=2)


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    return synth_corpus(4, 2, 400, seed=0, k=2)


def rand(*shape, seed: int = 0) -> torch.Tensor:
    return torch.from_numpy(np.random.default_rng(seed).standard_normal(shape))


# --- acceptance reporting ---------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, title: str, passed: bool, detail: str) -> None:
    """Store one PASS/FAIL line for a numbered acceptance criterion."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {title} ({detail})"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])

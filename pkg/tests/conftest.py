"""Pytest configuration and shared fixtures."""
import os
from pathlib import Path

import numpy as np
import pytest

from app.core.environments import BanditEnvironment, gen_cosine, prepare_arms
from app.core.network import NetworkParams, init_symmetric
from app.schemas.experiment import (
    AlgoSpec,
    EnvKind,
    EnvSpec,
    ExperimentConfig,
    NetSpec,
    NetworkConfig,
    TrainMode,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
MUSHROOM_DATA = Path(__file__).resolve().parent.parent / "data" / "agaricus-lepiota.data"

MUSHROOM_VALUES = [
    "xbsfkc", "sfyg", "nbcgrpuewy", "tf", "alcyfmnps", "adfn", "cwd", "bn",
    "knbhgropuewy", "et", "bcuezr?", "fyks", "fyks", "nbcgopewy", "nbcgopewy",
    "pu", "nowy", "not", "ceflnpsz", "knbhrouwy", "acnsvy", "glmpuwd",
]


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed generator for test data."""
    return np.random.default_rng(12345)


@pytest.fixture
def small_net_config() -> NetworkConfig:
    """Tiny two-layer network on 4-dimensional (symmetrized) inputs."""
    return NetworkConfig(
        input_dim=4,
        width=6,
        depth=2,
        reg_lambda=0.01,
        step_size=0.002,
        gd_steps=50,
        train_mode=TrainMode.FULL_GRADIENT,
    )


@pytest.fixture
def small_params(small_net_config: NetworkConfig) -> NetworkParams:
    """Symmetric initialization of ``small_net_config``."""
    return init_symmetric(small_net_config, 7)


@pytest.fixture
def unit_contexts(rng: np.random.Generator) -> np.ndarray:
    """Ten normalized and symmetrized contexts of dimension 4."""
    return prepare_arms(rng.uniform(0.0, 1.0, size=(10, 2)))


@pytest.fixture
def cosine_env() -> BanditEnvironment:
    """Short cosine environment: T=30, d=3, K=3."""
    return gen_cosine(T=30, d=3, K=3, seed=11)


def policy_net_config(env: BanditEnvironment, **overrides) -> NetworkConfig:
    """Small, fast network sized for ``env``."""
    values = dict(input_dim=env.context_dim, width=4, depth=2, reg_lambda=0.01,
                  step_size=0.01, gd_steps=3, sgd_batch_size=8)
    values.update(overrides)
    return NetworkConfig(**values)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    """Two instances of every algorithm on a short cosine environment."""
    return ExperimentConfig(
        env=EnvSpec(kind=EnvKind.COSINE, horizon=30, context_dim=3, n_arms=3),
        algorithms=[
            AlgoSpec.parse("bnucb-fixed(B=3)"),
            AlgoSpec.parse("bnucb-adaptive(B=3,log_q=1)"),
            AlgoSpec.parse("neuralucb"),
            AlgoSpec.parse("linucb"),
            AlgoSpec.parse("uniform"),
        ],
        net=NetSpec(width=4, depth=2, gd_steps=3, sgd_batch_size=8),
        n_instances=2,
        master_seed=3,
    )


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    """Flat config equivalent to a small cosine experiment."""
    path = tmp_path / "tiny.conf"
    path.write_text(
        "# tiny cosine run\n"
        "profile = ci\n"
        "env_kind = cosine\n"
        "horizon = 30\n"
        "context_dim = 3\n"
        "n_arms = 3\n"
        "\n"
        "algorithms = bnucb-fixed(B=3), bnucb-adaptive(B=3,log_q=1), linucb, uniform\n"
        "width = 4\n"
        "depth = 2\n"
        "gd_steps = 3\n"
        "sgd_batch_size = 8   # small minibatches\n"
        "n_instances = 2\n"
        "master_seed = 5\n"
    )
    return path


def _mushroom_row(rng: np.random.Generator, label: str) -> str:
    values = [label] + [str(rng.choice(list(choices))) for choices in MUSHROOM_VALUES]
    return ",".join(values)


@pytest.fixture
def mushroom_csv(tmp_path: Path) -> Path:
    """40 well-formed mushroom rows plus one long and one short malformed row."""
    rng = np.random.default_rng(2)
    lines = [_mushroom_row(rng, "ep"[i % 2]) for i in range(40)]
    lines.insert(5, lines[0] + ",extra")
    lines.insert(12, "e,x,s,n")
    path = tmp_path / "agaricus-lepiota.data"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def magic_csv(tmp_path: Path) -> Path:
    """40 well-formed MAGIC rows plus one long and one short malformed row."""
    rng = np.random.default_rng(3)
    lines = []
    for i in range(40):
        features = rng.normal(0.0, 1.0, size=10) * np.arange(1, 11) * 10.0
        lines.append(",".join(f"{v:.4f}" for v in features) + "," + "gh"[i % 2])
    lines.insert(3, lines[0] + ",1.0")
    lines.insert(20, "1.0,2.0,g")
    path = tmp_path / "magic04.data"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def out_dir(tmp_path: Path) -> str:
    """Fresh output directory path (not yet created)."""
    return os.path.join(str(tmp_path), "out")

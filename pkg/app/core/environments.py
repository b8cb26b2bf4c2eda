"""
Reward-generating bandit environments.

Provides:
- Synthetic cosine and quadratic reward models on U[0, 1]^d contexts
- Classification-to-bandit adapters for the UCI Mushroom and MAGIC datasets
- Context preprocessing: l2 normalization followed by symmetrization

Every environment is generated up front from a seed: contexts, mean rewards and a
T x K matrix of noise draws, so that all algorithms of one Monte Carlo instance
face exactly the same rounds.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from app.core.exceptions import InputError
from app.core.seeding import substream
from app.schemas.experiment import EnvKind, EnvSpec

logger = logging.getLogger(__name__)

COSINE_NOISE_STD = 0.5  # N(0, 0.25)
QUADRATIC_NOISE_STD = 0.5

MUSHROOM_COLUMNS = 23
MUSHROOM_CLASSES = {"e": 0, "p": 1}
MAGIC_COLUMNS = 11
MAGIC_CLASSES = {"g": 0, "h": 1}


# =============================================================================
# Domain types
# =============================================================================

@dataclass
class RewardModel:
    """Hidden mean function plus Gaussian noise scale."""
    kind: EnvKind
    n_arms: int
    noise_std: float = 0.0
    theta_star: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    def means(self, raw_arms: np.ndarray, round_index: int = 1) -> np.ndarray:
        """Mean rewards of the K raw arm contexts of round ``round_index`` (1-based)."""
        raw_arms = np.atleast_2d(np.asarray(raw_arms, dtype=np.float64))
        if self.kind == EnvKind.COSINE:
            return np.cos(3.0 * raw_arms @ self.theta_star)
        if self.kind == EnvKind.QUADRATIC:
            projected = raw_arms @ self.A.T
            return np.sum(projected * projected, axis=1)
        label = int(self.labels[round_index - 1])
        means = np.zeros(raw_arms.shape[0])
        means[label] = 1.0
        return means


@dataclass
class ContextBatch:
    """The K arm contexts offered in one round."""
    round_index: int
    arms: np.ndarray        # (K, D) normalized + symmetrized, network input
    raw_arms: np.ndarray    # (K, d) before preprocessing
    means: np.ndarray       # (K,)

    @property
    def optimal_mean(self) -> float:
        return float(np.max(self.means))

    @property
    def optimal_arm(self) -> int:
        return int(np.argmax(self.means))

    def regret(self, arm: int) -> float:
        """Instantaneous pseudo-regret of pulling ``arm``."""
        return self.optimal_mean - float(self.means[arm])


@dataclass
class BanditEnvironment:
    """Pre-generated rounds, the reward model behind them and the realized noise."""
    name: str
    batches: List[ContextBatch]
    model: RewardModel
    noise: np.ndarray       # (T, K)
    skipped_rows: int = 0

    @property
    def horizon(self) -> int:
        return len(self.batches)

    @property
    def n_arms(self) -> int:
        return self.model.n_arms

    @property
    def context_dim(self) -> int:
        return self.batches[0].arms.shape[1]

    @property
    def raw_dim(self) -> int:
        return self.batches[0].raw_arms.shape[1]

    def batch(self, t: int) -> ContextBatch:
        return self.batches[t - 1]

    def reward(self, t: int, arm: int) -> float:
        """Realized reward of ``arm`` at round ``t`` (1-based)."""
        return float(self.batches[t - 1].means[arm] + self.noise[t - 1, arm])

    def all_contexts(self) -> np.ndarray:
        """Every preprocessed arm context, (T*K, D)."""
        return np.concatenate([b.arms for b in self.batches], axis=0)

    def mean_range(self) -> Tuple[float, float]:
        means = np.concatenate([b.means for b in self.batches])
        return float(means.min()), float(means.max())

    def leaves_unit_range(self) -> bool:
        """True when some mean reward falls outside [0, 1]."""
        low, high = self.mean_range()
        return low < 0.0 or high > 1.0


# =============================================================================
# Preprocessing
# =============================================================================

def normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0.0 or not math.isfinite(norm):
        raise InputError("cannot normalize a zero or non-finite context", field="x")
    return x / norm


def symmetrize(x: np.ndarray) -> np.ndarray:
    """``[x; x] / sqrt(2)``; unit norm whenever ``x`` is."""
    x = np.asarray(x, dtype=np.float64)
    if not np.any(x) or not np.all(np.isfinite(x)):
        raise InputError("cannot symmetrize a zero or non-finite context", field="x")
    return np.concatenate([x, x]) / math.sqrt(2.0)


def prepare_arms(raw_arms: np.ndarray) -> np.ndarray:
    """Normalize, then symmetrize, every row of a (K, d) block."""
    raw_arms = np.atleast_2d(np.asarray(raw_arms, dtype=np.float64))
    norms = np.linalg.norm(raw_arms, axis=1, keepdims=True)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise InputError("cannot normalize a zero or non-finite context", field="x")
    unit = raw_arms / norms
    return np.concatenate([unit, unit], axis=1) / math.sqrt(2.0)


def _build(name: str, model: RewardModel, raw: np.ndarray, noise: np.ndarray, skipped: int = 0) -> BanditEnvironment:
    """raw: (T, K, d)."""
    batches = []
    for t in range(raw.shape[0]):
        batches.append(ContextBatch(
            round_index=t + 1,
            arms=prepare_arms(raw[t]),
            raw_arms=raw[t],
            means=model.means(raw[t], t + 1),
        ))
    return BanditEnvironment(name=name, batches=batches, model=model, noise=noise, skipped_rows=skipped)


# =============================================================================
# Synthetic environments
# =============================================================================

def gen_cosine(T: int = 2000, d: int = 10, K: int = 4, seed: int = 0,
               noise_std: float = COSINE_NOISE_STD) -> BanditEnvironment:
    """``r = cos(3 x^T theta*) + N(0, noise_std^2)`` with x, theta* ~ U[0, 1]^d."""
    _check_sizes(T, d, K)
    theta = substream(seed, "model").uniform(0.0, 1.0, size=d)
    theta /= np.linalg.norm(theta)
    model = RewardModel(kind=EnvKind.COSINE, n_arms=K, noise_std=noise_std, theta_star=theta)
    raw = substream(seed, "contexts").uniform(0.0, 1.0, size=(T, K, d))
    noise = substream(seed, "noise").normal(0.0, noise_std, size=(T, K)) if noise_std > 0 else np.zeros((T, K))
    return _build("cosine", model, raw, noise)


def gen_quadratic(T: int = 2000, d: int = 4, K: int = 10, seed: int = 0,
                  noise_std: float = QUADRATIC_NOISE_STD) -> BanditEnvironment:
    """``r = x^T A^T A x + N(0, noise_std^2)`` with ``A_ij ~ N(0, 1)``."""
    _check_sizes(T, d, K)
    A = substream(seed, "model").normal(0.0, 1.0, size=(d, d))
    model = RewardModel(kind=EnvKind.QUADRATIC, n_arms=K, noise_std=noise_std, A=A)
    raw = substream(seed, "contexts").uniform(0.0, 1.0, size=(T, K, d))
    noise = substream(seed, "noise").normal(0.0, noise_std, size=(T, K)) if noise_std > 0 else np.zeros((T, K))
    return _build("quadratic", model, raw, noise)


def _check_sizes(T: int, d: int, K: int) -> None:
    for name, value in (("horizon", T), ("context_dim", d), ("n_arms", K)):
        if value < 1:
            raise InputError(f"{name} must be positive, got {value}", field=name)


# =============================================================================
# Classification datasets
# =============================================================================

class CategoricalEncoder:
    """One-hot encoder with fixed, sorted categories and one ``unseen`` slot per column."""

    UNSEEN = "__unseen__"

    def __init__(self):
        self.categories: dict = {}

    def fit(self, frame: pd.DataFrame) -> "CategoricalEncoder":
        self.categories = {col: sorted(frame[col].unique()) for col in frame.columns}
        return self

    @property
    def width(self) -> int:
        return sum(len(cats) + 1 for cats in self.categories.values())

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        parts = []
        for col, cats in self.categories.items():
            values = pd.Categorical(frame[col], categories=cats)
            dummies = pd.get_dummies(values, dtype=np.float64)
            unseen = pd.Series(values.isna(), index=dummies.index, name=self.UNSEEN, dtype=np.float64)
            parts.append(pd.concat([dummies, unseen], axis=1).to_numpy())
        return np.concatenate(parts, axis=1)


def _read_rows(path: Path, n_columns: int) -> Tuple[pd.DataFrame, int]:
    """Read a headerless CSV as strings, dropping rows of the wrong shape."""
    if not path.exists():
        raise InputError(f"dataset file not found: {path}", field="dataset_path")
    bad_lines: List[List[str]] = []

    def _skip(line: List[str]) -> None:
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(path, header=None, dtype=str, engine="python", encoding="utf-8",
                            on_bad_lines=_skip, skip_blank_lines=True)
    except (OSError, pd.errors.ParserError) as exc:
        raise InputError(f"cannot read dataset {path}: {exc}", field="dataset_path") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"dataset {path} is not valid UTF-8: {exc.reason} at byte {exc.start}",
                         field="dataset_path") from exc

    skipped = len(bad_lines)
    if frame.shape[1] != n_columns:
        raise InputError(
            f"{path} has {frame.shape[1]} columns, expected {n_columns}", field="dataset_path"
        )
    frame = frame.apply(lambda col: col.str.strip())
    incomplete = frame.isna().any(axis=1) | (frame == "").any(axis=1)
    skipped += int(incomplete.sum())
    return frame.loc[~incomplete].reset_index(drop=True), skipped


def _encode_mushroom(frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, int]:
    known = frame[0].isin(list(MUSHROOM_CLASSES))
    frame = frame.loc[known].reset_index(drop=True)
    labels = frame[0].map(MUSHROOM_CLASSES).to_numpy(dtype=np.int64)
    # '?' (missing stalk-root) stays a category of its own
    attributes = frame.iloc[:, 1:]
    encoder = CategoricalEncoder().fit(attributes)
    return encoder.transform(attributes), labels, int((~known).sum())


def _encode_magic(frame: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray, int]:
    features = frame.iloc[:, :10].apply(pd.to_numeric, errors="coerce")
    known = frame[10].isin(list(MAGIC_CLASSES)) & features.notna().all(axis=1)
    features = features.loc[known]
    labels = frame.loc[known, 10].map(MAGIC_CLASSES).to_numpy(dtype=np.int64)
    values = features.to_numpy(dtype=np.float64)
    # z-score per column
    std = values.std(axis=0)
    std[std == 0.0] = 1.0
    values = (values - values.mean(axis=0)) / std
    return values, labels, int((~known).sum())


def load_classification(path: Union[str, Path], dataset_kind: EnvKind, T: int, seed: int,
                        n_arms: int = 2) -> BanditEnvironment:
    """Classification dataset as a K-armed bandit with zero-one rewards.

    Arm ``a`` sees the encoded sample placed in block ``a`` of a K*d vector; the
    reward is 1 exactly when ``a`` is the sample's label.
    """
    path = Path(path)
    if dataset_kind == EnvKind.MUSHROOM:
        frame, skipped = _read_rows(path, MUSHROOM_COLUMNS)
        features, labels, rejected = _encode_mushroom(frame)
    elif dataset_kind == EnvKind.MAGIC:
        frame, skipped = _read_rows(path, MAGIC_COLUMNS)
        features, labels, rejected = _encode_magic(frame)
    else:
        raise InputError(f"'{dataset_kind}' is not a classification dataset", field="env_kind")
    skipped += rejected
    if skipped:
        logger.warning("skipped %d malformed row(s) in %s", skipped, path)

    n, d = features.shape
    if T > n:
        raise InputError(f"horizon {T} exceeds the {n} usable samples in {path}", field="horizon")

    order = substream(seed, "dataset").choice(n, size=T, replace=False)
    samples, sample_labels = features[order], labels[order]
    raw = np.zeros((T, n_arms, n_arms * d))
    for arm in range(n_arms):
        raw[:, arm, arm * d:(arm + 1) * d] = samples

    model = RewardModel(kind=dataset_kind, n_arms=n_arms, noise_std=0.0, labels=sample_labels)
    logger.info("loaded %s: %d usable samples, %d features, horizon %d", dataset_kind.value, n, d, T)
    return _build(dataset_kind.value, model, raw, np.zeros((T, n_arms)), skipped)


# =============================================================================
# Factory / audit
# =============================================================================

def make_environment(spec: EnvSpec, seed: int) -> BanditEnvironment:
    """Environment described by ``spec`` for one Monte Carlo instance."""
    if spec.kind == EnvKind.COSINE:
        noise = COSINE_NOISE_STD if spec.noise_std is None else spec.noise_std
        return gen_cosine(spec.horizon, spec.context_dim, spec.n_arms, seed, noise)
    if spec.kind == EnvKind.QUADRATIC:
        noise = QUADRATIC_NOISE_STD if spec.noise_std is None else spec.noise_std
        return gen_quadratic(spec.horizon, spec.context_dim, spec.n_arms, seed, noise)
    return load_classification(spec.dataset_path, spec.kind, spec.horizon, seed, spec.n_arms)


def dump_environment(env: BanditEnvironment, path: Union[str, Path]) -> Path:
    """CSV of (round, arm, raw context coordinates, mean) for audits."""
    rows = []
    for batch in env.batches:
        for arm in range(env.n_arms):
            rows.append([batch.round_index, arm, *batch.raw_arms[arm], batch.means[arm]])
    columns = ["round", "arm"] + [f"x{i}" for i in range(env.raw_dim)] + ["mean"]
    path = Path(path)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format="%.10g")
    return path

"""
Experiment configuration schemas.

Provides validated models for:
- Network architecture and training (NetSpec / NetworkConfig)
- Reward environments (EnvSpec)
- Algorithms under comparison (AlgoSpec)
- Exploration schedules (BetaSpec)
- The resolved experiment (ExperimentConfig)
"""
import re
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# =============================================================================
# Enums
# =============================================================================

class TrainMode(str, Enum):
    """Gradient descent flavour used by TrainNN."""
    FULL_GRADIENT = "full"
    STOCHASTIC = "stochastic"


class EnvKind(str, Enum):
    """Reward environments."""
    COSINE = "cosine"
    QUADRATIC = "quadratic"
    MUSHROOM = "mushroom"
    MAGIC = "magic"


class AlgoKind(str, Enum):
    """Algorithms the harness can run."""
    BNUCB_FIXED = "bnucb-fixed"
    BNUCB_ADAPTIVE = "bnucb-adaptive"
    NEURALUCB = "neuralucb"
    LINUCB = "linucb"
    UNIFORM = "uniform"


class BetaMode(str, Enum):
    """Exploration coefficient schedules."""
    CONSTANT = "constant"
    THEORETICAL = "theoretical"


class Profile(str, Enum):
    """Desk-scale width profiles."""
    CI = "ci"
    FULL = "full"


# =============================================================================
# Network
# =============================================================================

class NetSpec(BaseModel):
    """Architecture and TrainNN hyperparameters (input size comes from the environment)."""
    model_config = ConfigDict(frozen=True)

    width: int = Field(20, gt=0)
    depth: int = Field(2, ge=2)
    reg_lambda: float = Field(0.01, gt=0)
    step_size: float = Field(0.01, gt=0)
    gd_steps: int = Field(200, ge=0)
    train_mode: TrainMode = TrainMode.STOCHASTIC
    sgd_batch_size: int = Field(64, gt=0)
    warm_start: bool = False

    @field_validator("width")
    @classmethod
    def width_must_be_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("width must be even for the block-symmetric initialization")
        return v


class NetworkConfig(NetSpec):
    """NetSpec bound to a concrete input dimension."""
    input_dim: int = Field(..., gt=0)

    @field_validator("input_dim")
    @classmethod
    def input_dim_must_be_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("input_dim must be even for the block-symmetric initialization")
        return v

    @property
    def param_count(self) -> int:
        """Number of scalars in theta: m*d + m^2*(L-2) + m."""
        m, d, L = self.width, self.input_dim, self.depth
        return m * d + m * m * (L - 2) + m

    @classmethod
    def from_spec(cls, spec: NetSpec, input_dim: int) -> "NetworkConfig":
        return cls(input_dim=input_dim, **spec.model_dump())


# =============================================================================
# Environment
# =============================================================================

class EnvSpec(BaseModel):
    """Which environment to generate and at what size."""
    model_config = ConfigDict(frozen=True)

    kind: EnvKind = EnvKind.COSINE
    horizon: int = Field(2000, gt=0)
    context_dim: int = Field(10, gt=0)
    n_arms: int = Field(4, gt=0)
    dataset_path: Optional[str] = None
    noise_std: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def dataset_needs_path(self) -> "EnvSpec":
        if self.kind in (EnvKind.MUSHROOM, EnvKind.MAGIC) and not self.dataset_path:
            raise ValueError(f"env kind '{self.kind.value}' requires dataset_path")
        return self


# =============================================================================
# Algorithms
# =============================================================================

_TOKEN_RE = re.compile(r"^\s*([a-z\-]+)\s*(?:\((.*)\))?\s*$")


class AlgoSpec(BaseModel):
    """One algorithm entry, e.g. ``bnucb-adaptive(B=40,log_q=25)``."""
    model_config = ConfigDict(frozen=True)

    kind: AlgoKind
    batches: Optional[int] = Field(None, gt=0)
    log_q: Optional[float] = Field(None, gt=0, allow_inf_nan=False)
    lin_lambda: Optional[float] = Field(None, gt=0)
    lin_beta: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def check_required_fields(self) -> "AlgoSpec":
        if self.kind in (AlgoKind.BNUCB_FIXED, AlgoKind.BNUCB_ADAPTIVE) and self.batches is None:
            raise ValueError(f"{self.kind.value} requires B")
        if self.kind == AlgoKind.BNUCB_ADAPTIVE and self.log_q is None:
            raise ValueError("bnucb-adaptive requires log_q")
        return self

    @property
    def label(self) -> str:
        """Stable display name used in run ids and summary rows."""
        if self.kind == AlgoKind.BNUCB_FIXED:
            return f"bnucb-fixed(B={self.batches})"
        if self.kind == AlgoKind.BNUCB_ADAPTIVE:
            return f"bnucb-adaptive(B={self.batches},log_q={self.log_q:g})"
        if self.kind == AlgoKind.LINUCB and (self.lin_lambda is not None or self.lin_beta is not None):
            parts = []
            if self.lin_lambda is not None:
                parts.append(f"lambda={self.lin_lambda:g}")
            if self.lin_beta is not None:
                parts.append(f"beta={self.lin_beta:g}")
            return f"linucb({','.join(parts)})"
        return self.kind.value

    @property
    def is_neural(self) -> bool:
        return self.kind in (AlgoKind.BNUCB_FIXED, AlgoKind.BNUCB_ADAPTIVE, AlgoKind.NEURALUCB)

    @classmethod
    def parse(cls, token: str) -> "AlgoSpec":
        """Parse an algorithm token of the flat config format."""
        match = _TOKEN_RE.match(token)
        if not match:
            raise ValueError(f"cannot parse algorithm '{token}'")
        name, arg_text = match.group(1), match.group(2)
        try:
            kind = AlgoKind(name)
        except ValueError:
            raise ValueError(f"unknown algorithm '{name}'") from None

        aliases = {"B": "batches", "log_q": "log_q", "lambda": "lin_lambda", "beta": "lin_beta"}
        values: Dict[str, Any] = {"kind": kind}
        if arg_text:
            for pair in arg_text.split(","):
                if not pair.strip():
                    continue
                if "=" not in pair:
                    raise ValueError(f"expected key=value in '{token}'")
                key, raw = (s.strip() for s in pair.split("=", 1))
                if key not in aliases:
                    raise ValueError(f"unknown parameter '{key}' in '{token}'")
                values[aliases[key]] = raw
        return cls(**values)


def split_algorithm_tokens(text: str) -> List[str]:
    """Split ``a(B=1,x=2), b`` on commas outside parentheses."""
    tokens, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            tokens.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail:
        tokens.append(tail)
    return [t for t in tokens if t]


# =============================================================================
# Exploration schedule
# =============================================================================

class BetaSpec(BaseModel):
    """Constant beta or the confidence-radius expression with its constants."""
    model_config = ConfigDict(frozen=True)

    mode: BetaMode = BetaMode.CONSTANT
    beta: float = Field(0.001, gt=0)
    nu: float = Field(1.0, gt=0)
    delta: float = Field(0.05, gt=0, lt=1)
    S: float = Field(1.0, gt=0)
    C1: float = Field(1.0, gt=0)


# =============================================================================
# Experiment
# =============================================================================

class NtkDiagSpec(BaseModel):
    """Effective-dimension diagnostic settings."""
    model_config = ConfigDict(frozen=True)

    subsample: int = Field(500, gt=0)
    lam: float = Field(0.01, gt=0)


class ExperimentConfig(BaseModel):
    """Fully resolved experiment; echoed into config.json for provenance."""
    model_config = ConfigDict(frozen=True)

    profile: Profile = Profile.CI
    env: EnvSpec = EnvSpec()
    algorithms: List[AlgoSpec] = Field(..., min_length=1)
    net: NetSpec = NetSpec()
    beta: BetaSpec = BetaSpec()
    lin_lambda: float = Field(0.01, gt=0)
    lin_beta: float = Field(0.1, ge=0)
    n_instances: int = Field(5, gt=0)
    master_seed: int = Field(0, ge=0)
    n_workers: int = Field(1, gt=0)
    record_rounds: bool = True
    ntk_diag: Optional[NtkDiagSpec] = None

    @property
    def algorithm_labels(self) -> List[str]:
        return [algo.label for algo in self.algorithms]

    @model_validator(mode="after")
    def labels_must_be_unique(self) -> "ExperimentConfig":
        labels = self.algorithm_labels
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise ValueError(f"duplicate algorithms: {', '.join(duplicates)}")
        return self

    def with_seed(self, master_seed: int) -> "ExperimentConfig":
        return self.model_copy(update={"master_seed": master_seed})

"""
Flat ``key = value`` experiment configuration files.

One key per line, ``#`` starts a comment, blank lines are ignored. Lines are
tokenized by python-dotenv's stream parser. Keys are mapped
onto the nested :class:`ExperimentConfig`; every invalid field is reported at once.
"""
import io
import logging
from typing import Any, Dict, List, Optional, Tuple

from dotenv.parser import Binding, parse_stream
from pydantic import ValidationError

from app.core.exceptions import ConfigError
from app.schemas.experiment import (
    AlgoSpec,
    EnvKind,
    ExperimentConfig,
    Profile,
    split_algorithm_tokens,
)

logger = logging.getLogger(__name__)


# key -> (section, field); section None means top level
KEY_MAP: Dict[str, Tuple[Optional[str], str]] = {
    "profile": (None, "profile"),
    "env_kind": ("env", "kind"),
    "horizon": ("env", "horizon"),
    "context_dim": ("env", "context_dim"),
    "n_arms": ("env", "n_arms"),
    "dataset_path": ("env", "dataset_path"),
    "noise_std": ("env", "noise_std"),
    "algorithms": (None, "algorithms"),
    "width": ("net", "width"),
    "depth": ("net", "depth"),
    "reg_lambda": ("net", "reg_lambda"),
    "step_size": ("net", "step_size"),
    "gd_steps": ("net", "gd_steps"),
    "train_mode": ("net", "train_mode"),
    "sgd_batch_size": ("net", "sgd_batch_size"),
    "warm_start": ("net", "warm_start"),
    "beta_mode": ("beta", "mode"),
    "beta": ("beta", "beta"),
    "beta_nu": ("beta", "nu"),
    "beta_delta": ("beta", "delta"),
    "beta_S": ("beta", "S"),
    "beta_C1": ("beta", "C1"),
    "lin_lambda": (None, "lin_lambda"),
    "lin_beta": (None, "lin_beta"),
    "n_instances": (None, "n_instances"),
    "master_seed": (None, "master_seed"),
    "n_workers": (None, "n_workers"),
    "ntk_subsample": ("ntk_diag", "subsample"),
    "ntk_lambda": ("ntk_diag", "lam"),
    "record_rounds": (None, "record_rounds"),
}

# section.field -> flat key, for error messages
_REVERSE = {
    f"{section}.{name}" if section else name: key
    for key, (section, name) in KEY_MAP.items()
}


# =============================================================================
# Presets
# =============================================================================

_PRESETS: Dict[EnvKind, Dict[str, Any]] = {
    EnvKind.COSINE: {
        "env": {"horizon": 2000, "context_dim": 10, "n_arms": 4},
        "net": {"reg_lambda": 0.01, "step_size": 0.01, "gd_steps": 200},
        "beta": {"beta": 0.001},
        "full_width": 200,
        "algorithms": ["bnucb-fixed(B=40)", "bnucb-adaptive(B=40,log_q=25)", "neuralucb", "linucb"],
    },
    EnvKind.QUADRATIC: {
        "env": {"horizon": 2000, "context_dim": 4, "n_arms": 10},
        "net": {"reg_lambda": 0.01, "step_size": 0.005, "gd_steps": 200},
        "beta": {"beta": 0.01},
        "full_width": 100,
        "algorithms": [
            "bnucb-fixed(B=40)", "bnucb-adaptive(B=40,log_q=20)", "bnucb-adaptive(B=40,log_q=25)",
            "bnucb-adaptive(B=40,log_q=30)", "neuralucb", "linucb",
        ],
    },
    EnvKind.MUSHROOM: {
        "env": {"horizon": 2000, "n_arms": 2},
        "net": {"reg_lambda": 0.001, "step_size": 0.05, "gd_steps": 200},
        "beta": {"beta": 0.001},
        "full_width": 100,
        "algorithms": ["bnucb-fixed(B=40)", "bnucb-adaptive(B=40,log_q=25)", "neuralucb", "linucb"],
    },
    EnvKind.MAGIC: {
        "env": {"horizon": 2000, "n_arms": 2},
        "net": {"reg_lambda": 0.001, "step_size": 0.05, "gd_steps": 200},
        "beta": {"beta": 0.001},
        "full_width": 400,
        "algorithms": [
            "bnucb-fixed(B=40)", "bnucb-adaptive(B=40,log_q=50)", "bnucb-adaptive(B=40,log_q=60)",
            "bnucb-adaptive(B=40,log_q=70)", "neuralucb", "linucb",
        ],
    },
}

CI_WIDTH = 20


def preset_config(kind: EnvKind, profile: Profile = Profile.CI,
                  dataset_path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """Per-environment hyperparameters; ``ci`` shrinks the width to 20."""
    kind = EnvKind(kind)
    profile = Profile(profile)
    preset = _PRESETS[kind]
    net = dict(preset["net"])
    net["width"] = preset["full_width"] if profile == Profile.FULL else CI_WIDTH
    raw: Dict[str, Any] = {
        "profile": profile,
        "env": {"kind": kind, "dataset_path": dataset_path, **preset["env"]},
        "net": net,
        "beta": dict(preset["beta"]),
        "algorithms": [AlgoSpec.parse(token) for token in preset["algorithms"]],
        **overrides,
    }
    return _validate(raw)


# =============================================================================
# Parsing
# =============================================================================

def parse_lines(lines: List[str], source: str = "<config>") -> Dict[str, str]:
    """Raw ``key -> value`` strings; duplicates, unknown keys and bad lines are errors.

    Lines are tokenized with python-dotenv, so values may be quoted and a ``#``
    preceded by whitespace starts a comment.
    """
    values: Dict[str, str] = {}
    problems: List[str] = []
    for binding in parse_stream(io.StringIO("\n".join(lines))):
        number = _line_number(binding)
        if binding.error or (binding.key is not None and binding.value is None):
            problems.append(f"{source}:{number}: expected 'key = value'")
            continue
        if binding.key is None:
            continue
        key, value = binding.key, binding.value.strip()
        if key not in KEY_MAP:
            problems.append(f"{source}:{number}: unknown key '{key}'")
        elif key in values:
            problems.append(f"{source}:{number}: duplicate key '{key}'")
        else:
            values[key] = value
    if problems:
        raise ConfigError("; ".join(problems), field=_first_key(problems))
    return values


def _line_number(binding: Binding) -> int:
    """1-based line of the binding's first non-blank character."""
    text = binding.original.string
    leading = text[:len(text) - len(text.lstrip())]
    return binding.original.line + leading.count("\n")


def _first_key(problems: List[str]) -> Optional[str]:
    for problem in problems:
        if "'" in problem:
            return problem.split("'")[1]
    return None


def build_config(values: Dict[str, str]) -> ExperimentConfig:
    """Map flat keys onto the nested model and validate."""
    raw: Dict[str, Any] = {}
    for key, value in values.items():
        section, name = KEY_MAP[key]
        if key == "algorithms":
            try:
                raw["algorithms"] = [AlgoSpec.parse(tok) for tok in split_algorithm_tokens(value)]
            except (ValueError, ValidationError) as exc:
                raise ConfigError(f"algorithms: {_message(exc)}", field="algorithms") from None
            continue
        if value == "" and name in ("dataset_path", "noise_std"):
            continue
        target = raw.setdefault(section, {}) if section else raw
        target[name] = value
    return _validate(raw)


def _message(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(err["msg"] for err in exc.errors())
    return str(exc)


def _validate(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**raw)
    except ValidationError as exc:
        fields, messages = [], []
        for err in exc.errors():
            path = ".".join(str(part) for part in err["loc"])
            key = _REVERSE.get(path, path)
            fields.append(key)
            messages.append(f"{key}: {err['msg']}")
        raise ConfigError("; ".join(messages), field=",".join(dict.fromkeys(fields))) from None


def load_config(path: str, master_seed: Optional[int] = None) -> ExperimentConfig:
    """Read and validate a flat config file; ``master_seed`` overrides the file's value."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}", field="config") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config {path} is not valid UTF-8: {exc.reason} at byte {exc.start}",
                          field="config") from exc

    values = parse_lines(lines, source=path)
    if master_seed is not None:
        values["master_seed"] = str(master_seed)
    config = build_config(values)
    logger.info(
        "resolved config %s: env=%s T=%d algorithms=[%s] profile=%s m=%d L=%d instances=%d seed=%d",
        path, config.env.kind.value, config.env.horizon, ", ".join(config.algorithm_labels),
        config.profile.value, config.net.width, config.net.depth, config.n_instances, config.master_seed,
    )
    return config

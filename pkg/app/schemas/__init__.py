"""Pydantic schemas for experiment configuration, results and diagnostics."""
# Experiment
from app.schemas.experiment import (
    AlgoKind, AlgoSpec, BetaMode, BetaSpec, EnvKind, EnvSpec,
    ExperimentConfig, NetSpec, NetworkConfig, NtkDiagSpec, Profile, TrainMode
)

# Records
from app.schemas.records import (
    BatchRow, RoundTrace, RunRecord, RunStatus,
    AGGREGATE_COLUMNS, BATCH_COLUMNS, PER_ROUND_COLUMNS, SUMMARY_COLUMNS
)

# Diagnostics
from app.schemas.diagnostics import CheckReport, CheckResult, NtkReport

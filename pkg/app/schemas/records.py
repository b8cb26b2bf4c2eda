"""Schemas for run results and their tabular exports."""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RunStatus(str, Enum):
    OK = "ok"
    ABORTED = "aborted"


PER_ROUND_COLUMNS = ["run_id", "t", "batch_index", "action", "reward", "inst_regret", "cum_regret"]
SUMMARY_COLUMNS = ["run_id", "algo", "total_regret", "n_updates", "wall_time_ms", "instance", "status"]
BATCH_COLUMNS = ["run_id", "batch_index", "t_start", "t_end", "log_ratio_before_trigger"]
AGGREGATE_COLUMNS = [
    "algo", "n_runs", "median_regret", "mean_regret", "std_regret",
    "mean_updates", "median_wall_time_ms",
]


class RoundTrace(BaseModel):
    """Column-oriented per-round trace of one run."""
    t: List[int] = []
    batch_index: List[int] = []
    action: List[int] = []
    reward: List[float] = []
    inst_regret: List[float] = []
    cum_regret: List[float] = []

    def append(self, t: int, batch_index: int, action: int, reward: float, regret: float) -> None:
        previous = self.cum_regret[-1] if self.cum_regret else 0.0
        self.t.append(t)
        self.batch_index.append(batch_index)
        self.action.append(action)
        self.reward.append(reward)
        self.inst_regret.append(regret)
        self.cum_regret.append(previous + regret)

    def __len__(self) -> int:
        return len(self.t)


class BatchRow(BaseModel):
    batch_index: int
    t_start: int
    t_end: int
    log_ratio_before_trigger: Optional[float] = None


class RunRecord(BaseModel):
    """Outcome of one algorithm on one Monte Carlo instance."""
    model_config = ConfigDict(validate_assignment=False)

    run_id: str
    instance: int
    algo: str
    seed: int
    status: RunStatus = RunStatus.OK
    error: Optional[str] = None
    rounds: RoundTrace = Field(default_factory=RoundTrace)
    batches: List[BatchRow] = []
    n_policy_updates: int = 0
    wall_time_ms: float = 0.0
    total_regret: float = 0.0
    metadata: Dict[str, Any] = {}

    @model_validator(mode="after")
    def boundaries_increase(self) -> "RunRecord":
        starts = [b.t_start for b in self.batches]
        if starts and (starts[0] != 1 or any(a >= b for a, b in zip(starts, starts[1:]))):
            raise ValueError("batch boundaries must start at t=1 and strictly increase")
        return self

    def summary_row(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "algo": self.algo,
            "total_regret": self.total_regret,
            "n_updates": self.n_policy_updates,
            "wall_time_ms": self.wall_time_ms,
            "instance": self.instance,
            "status": self.status.value,
        }

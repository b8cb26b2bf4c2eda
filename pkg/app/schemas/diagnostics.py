"""Schemas for NTK reports and numerical self-checks."""
from typing import List, Optional

from pydantic import BaseModel


class NtkReport(BaseModel):
    """Gram-matrix summary emitted by the ``ntk`` subcommand."""
    env: str
    n_contexts: int
    depth: int
    lam: float
    min_eig: float
    assumption_holds: bool
    d_tilde: float
    eigenvalues: List[float]


class CheckResult(BaseModel):
    """Outcome of one oracle or gradient check."""
    name: str
    passed: bool
    max_error: float
    tolerance: float
    detail: Optional[str] = None


class CheckReport(BaseModel):
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

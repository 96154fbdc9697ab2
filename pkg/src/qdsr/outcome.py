"""The per-run result record shared by every search mode."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Optional


class Stage(str, enum.Enum):
    STEP1 = "step1"
    STEP3 = "step3"


@dataclass
class RunOutcome:
    """One run's result.

    ``n_evals_step1`` and ``n_evals_cmaes`` are kept apart to mirror the two
    evaluation-count columns of the result tables. ``n_evals_at_hit`` is the
    count of the stage that produced the hit, or None on a miss.
    """

    target: str
    seed: int
    mode: str
    hit: bool = False
    hit_stage: Optional[Stage] = None
    n_evals_at_hit: Optional[int] = None
    n_evals_step1: int = 0
    n_evals_cmaes: int = 0
    best_expression: str = ""
    best_infix: str = ""
    best_scalars: list = field(default_factory=list)
    best_reward: float = -1.0
    best_validation_nrmse: Optional[float] = None
    wall_time_s: float = 0.0
    archive_dump_path: Optional[str] = None
    error: Optional[str] = None

    def __post_init__(self):
        if self.hit and (self.best_validation_nrmse is None or self.best_validation_nrmse > 1e-6):
            raise ValueError("a hit must have validation NRMSE <= 1e-6")

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        d["hit_stage"] = self.hit_stage.value if self.hit_stage else None
        if not include_timing:
            d.pop("wall_time_s")
        return d

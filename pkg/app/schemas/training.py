from typing import List, Literal

from pydantic import BaseModel, Field, model_validator


class FoldPlan(BaseModel):
    """
    Partition of the training terrains into folds.

    For fold f the kernel set is the fold itself and the mean set is every
    other terrain.
    """
    folds: List[List[str]] = Field(..., min_length=1, description="Terrain ids per fold")
    seed: int = Field(0, description="Seed the plan was drawn with")

    @model_validator(mode="after")
    def _is_partition(self) -> "FoldPlan":
        seen = set()
        for fold in self.folds:
            if not fold:
                raise ValueError("every fold must hold at least one terrain")
            overlap = seen.intersection(fold)
            if overlap or len(set(fold)) != len(fold):
                raise ValueError(f"folds overlap on {sorted(overlap) or fold}")
            seen.update(fold)
        return self

    @property
    def terrain_ids(self) -> List[str]:
        return [tid for fold in self.folds for tid in fold]

    def kernel_set(self, fold: int) -> List[str]:
        return list(self.folds[fold])

    def mean_set(self, fold: int) -> List[str]:
        return [tid for f, ids in enumerate(self.folds) if f != fold for tid in ids]


class TrainingLogEntry(BaseModel):
    phase: Literal["mean", "kernel"] = Field(..., description="Training stage")
    label: str = Field(..., description="Which model was trained, e.g. fold_0 or final")
    step: int = Field(..., ge=0, description="Epoch or optimizer step")
    loss: float = Field(..., description="Monitored loss at this step")


class TrainingReport(BaseModel):
    mode: Literal["codega", "joint"] = Field(..., description="Kernel training variant")
    plan: FoldPlan | None = Field(None, description="Fold plan (codega mode only)")
    reward_offset: float = Field(..., description="Reward standardization offset, cm^3")
    reward_scale: float = Field(..., gt=0, description="Reward standardization scale, cm^3")
    signal_variance: float = Field(..., description="Learned signal variance (standardized)")
    noise_variance: float = Field(..., description="Learned noise variance (standardized)")
    lengthscales: List[float] = Field(..., description="Learned lengthscales")
    log: List[TrainingLogEntry] = Field(default_factory=list, description="Loss curve")

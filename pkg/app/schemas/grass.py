from pydantic import BaseModel, Field, model_validator
from typing import List

from app.analysis.subspace import GrassPoint


class GrassPointModel(BaseModel):
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    basis: List[float]

    @model_validator(mode="after")
    def check_shape(self):
        if self.k > self.n:
            raise ValueError("k cannot exceed n")
        if len(self.basis) != self.n * self.k:
            raise ValueError(f"basis has {len(self.basis)} entries, expected {self.n * self.k}")
        return self

    @classmethod
    def from_point(cls, plane: GrassPoint) -> "GrassPointModel":
        return cls(**plane.to_json())

    def to_point(self) -> GrassPoint:
        return GrassPoint.from_json(self.model_dump())

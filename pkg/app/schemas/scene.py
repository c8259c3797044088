from pydantic import BaseModel, Field, model_validator
from typing import List, Optional


_MODEL_CONFIG_IGNORE_EXTRA = {
    "extra": "ignore",
}


class PieceModel(BaseModel):
    equations: List[str] = Field(default_factory=list)
    ge: List[str] = Field(default_factory=list)
    gt: List[str] = Field(default_factory=list)
    ne: List[str] = Field(default_factory=list)

    model_config = _MODEL_CONFIG_IGNORE_EXTRA


class SceneFile(BaseModel):
    name: str = Field(..., min_length=1)
    ambient_dim: int = Field(..., ge=1)
    declared_dim: int = Field(..., ge=0)
    pieces: List[PieceModel] = Field(..., min_length=1)
    # Lugar singular fornecido pelo usuario (sobrescreve o derivado)
    singular_locus: Optional[List[PieceModel]] = None
    description: str = ""

    model_config = _MODEL_CONFIG_IGNORE_EXTRA

    @model_validator(mode="after")
    def check_dims(self):
        if self.declared_dim > self.ambient_dim:
            raise ValueError("declared_dim cannot exceed ambient_dim")
        return self

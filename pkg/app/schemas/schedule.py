from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.core.config import current_settings


class ScaleSchedule(BaseModel):
    """Radii r_k = r0 * lambda^k and apertures delta_k = delta0 * mu^k for k = 1..K."""

    r0: float = Field(default_factory=lambda: current_settings().R0, gt=0)
    lam: float = Field(default_factory=lambda: current_settings().LAMBDA, alias="lambda")
    K: int = Field(default_factory=lambda: current_settings().K, ge=1)
    delta0: float = Field(default_factory=lambda: current_settings().DELTA0)
    mu: float = Field(default_factory=lambda: current_settings().MU)
    samples_per_scale: int = Field(default_factory=lambda: current_settings().SAMPLES_PER_SCALE, ge=1)
    seed: int = Field(default_factory=lambda: current_settings().SEED, ge=0, lt=2 ** 64)

    model_config = ConfigDict(populate_by_name=True, frozen=True, extra="ignore")

    @field_validator("lam")
    @classmethod
    def check_ratio(cls, v):
        if not 0 < v < 1:
            raise ValueError("lambda must lie in (0, 1)")
        return v

    @field_validator("mu")
    @classmethod
    def check_aperture_ratio(cls, v):
        if not 0 < v <= 1:
            raise ValueError("mu must lie in (0, 1]")
        return v

    @field_validator("delta0")
    @classmethod
    def check_aperture(cls, v):
        if not 0 < v <= 1:
            raise ValueError("delta0 must lie in (0, 1]")
        return v

    @property
    def scales(self) -> range:
        return range(1, self.K + 1)

    def radius(self, k: int) -> float:
        return self.r0 * self.lam ** k

    def aperture(self, k: int) -> float:
        return min(1.0, self.delta0 * self.mu ** k)

    def scale_seed(self, k: int) -> int:
        return self.seed ^ k

    def window(self, size: int | None = None) -> list[int]:
        """The finest ``size`` scale indices, coarse to fine."""
        size = size or current_settings().FIBER_WINDOW
        return list(self.scales)[-size:]

    def updated(self, **overrides) -> "ScaleSchedule":
        clean = {k: v for k, v in overrides.items() if v is not None}
        if not clean:
            return self
        data = self.model_dump(by_alias=True)
        if "lam" in clean:
            clean["lambda"] = clean.pop("lam")
        data.update(clean)
        return ScaleSchedule.model_validate(data)

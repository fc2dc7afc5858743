"""Run defaults and environment overrides."""
import os
from typing import Optional, Tuple

from pydantic import BaseModel, Field

TAXONOMY_ENV_VAR = "LINECP_TAXONOMY"


class Defaults(BaseModel):
    """Defaults for every CLI flag. Values follow the published configuration."""

    mode: str = Field(default="risk-sensitive", description="Calibration mode")
    alpha: float = Field(default=0.1, gt=0.0, lt=1.0, description="Standard miscoverage rate")
    alpha_critical: float = Field(default=0.01, gt=0.0, lt=1.0, description="Critical miscoverage rate")
    pooling: str = Field(default="group", description="Risk-sensitive stratification")
    ratios: Tuple[float, float, float, float] = (0.7, 0.1, 0.1, 0.1)
    seed: int = 42
    daily_volume: int = Field(default=1000, ge=1)
    k_norm: float = 3.0
    temperature: float = Field(default=2.0, gt=0.0)
    warmup_epochs: int = Field(default=10, ge=0)
    alpha_criticals: Tuple[float, ...] = (0.005, 0.01, 0.02, 0.05)
    synth_cases: int = Field(default=1000, ge=1)
    synth_prevalence: float = Field(default=0.3, ge=0.0, le=1.0)
    synth_sharpness: float = Field(default=1.0, gt=0.0)
    synth_temperature: float = Field(default=1.0, gt=0.0)


DEFAULTS = Defaults()


def taxonomy_path_override() -> Optional[str]:
    """Return the taxonomy path set through the environment, if any."""
    value = os.environ.get(TAXONOMY_ENV_VAR, "").strip()
    return value or None

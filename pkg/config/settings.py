from typing import List, Tuple
from pydantic_settings import BaseSettings
from pydantic import Field, model_validator


class Settings(BaseSettings):
    """Run configuration loaded from environment variables or a key/value file"""

    # Application
    app_name: str = Field(default="pseudotor", alias="PSEUDOTOR_APP_NAME")
    log_level: str = Field(default="INFO", alias="PSEUDOTOR_LOG_LEVEL")
    output_dir: str = Field(default="./out", alias="PSEUDOTOR_OUTPUT_DIR")
    threads: int = Field(default=1, alias="PSEUDOTOR_THREADS")
    seed: int = Field(default=20091001, alias="PSEUDOTOR_SEED")
    schema_version: int = Field(default=1, alias="PSEUDOTOR_SCHEMA_VERSION")

    # Integrals (x-eigenvalues, y-eigenvalues)
    f1_x: List[float] = Field(default=[0.0, 1.0, 2.0], alias="PSEUDOTOR_F1_X")
    f1_y: List[float] = Field(default=[2.0, 1.0, 0.0], alias="PSEUDOTOR_F1_Y")
    f2_x: List[float] = Field(default=[0.0, 1.0, 3.0], alias="PSEUDOTOR_F2_X")
    f2_y: List[float] = Field(default=[3.0, 2.0, 0.0], alias="PSEUDOTOR_F2_Y")
    allow_unbalanced: bool = Field(default=False, alias="PSEUDOTOR_ALLOW_UNBALANCED")

    # Base height function on the w-line
    height_mode: str = Field(default="mobius", alias="PSEUDOTOR_HEIGHT_MODE")
    height_max: List[float] = Field(default=[0.0, 1.0, -1.0], alias="PSEUDOTOR_HEIGHT_MAX")
    height_min: List[float] = Field(default=[1.0, 0.0, -1.0], alias="PSEUDOTOR_HEIGHT_MIN")

    # Fibration sampling
    loop_levels: List[float] = Field(default=[-0.5, -0.2, 0.3, 0.6], alias="PSEUDOTOR_LOOP_LEVELS")
    torus_labels: List[Tuple[float, float]] = Field(
        default=[(2.0, 3.3), (1.5, 2.4), (2.5, 3.9), (2.2, 3.1)],
        alias="PSEUDOTOR_TORUS_LABELS"
    )
    loop_samples: int = Field(default=64, alias="PSEUDOTOR_LOOP_SAMPLES")
    angle_samples: int = Field(default=32, alias="PSEUDOTOR_ANGLE_SAMPLES")
    random_flags: int = Field(default=1000, alias="PSEUDOTOR_RANDOM_FLAGS")
    multistarts: int = Field(default=10, alias="PSEUDOTOR_MULTISTARTS")

    # Tolerances
    flag_tol: float = Field(default=1e-10, alias="PSEUDOTOR_FLAG_TOL")
    zero_tol: float = Field(default=1e-14, alias="PSEUDOTOR_ZERO_TOL")
    rank_tol: float = Field(default=1e-7, alias="PSEUDOTOR_RANK_TOL")
    flow_tol: float = Field(default=1e-9, alias="PSEUDOTOR_FLOW_TOL")
    min_step: float = Field(default=1e-12, alias="PSEUDOTOR_MIN_STEP")
    seed_tol: float = Field(default=1e-9, alias="PSEUDOTOR_SEED_TOL")
    phase_tol: float = Field(default=1e-3, alias="PSEUDOTOR_PHASE_TOL")
    segment_tol: float = Field(default=1e-6, alias="PSEUDOTOR_SEGMENT_TOL")
    exclusion_radius: float = Field(default=1e-2, alias="PSEUDOTOR_EXCLUSION_RADIUS")
    collapse_radius: float = Field(default=1e-3, alias="PSEUDOTOR_COLLAPSE_RADIUS")

    # Toric degeneration cutoff radii
    r1: float = Field(default=0.2, alias="PSEUDOTOR_R1")
    r2: float = Field(default=0.1, alias="PSEUDOTOR_R2")

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = False
        populate_by_name = True

    @model_validator(mode="after")
    def check_consistency(self) -> "Settings":
        """Reject unbalanced integrals, non-positive tolerances and inverted radii"""
        for name in ("flag_tol", "zero_tol", "rank_tol", "flow_tol", "min_step", "seed_tol",
                     "phase_tol", "segment_tol", "exclusion_radius", "collapse_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.r1 > self.r2 > 0:
            raise ValueError("radii must satisfy r1 > r2 > 0")
        if self.height_mode not in ("symbol", "mobius"):
            raise ValueError("height_mode must be 'symbol' or 'mobius'")
        if not self.allow_unbalanced:
            for xs, ys in ((self.f1_x, self.f1_y), (self.f2_x, self.f2_y)):
                sums = {x + y for x, y in zip(xs, ys)}
                if len(sums) != 1:
                    raise ValueError("integral eigenvalues violate the balance condition")
        return self

    def print_defaults(self) -> str:
        """Render every field as ALIAS=value lines"""
        lines = []
        for name, field in type(self).model_fields.items():
            value = getattr(self, name)
            if isinstance(value, (list, tuple)):
                value = _json_list(value)
            lines.append(f"{field.alias}={value}")
        return "\n".join(lines)


def _json_list(value) -> str:
    """Format nested lists the way the environment parser reads them back"""
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_json_list(v) for v in value) + "]"
    return repr(value)


# Global settings instance
settings = Settings()

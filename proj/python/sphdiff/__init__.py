"""Score-based diffusion for band-limited spherical random fields."""

from ._sphdiff import (
    ConfigError,
    DomainError,
    IoError,
    TrainingError,
    analyze,
    bound_report,
    generate,
    kl_bound,
    matern_spectrum,
    run_cli,
    sample_prior,
    synthesize,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "IoError",
    "TrainingError",
    "analyze",
    "bound_report",
    "generate",
    "kl_bound",
    "matern_spectrum",
    "run_cli",
    "sample_prior",
    "synthesize",
]

"""Unified multi-modal conditional diffusion for cardiovascular signals.

One model covers denoising, imputation and cross-modality translation
over PPG, ECG and blood-pressure segments; the task (which modalities
condition, which is generated, how conditions are degraded) is selected
at inference time through slot assignment and attention masking rather
than by retraining.

Submodules that need torch (``model``, ``training``, ``generation``)
are imported lazily; ``import unicardio`` alone stays cheap.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DegenerateStatsError,
    FormatError,
    NonFiniteSignalError,
    ParameterError,
    TaskError,
    TrainingDiverged,
    UnicardioError,
)
from .tasks import (
    Condition,
    Degradation,
    Family,
    Modality,
    SlotRole,
    TaskSpec,
    enumerate_tasks,
    parse_task,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DegenerateStatsError",
    "FormatError",
    "NonFiniteSignalError",
    "ParameterError",
    "TaskError",
    "TrainingDiverged",
    "UnicardioError",
    "Condition",
    "Degradation",
    "Family",
    "Modality",
    "SlotRole",
    "TaskSpec",
    "enumerate_tasks",
    "parse_task",
]

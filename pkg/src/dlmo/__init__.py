"""Two-time-scale DLMO estimation from sleep history and wearable sensors."""

__version__ = "0.1.0"

from .core import ContinuousHours, DlmoLabel, SleepRecord, Timestamp  # noqa: E402
from .ingest import Dataset, MinuteSeries, ParticipantRecord, load_dataset  # noqa: E402
from .mavg import MAConfig, MAParams  # noqa: E402
from .gru import GruConfig, TwoStepModel  # noqa: E402
from .synth import CohortSpec, generate_cohort  # noqa: E402

__all__ = [
    "CohortSpec", "ContinuousHours", "Dataset", "DlmoLabel", "GruConfig", "MAConfig",
    "MAParams", "MinuteSeries", "ParticipantRecord", "SleepRecord", "Timestamp",
    "TwoStepModel", "generate_cohort", "load_dataset",
]

"""Feature-space voice anonymization: kNN-VC conversion, discrete CTC objective,
random backend admixture and privacy/utility metrics."""
from .errors import (
    CapacityError,
    DataError,
    DomainError,
    FormatError,
    IoError,
    MissingOutputError,
    SchemaError,
    VoxAnonError,
)
from .io_formats import Embedding, FeatureSequence, Transcript, TrialList, TrialScore

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "DataError",
    "DomainError",
    "Embedding",
    "FeatureSequence",
    "FormatError",
    "IoError",
    "MissingOutputError",
    "SchemaError",
    "Transcript",
    "TrialList",
    "TrialScore",
    "VoxAnonError",
]

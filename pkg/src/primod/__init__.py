"""Retrieval-augmented, lifecycle-aware privacy threat modeling for AI systems."""

__version__ = "0.1.0"

from .errors import PrimodError
from .kb import LinddunCategory, SourceKb
from .llm_client import AnalysisResult, ModelConfig, ThreatRecord

__all__ = [
    "AnalysisResult",
    "LinddunCategory",
    "ModelConfig",
    "PrimodError",
    "SourceKb",
    "ThreatRecord",
    "__version__",
]

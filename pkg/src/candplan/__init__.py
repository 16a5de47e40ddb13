"""Trajectory planning from a static vocabulary plus diffusion-refined candidates."""
from .config import RunConfig, ScoreWeights
from .decision import CandidateSet, build_candidates, decide, evaluate, plot_scene
from .exceptions import ContractViolation, GenerationError, ParameterError, TrainingDivergence
from .planner import UnifiedCandidatePlanner
from .scenario import Scene, SubMetrics, epdms, evaluate_submetrics, generate_scene, pdms
from .trajectory import Trajectory
from .vocabulary import TrajectoryVocabulary, Vocabulary, build_vocabulary

__version__ = "0.1.0"

__all__ = [
    "CandidateSet", "ContractViolation", "GenerationError", "ParameterError", "RunConfig",
    "Scene", "ScoreWeights", "SubMetrics", "TrainingDivergence", "Trajectory",
    "TrajectoryVocabulary", "UnifiedCandidatePlanner", "Vocabulary", "build_candidates",
    "build_vocabulary", "decide", "epdms", "evaluate", "evaluate_submetrics", "generate_scene",
    "pdms", "plot_scene",
]

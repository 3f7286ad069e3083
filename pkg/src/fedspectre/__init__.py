"""Federated anomaly and attack detection on device behavior fingerprints."""

__version__ = "0.1.0"

from .data import Behavior, Dataset, Device, FingerprintRecord, load_csv, write_csv
from .estimators import AutoencoderDetector, MLPDetector
from .evaluation import EvaluationReport
from .federation import FederationConfig, ParticipantState, run_federation
from .scenarios import ScenarioConfig, SweepSpec, run_scenario, run_sweep
from .synth import SyntheticSpec, synthesize

__all__ = [
    "AutoencoderDetector",
    "Behavior",
    "Dataset",
    "Device",
    "EvaluationReport",
    "FederationConfig",
    "FingerprintRecord",
    "MLPDetector",
    "ParticipantState",
    "ScenarioConfig",
    "SweepSpec",
    "SyntheticSpec",
    "load_csv",
    "run_federation",
    "run_scenario",
    "run_sweep",
    "synthesize",
    "write_csv",
]

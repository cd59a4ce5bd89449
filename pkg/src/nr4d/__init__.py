"""5G NR based 4D point-cloud sensing: echo simulation, range-Doppler processing,
sparse angle estimation and multi-station fusion."""

from .config import ConfigError, ScenarioConfig, load_config
from .pipeline import PipelineError, RunArtifacts, emit_outputs, run_scenario

__all__ = [
    "ConfigError",
    "PipelineError",
    "RunArtifacts",
    "ScenarioConfig",
    "emit_outputs",
    "load_config",
    "run_scenario",
]

__version__ = "0.1.0"

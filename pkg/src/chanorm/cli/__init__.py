"""Command-line orchestration: configs, presets, the staged pipeline and ``chanorm`` itself."""
from .config import ExperimentConfig, Experiment, HeatmapRequest, from_dict, load_config
from .main import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, cmd_corpus, cmd_eval, cmd_reproduce, cmd_train, main
from .presets import PRESETS, preset_names
from .runner import RunManifest, RunResult, run_pipeline

__all__ = [
    "EXIT_CONFIG", "EXIT_IO", "EXIT_NUMERIC", "EXIT_OK", "Experiment", "ExperimentConfig", "HeatmapRequest",
    "PRESETS", "RunManifest", "RunResult", "cmd_corpus", "cmd_eval", "cmd_reproduce", "cmd_train", "from_dict",
    "load_config", "main", "preset_names", "run_pipeline",
]

"""Point-goal navigation with a diffusion policy trained online against a privileged planner."""

from .bench import Benchmark, SuiteReport, compare, evaluate, generate_benchmark, spl_term
from .config import Config, TrainConfig, parse_config, read_config
from .planner import ExpertPlanner, shortest_path
from .policy import DiffusionNavPolicy
from .sim import NavEnv, SimConfig, SensorConfig
from .trainer import OnlineTrainer, train
from .world import Point2, Pose, WorldMap

__all__ = ["Benchmark", "Config", "DiffusionNavPolicy", "ExpertPlanner", "NavEnv",
           "OnlineTrainer", "Point2", "Pose", "SensorConfig", "SimConfig", "SuiteReport",
           "TrainConfig", "WorldMap", "compare", "evaluate", "generate_benchmark",
           "parse_config", "read_config", "shortest_path", "spl_term", "train"]
__version__ = "0.1.0"

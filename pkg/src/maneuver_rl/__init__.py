"""Predictive maneuver planning on recorded highway traffic.

Trajectory ingestion and labelling, a memory-neuron trajectory predictor,
context-aware occupancy grids, a replay driving environment, imitation and
double-Q learners, and the evaluation harness.
"""
__version__ = "0.1.0"

from .maneuvers import Lateral, Longitudinal, Maneuver, MetaAction, ManeuverLabel  # noqa: F401
from .trajectory import FrameIndex, VehicleTrack, ingest_csv, label_distribution  # noqa: F401
from .grid import GridSpec, build_grid, occupancy_probability  # noqa: F401
from .dynamics import ControlTable, EgoState, action_to_control, step_unicycle  # noqa: F401
from .reward import RewardConfig, total_reward  # noqa: F401
from .env import DrivingEnv, RandomPolicy, RulePolicy  # noqa: F401

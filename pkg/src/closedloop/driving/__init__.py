"""Desk-scale driving domain."""

from .env import DrivingBeliefTracker, DrivingEnvironment, generate_scene, write_trajectory
from .lanes import InvalidLane, LaneGraph, MapFormatError, load_map, parse_map
from .model import ACTION_NAMES, DrivingConfig, DrivingModel, DrivingState, action_index

__all__ = [
    "ACTION_NAMES", "DrivingBeliefTracker", "DrivingConfig", "DrivingEnvironment", "DrivingModel",
    "DrivingState", "InvalidLane", "LaneGraph", "MapFormatError", "action_index",
    "generate_scene", "load_map", "parse_map", "write_trajectory",
]

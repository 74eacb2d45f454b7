"""Reactive whole-body control of a mobile manipulator by optimizing along its kinematic chain.

The solver's horizon runs over the links of the robot rather than over
time: one control step picks a velocity for every degree of freedom so that
each link lands inside a convex free region grown from nearby obstacle
points, while the end effector and base follow rough guidance paths.
"""

from .chain import ChainObservation, ChainSpec, ChainTrajectory, propagate_chain, stage_dynamics
from .containment import LinkGeometry, min_scaling, scaling_gradient, smoothed_scaling
from .controller import Controller, ControllerConfig, ReferencePaths, control_step, reference_lookahead
from .costs import CostWeights, Limits, ReferenceSet, build_constraints, default_weights
from .free_region import FreeRegion, ObstacleCloud, SkeletonSegment, extract_region, seed_box
from .geometry import LinkPose, Transform
from .robot import RobotModel, default_robot
from .solver import SolverConfig, SolveReport, SpatialProblem, solve
from .world import World, build_forest, perceive, run_episode, straight_base_task

__all__ = [
    "ChainObservation",
    "ChainSpec",
    "ChainTrajectory",
    "Controller",
    "ControllerConfig",
    "CostWeights",
    "FreeRegion",
    "Limits",
    "LinkGeometry",
    "LinkPose",
    "ObstacleCloud",
    "ReferencePaths",
    "ReferenceSet",
    "RobotModel",
    "SkeletonSegment",
    "SolveReport",
    "SolverConfig",
    "SpatialProblem",
    "Transform",
    "World",
    "build_constraints",
    "build_forest",
    "control_step",
    "default_robot",
    "default_weights",
    "extract_region",
    "min_scaling",
    "perceive",
    "propagate_chain",
    "reference_lookahead",
    "run_episode",
    "scaling_gradient",
    "seed_box",
    "smoothed_scaling",
    "solve",
    "stage_dynamics",
    "straight_base_task",
]

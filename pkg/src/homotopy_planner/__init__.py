"""Joint multi-vehicle speed planning over fixed paths.

Passing orders between conflicting vehicles are encoded as binary homotopy
decisions inside one mixed-integer quadratic program whose minimizer is a
socially optimal Nash equilibrium; the package bundles the geometry pipeline,
the MIQP assembler, an exact branch-and-bound solver, passing-order
enumeration with deadlock detection, and a receding-horizon simulator.
"""

from .geometry import (
    ConflictBounds,
    ConflictCase,
    ConflictInterval,
    Footprint,
    OrientedBox,
    ReferencePath,
    SideBounds,
    build_path,
    boxes_overlap,
    classify_case,
    collision_bounds,
    conflict_bounds_between,
    conflict_interval,
    footprint_box,
    load_waypoint_groups,
    pose_at,
)

__all__ = [
    "ConflictBounds",
    "ConflictCase",
    "ConflictInterval",
    "Footprint",
    "OrientedBox",
    "ReferencePath",
    "SideBounds",
    "build_path",
    "boxes_overlap",
    "classify_case",
    "collision_bounds",
    "conflict_bounds_between",
    "conflict_interval",
    "footprint_box",
    "load_waypoint_groups",
    "pose_at",
]

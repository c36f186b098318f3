"""Path geometry: arc-length paths, swept footprints, and conflict bounds.

Paths are chordal polylines resampled at (at most) a fixed arc-length step,
with every input waypoint kept as a sample so that chord length equals the
arc-length difference exactly on every segment.  Conflict zones between two
paths are found by scanning footprint occupancy over an (s, t) grid; the
projected extent of the overlap set, inflated by half a vehicle length per
side, yields the collision-area bounds used by the optimization model.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

DEFAULT_SCAN_STEP = 0.1
DEFAULT_POINT_THRESHOLD = 0.5
DEFAULT_END_TOLERANCE = 0.25

_ARC_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (bad waypoints, out-of-range queries, ...)."""


class ConflictCase(enum.Enum):
    GENERAL = "general"
    MERGE = "merge"
    POINT = "point"
    OPPOSITE = "opposite"


@dataclass(frozen=True)
class ReferencePath:
    """Planar path sampled by arc length: s is strictly increasing from 0."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    psi: np.ndarray

    @property
    def total_length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class Footprint:
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise GeometryError(
                f"footprint extents must be positive, got {self.length}x{self.width}"
            )


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    heading: float
    half_length: float
    half_width: float

    def corners(self) -> np.ndarray:
        """Corner points, counter-clockwise, shape (4, 2)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        ex = np.array([c, s]) * self.half_length
        ey = np.array([-s, c]) * self.half_width
        center = np.array([self.cx, self.cy])
        return np.array([center + ex + ey, center - ex + ey,
                         center - ex - ey, center + ex - ey])

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """H-representation A p <= b of the box interior."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        a = np.array([[s, -c], [-s, c], [c, s], [-c, -s]])
        offsets = np.array([self.half_width, self.half_width,
                            self.half_length, self.half_length])
        b = offsets + a @ np.array([self.cx, self.cy])
        return a, b


@dataclass(frozen=True)
class ConflictInterval:
    """Arc-length extent of mutual footprint overlap on each path.

    (s_enter, s_exit) is sorted for the first path.  (t_enter, t_exit) is
    stored in correspondence order: t_enter pairs with the first path's
    entry.  t_enter > t_exit marks opposite-direction traversal.
    """

    s_enter: float
    s_exit: float
    t_enter: float
    t_exit: float


@dataclass(frozen=True)
class SideBounds:
    """Collision-area bounds on one player's path; exits absent for merges."""

    entry_lo: float
    entry_hi: float
    exit_lo: Optional[float]
    exit_hi: Optional[float]

    def __post_init__(self):
        if self.entry_lo > self.entry_hi + 1e-12:
            raise GeometryError("entry_lo must not exceed entry_hi")
        if (self.exit_lo is None) != (self.exit_hi is None):
            raise GeometryError("exit bounds must be both present or both absent")
        if self.exit_lo is not None and self.exit_lo > self.exit_hi + 1e-12:
            raise GeometryError("exit_lo must not exceed exit_hi")


@dataclass(frozen=True)
class ConflictBounds:
    first: SideBounds
    second: SideBounds
    case: ConflictCase


def build_path(waypoints: Sequence[tuple[float, float]], resample_step: float) -> ReferencePath:
    """Resample a waypoint polyline at uniform arc-length spacing.

    Every input waypoint is kept as a sample (corners stay exact), and each
    segment is subdivided into steps of at most ``resample_step``.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise GeometryError("need at least 2 waypoints of (x, y)")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("waypoint coordinates must be finite")
    if resample_step <= 0:
        raise GeometryError("resample_step must be positive")
    deltas = np.diff(pts, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    if np.any(seg_len < _ARC_TOL):
        raise GeometryError("consecutive waypoints must not coincide")

    xs, ys, ss = [pts[0, 0]], [pts[0, 1]], [0.0]
    s_base = 0.0
    for i, length in enumerate(seg_len):
        n_sub = max(1, int(math.ceil(length / resample_step - 1e-12)))
        # full steps of resample_step; the remainder lands on the waypoint
        for j in range(1, n_sub + 1):
            frac = min(j * resample_step / length, 1.0)
            if j == n_sub:
                frac = 1.0
            xs.append(pts[i, 0] + frac * deltas[i, 0])
            ys.append(pts[i, 1] + frac * deltas[i, 1])
            ss.append(s_base + frac * length)
        s_base += length

    s = np.asarray(ss)
    x = np.asarray(xs)
    y = np.asarray(ys)
    seg_psi = np.arctan2(np.diff(y), np.diff(x))
    psi = np.append(seg_psi, seg_psi[-1])
    return ReferencePath(s=s, x=x, y=y, psi=psi)


def pose_at(path: ReferencePath, s: float) -> tuple[float, float, float]:
    """Interpolated (x, y, psi) at arc length s; psi from the bracketing segment."""
    if not (-_ARC_TOL <= s <= path.total_length + _ARC_TOL):
        raise GeometryError(f"s={s} outside [0, {path.total_length}]")
    s = min(max(s, 0.0), path.total_length)
    i = int(np.searchsorted(path.s, s, side="right") - 1)
    i = min(max(i, 0), len(path) - 2)
    ds = path.s[i + 1] - path.s[i]
    w = (s - path.s[i]) / ds if ds > 0 else 0.0
    x = path.x[i] + w * (path.x[i + 1] - path.x[i])
    y = path.y[i] + w * (path.y[i + 1] - path.y[i])
    return float(x), float(y), float(path.psi[i])


def footprint_box(path: ReferencePath, s: float, fp: Footprint) -> OrientedBox:
    x, y, psi = pose_at(path, s)
    return OrientedBox(cx=x, cy=y, heading=psi,
                       half_length=fp.length / 2.0, half_width=fp.width / 2.0)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Closed-box intersection via the separating axis test on edge normals."""
    ca, cb = a.corners(), b.corners()
    axes = []
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        axes.append((c, s))
        axes.append((-s, c))
    for ax, ay in axes:
        pa = ca[:, 0] * ax + ca[:, 1] * ay
        pb = cb[:, 0] * ax + cb[:, 1] * ay
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def _sample_grid(path: ReferencePath, step: float) -> np.ndarray:
    n = max(1, int(math.ceil(path.total_length / step)))
    return np.linspace(0.0, path.total_length, n + 1)


def _corner_stack(path: ReferencePath, svals: np.ndarray, fp: Footprint) -> tuple[np.ndarray, np.ndarray]:
    """Corner points (n, 4, 2) and headings for footprints at each s sample."""
    poses = np.array([pose_at(path, s) for s in svals])
    c = np.cos(poses[:, 2])
    s = np.sin(poses[:, 2])
    ex = np.stack([c, s], axis=1) * (fp.length / 2.0)
    ey = np.stack([-s, c], axis=1) * (fp.width / 2.0)
    ctr = poses[:, :2]
    corners = np.stack([ctr + ex + ey, ctr - ex + ey, ctr - ex - ey, ctr + ex - ey], axis=1)
    return corners, poses[:, 2]


def _overlap_mask(path_a, path_b, fp_a, fp_b, sa, sb) -> np.ndarray:
    """Boolean occupancy-overlap grid over sa x sb, SAT evaluated in bulk."""
    ca, ha = _corner_stack(path_a, sa, fp_a)
    cb, hb = _corner_stack(path_b, sb, fp_b)
    centers_a = ca.mean(axis=1)
    centers_b = cb.mean(axis=1)
    ra = 0.5 * math.hypot(fp_a.length, fp_a.width)
    rb = 0.5 * math.hypot(fp_b.length, fp_b.width)
    d2 = ((centers_a[:, None, :] - centers_b[None, :, :]) ** 2).sum(axis=2)
    near = d2 <= (ra + rb) ** 2
    mask = np.zeros(near.shape, dtype=bool)
    ia, ib = np.nonzero(near)
    if len(ia) == 0:
        return mask
    pair_ca = ca[ia]  # (m, 4, 2)
    pair_cb = cb[ib]
    ok = np.ones(len(ia), dtype=bool)
    for headings, flip in ((ha[ia], False), (hb[ib], True)):
        cos_h, sin_h = np.cos(headings), np.sin(headings)
        for ax, ay in ((cos_h, sin_h), (-sin_h, cos_h)):
            pa = pair_ca[:, :, 0] * ax[:, None] + pair_ca[:, :, 1] * ay[:, None]
            pb = pair_cb[:, :, 0] * ax[:, None] + pair_cb[:, :, 1] * ay[:, None]
            sep = (pa.max(axis=1) < pb.min(axis=1)) | (pb.max(axis=1) < pa.min(axis=1))
            ok &= ~sep
    mask[ia, ib] = ok
    return mask


def conflict_interval(path_a: ReferencePath, path_b: ReferencePath,
                      fp_a: Footprint, fp_b: Footprint,
                      scan_step: float = DEFAULT_SCAN_STEP) -> Optional[ConflictInterval]:
    """Scan the (s, t) grid for footprint overlap and project its extent.

    Returns None when the paths never conflict.  Raises on multiple disjoint
    overlap components (unsupported; a hull interval would silently change
    the constraint semantics).
    """
    if scan_step <= 0:
        raise GeometryError("scan_step must be positive")
    sa = _sample_grid(path_a, scan_step)
    sb = _sample_grid(path_b, scan_step)
    mask = _overlap_mask(path_a, path_b, fp_a, fp_b, sa, sb)
    if not mask.any():
        return None
    n_comp = ndimage.label(mask)[1]
    if n_comp > 1:
        raise GeometryError(
            f"conflict region between paths has {n_comp} disjoint components; "
            "split the paths or adjust footprints"
        )
    ia, ib = np.nonzero(mask)
    s_enter, s_exit = float(sa[ia.min()]), float(sa[ia.max()])
    t_lo, t_hi = float(sb[ib.min()]), float(sb[ib.max()])
    # correspondence direction: sign of covariance between s and t over the
    # overlap cells decides whether b traverses the region same-way or reversed
    cov = float(np.cov(sa[ia], sb[ib])[0, 1]) if len(ia) > 1 else 0.0
    if cov < -scan_step ** 2:
        t_enter, t_exit = t_hi, t_lo
    else:
        t_enter, t_exit = t_lo, t_hi
    return ConflictInterval(s_enter=s_enter, s_exit=s_exit, t_enter=t_enter, t_exit=t_exit)


def classify_case(ci: ConflictInterval, path_a: ReferencePath, path_b: ReferencePath,
                  point_threshold: float = DEFAULT_POINT_THRESHOLD,
                  end_tolerance: float = DEFAULT_END_TOLERANCE) -> ConflictCase:
    """Tag the conflict: merge (joint tail), point crossing, opposite, general."""
    t_lo, t_hi = sorted((ci.t_enter, ci.t_exit))
    same_direction = ci.t_exit >= ci.t_enter
    if (same_direction
            and ci.s_exit >= path_a.total_length - end_tolerance
            and t_hi >= path_b.total_length - end_tolerance):
        return ConflictCase.MERGE
    if (abs(ci.s_exit - ci.s_enter) <= point_threshold
            and abs(t_hi - t_lo) <= point_threshold):
        return ConflictCase.POINT
    if np.sign(ci.s_exit - ci.s_enter) != np.sign(ci.t_exit - ci.t_enter):
        return ConflictCase.OPPOSITE
    return ConflictCase.GENERAL


def _infer_case(ci: ConflictInterval) -> ConflictCase:
    if abs(ci.s_exit - ci.s_enter) < _ARC_TOL and abs(ci.t_exit - ci.t_enter) < _ARC_TOL:
        return ConflictCase.POINT
    if np.sign(ci.s_exit - ci.s_enter) != np.sign(ci.t_exit - ci.t_enter):
        return ConflictCase.OPPOSITE
    return ConflictCase.GENERAL


def collision_bounds(ci: ConflictInterval, len_a: float, len_b: float,
                     case: Optional[ConflictCase] = None) -> ConflictBounds:
    """Inflate the conflict interval by half a vehicle length per side.

    With case=None the tag is inferred from the interval alone (point or
    opposite); merge detection needs the paths, see classify_case.
    """
    if case is None:
        case = _infer_case(ci)

    def side(enter: float, exit_: float, length: float) -> SideBounds:
        # hi derived from lo so the band width equals the length exactly
        entry_lo = enter - length / 2.0
        exit_lo = exit_ - length / 2.0
        if case is ConflictCase.MERGE:
            return SideBounds(entry_lo, entry_lo + length, None, None)
        return SideBounds(entry_lo, entry_lo + length, exit_lo, exit_lo + length)

    if case is ConflictCase.POINT:
        first = side(ci.s_enter, ci.s_enter, len_a)
        second = side(min(ci.t_enter, ci.t_exit), min(ci.t_enter, ci.t_exit), len_b)
    else:
        first = side(ci.s_enter, ci.s_exit, len_a)
        second = side(ci.t_enter, ci.t_exit, len_b)
    return ConflictBounds(first=first, second=second, case=case)


def conflict_bounds_between(path_a: ReferencePath, path_b: ReferencePath,
                            fp_a: Footprint, fp_b: Footprint,
                            scan_step: float = DEFAULT_SCAN_STEP,
                            point_threshold: float = DEFAULT_POINT_THRESHOLD,
                            end_tolerance: float = DEFAULT_END_TOLERANCE,
                            ) -> Optional[ConflictBounds]:
    """Scan, classify and convert in one call; None when paths never conflict."""
    ci = conflict_interval(path_a, path_b, fp_a, fp_b, scan_step)
    if ci is None:
        return None
    case = classify_case(ci, path_a, path_b, point_threshold, end_tolerance)
    return collision_bounds(ci, fp_a.length, fp_b.length, case)


def load_waypoint_groups(csv_path) -> dict[str, list[tuple[float, float]]]:
    """Read a `player,x,y` CSV into per-player waypoint lists (file order)."""
    groups: dict[str, list[tuple[float, float]]] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["player", "x", "y"]:
            raise GeometryError(f"{csv_path}: expected header 'player,x,y'")
        for row in reader:
            try:
                xy = (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError) as exc:
                raise GeometryError(f"{csv_path}: bad coordinate in row {row}") from exc
            groups.setdefault(row["player"].strip(), []).append(xy)
    if not groups:
        raise GeometryError(f"{csv_path}: no waypoints")
    return groups

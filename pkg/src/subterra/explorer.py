"""Exploration goal selection.

Frontier goals chase the nearest cluster by planned path cost (not
straight-line distance). Coverage goals send the cameras at observed but
not-yet-photographed ground, scored by how many uncovered cells a
candidate can actually see. Aerial candidates are ranked by a directional
cost that biases travel along a preferred axis. Peer trails veto goals in
already-visited space, and a watchdog classifies stuck and mislocalized
robots from pose history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InsufficientHistoryError
from .navmap import CostField, NavMap, elevation_layer

EYE_HEIGHT = 0.5          # camera height above ground when checking sight lines
STUCK_COMMAND_MIN = 0.1   # m/s commanded, sustained, before stuck can trigger
STUCK_DISPLACEMENT = 0.3  # m actual motion below which sustained commands mean stuck
MISLOC_FACTOR = 1.5       # displacement beyond max_speed*window by this factor


@dataclass(frozen=True)
class ExplorationGoal:
    position: np.ndarray
    kind: str                      # frontier | coverage | uav_directional | home
    score: float
    cell: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))


@dataclass(frozen=True)
class CameraModel:
    half_angle: float = math.pi    # omnidirectional rig by default
    range: float = 5.0


class CoverageState:
    """Which ground cells the cameras have photographed."""

    def __init__(self, shape2d, camera: CameraModel = CameraModel()):
        self.seen = np.zeros(tuple(shape2d), dtype=bool)
        self.camera = camera

    def covered_fraction(self, known_mask) -> float:
        n = int(known_mask.sum())
        if n == 0:
            return 1.0
        return float((self.seen & known_mask).sum()) / n


def _disc_offsets(radius_cells):
    offs = []
    r = int(math.floor(radius_cells))
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            if di * di + dj * dj <= radius_cells * radius_cells:
                offs.append((di, dj))
    return offs


def _los_cells(m: NavMap, elev, a_cell, b_cell):
    """Sight line between two ground cells at eye height over the map."""
    za = elev[a_cell]
    zb = elev[b_cell]
    if not (np.isfinite(za) and np.isfinite(zb)):
        return False
    res = m.resolution
    ax = a_cell[0] + 0.5
    ay = a_cell[1] + 0.5
    az = (za + EYE_HEIGHT - m.origin[2]) / res
    bx = b_cell[0] + 0.5
    by = b_cell[1] + 0.5
    bz = (zb + EYE_HEIGHT - m.origin[2]) / res
    return kernels.los_state_clear(m.state, ax, ay, az, bx, by, bz)


def mark_covered(cs: CoverageState, m: NavMap, pose) -> int:
    """Record every known ground cell the camera sees from this pose.
    Respects the field-of-view wedge around the robot heading and sight
    lines over the map. Returns how many new cells were covered."""
    elev, known = elevation_layer(m)
    cam = cs.camera
    here = m.cell_of(np.asarray(pose.position)[:2])
    nx, ny = cs.seen.shape
    if not (0 <= here[0] < nx and 0 <= here[1] < ny):
        return 0
    added = 0
    for di, dj in _disc_offsets(cam.range / m.resolution):
        c = (here[0] + di, here[1] + dj)
        if not (0 <= c[0] < nx and 0 <= c[1] < ny):
            continue
        if cs.seen[c] or not known[c]:
            continue
        if cam.half_angle < math.pi and (di or dj):
            ang = abs(_wrap(math.atan2(dj, di) - pose.yaw))
            if ang > cam.half_angle:
                continue
        if (di, dj) == (0, 0) or _los_cells(m, elev, here, c):
            cs.seen[c] = True
            added += 1
    return added


def _wrap(a):
    while a > math.pi:
        a -= 2 * math.pi
    while a <= -math.pi:
        a += 2 * math.pi
    return a


# ---------------------------------------------------------------------------
# frontier strategy


def select_frontier_goal(m: NavMap, clusters, pose, field: CostField, costs=None):
    """Pick the reachable cluster with the cheapest planned path.

    Each cluster is represented by its member cell nearest the centroid;
    reaching cost comes from the flood-fill cost grid (computed here if
    not supplied). Ties break on cluster size descending, then smallest
    member cell. None means exploration is complete or nothing reachable.
    """
    if not clusters:
        return None
    if costs is None:
        from .planner import cost_to_go
        costs, _ = cost_to_go(field, _field_coords(m, pose.position))
    elev, _ = elevation_layer(m)
    best = None
    for cluster in clusters:
        cen = cluster.centroid[:2]
        rep = min(cluster.cells,
                  key=lambda c: (math.dist(tuple(m.cell_center(c)), tuple(cen)), c))
        cost = float(costs[rep])
        if not np.isfinite(cost):
            continue
        key = (cost, -cluster.size, cluster.cells[0])
        if best is None or key < best[0]:
            z = float(elev[rep]) if np.isfinite(elev[rep]) else 0.0
            pos = np.array([*m.cell_center(rep), z])
            best = (key, ExplorationGoal(position=pos, kind="frontier",
                                         score=cost, cell=rep))
    return None if best is None else best[1]


def _field_coords(m: NavMap, position):
    """Planner grids sit at the map origin; shift world coords onto them."""
    return (np.asarray(position, dtype=np.float64)[:2] - m.origin[:2])


# ---------------------------------------------------------------------------
# coverage strategy


def entropy_score(m: NavMap, cs: CoverageState, cell):
    """(normalized score, raw count) of known-but-uncovered cells visible
    from this cell. Scoring treats the camera as a full disc: the robot is
    free to rotate in place, so the wedge only matters while driving."""
    elev, known = elevation_layer(m)
    target = known & ~cs.seen
    offs = _disc_offsets(cs.camera.range / m.resolution)
    nx, ny = known.shape
    count = 0
    for di, dj in offs:
        c = (cell[0] + di, cell[1] + dj)
        if not (0 <= c[0] < nx and 0 <= c[1] < ny) or not target[c]:
            continue
        if (di, dj) == (0, 0) or _los_cells(m, elev, cell, c):
            count += 1
    return count / len(offs), count


def coverage_waypoints(cs: CoverageState, m: NavMap, mask, lattice: float = 1.0):
    """Exhaustively scored candidate goals on a coarse lattice of
    traversable cells. Candidates that can see nothing are dropped."""
    step = max(1, int(round(lattice / m.resolution)))
    elev, _ = elevation_layer(m)
    out = []
    for i in range(0, mask.shape[0], step):
        for j in range(0, mask.shape[1], step):
            if not mask[i, j]:
                continue
            score, count = entropy_score(m, cs, (i, j))
            if count == 0:
                continue
            z = float(elev[i, j]) if np.isfinite(elev[i, j]) else 0.0
            pos = np.array([*m.cell_center((i, j)), z])
            out.append(ExplorationGoal(position=pos, kind="coverage",
                                       score=score, cell=(i, j)))
    return out


def select_coverage_goal(cs: CoverageState, m: NavMap, field: CostField, costs,
                         lattice: float = 1.0, exclude=frozenset()):
    """Best candidate by score / path-cost, found exactly without scoring
    every candidate: an upper bound (uncovered cells in the disc ignoring
    sight lines) orders candidates, and scoring stops once no remaining
    bound can beat the best exact ratio. Cells in `exclude` are skipped."""
    _, known = elevation_layer(m)
    target = (known & ~cs.seen).astype(np.int32)
    r = int(cs.camera.range / m.resolution)
    yy, xx = np.ogrid[-r:r + 1, -r:r + 1]
    disc = (xx * xx + yy * yy) <= (cs.camera.range / m.resolution) ** 2
    bound = ndimage.convolve(target, disc.astype(np.int32), mode="constant", cval=0)
    capacity = int(disc.sum())

    step = max(1, int(round(lattice / m.resolution)))
    mask = field.source_mask
    cand = []
    for i in range(0, mask.shape[0], step):
        for j in range(0, mask.shape[1], step):
            if not mask[i, j] or bound[i, j] == 0 or (i, j) in exclude:
                continue
            cost = float(costs[i, j])
            if not np.isfinite(cost):
                continue
            b = (bound[i, j] / capacity) / max(cost, field.resolution)
            cand.append((-b, (i, j), cost))
    cand.sort()

    elev, _ = elevation_layer(m)
    best = None
    for neg_b, cell, cost in cand:
        if best is not None and -neg_b <= best[0]:
            break
        score, count = entropy_score(m, cs, cell)
        ratio = score / max(cost, field.resolution)
        if count and (best is None or ratio > best[0] + 1e-15):
            best = (ratio, cell, score)
    if best is None:
        return None
    ratio, cell, score = best
    z = float(elev[cell]) if np.isfinite(elev[cell]) else 0.0
    pos = np.array([*m.cell_center(cell), z])
    return ExplorationGoal(position=pos, kind="coverage", score=ratio, cell=cell)


# ---------------------------------------------------------------------------
# aerial directional cost


def uav_waypoint_cost(candidate, pose_position, preferred_direction,
                      weights=(1.0, 1.0, 2.0)) -> float:
    """w_dir * angle off the preferred axis + w_h * horizontal distance
    + w_v * vertical distance."""
    w_dir, w_h, w_v = weights
    if w_dir < 0 or w_h < 0 or w_v < 0:
        raise ValueError("weights must be non-negative")
    v = np.asarray(candidate, dtype=np.float64) - np.asarray(pose_position, dtype=np.float64)
    d = np.asarray(preferred_direction, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        ang = 0.0
    else:
        cosang = float(np.dot(v, d) / (n * np.linalg.norm(d)))
        ang = math.acos(max(-1.0, min(1.0, cosang)))
    dh = float(np.linalg.norm(v[:2]))
    dv = abs(float(v[2]))
    return w_dir * ang + w_h * dh + w_v * dv


def select_uav_goal(candidates, pose_position, preferred_direction, weights=(1.0, 1.0, 2.0)):
    """Lowest directional cost; ties break on candidate ordering."""
    best = None
    for i, c in enumerate(candidates):
        cost = uav_waypoint_cost(c, pose_position, preferred_direction, weights)
        if best is None or cost < best[0] - 1e-15:
            best = (cost, i)
    if best is None:
        return None
    cost, i = best
    return ExplorationGoal(position=np.asarray(candidates[i], dtype=np.float64),
                           kind="uav_directional", score=cost)


# ---------------------------------------------------------------------------
# peer filtering


def filter_visited_by_peers(goals, peer_trajectories, radius: float):
    """Drop goals within radius of any point on a peer's trail. When that
    would drop everything, the original list comes back with the fallback
    flag set, so a robot is never left goalless by its teammates."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    trails = [np.asarray(t, dtype=np.float64).reshape(-1, 3)
              for t in peer_trajectories if len(t)]
    if not trails:
        return list(goals), False
    kept = []
    for g in goals:
        p = g.position
        near = any(np.min(np.linalg.norm(t - p[None, :], axis=1)) <= radius
                   for t in trails)
        if not near:
            kept.append(g)
    if goals and not kept:
        return list(goals), True
    return kept, False


# ---------------------------------------------------------------------------
# watchdog


def detect_stuck(history, window: float, commanded, max_speed: float) -> str:
    """history: (t, position) samples; commanded: (t, linear velocity).
    Returns 'stuck', 'mislocalized', or 'ok'."""
    if len(history) < 2:
        raise InsufficientHistoryError("need at least two pose samples")
    t_end = history[-1][0]
    t0 = t_end - window
    if history[0][0] > t0 + 1e-9:
        raise InsufficientHistoryError(
            f"history starts at {history[0][0]:.2f}, window needs {t0:.2f}")
    span = [(t, np.asarray(p, dtype=np.float64)) for t, p in history if t >= t0 - 1e-9]
    disp = float(np.linalg.norm(span[-1][1] - span[0][1]))
    if disp > MISLOC_FACTOR * max_speed * window:
        return "mislocalized"
    cmd_span = [v for t, v in commanded if t >= t0 - 1e-9]
    if cmd_span and min(cmd_span) > STUCK_COMMAND_MIN and disp < STUCK_DISPLACEMENT:
        return "stuck"
    return "ok"

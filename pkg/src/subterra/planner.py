"""Path search and following.

Ground plans run A* on the 2D traversability cost field with a clearance
penalty folded into edge costs. Aerial tunnel plans bias node expansion
away from walls through the heuristic; aerial urban plans search the 3D
lattice coarse-to-fine with a Manhattan heuristic. A sliding-window filter
smooths paths, a two-law controller follows them, and a sparse graph over
visited poses answers long homing queries cheaply.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

from .errors import StartUntraversableError
from .geom import wrap_angle
from .navmap import CostField, NavMap
from .kernels import FREE

K_ANG = 1.5    # rad/s per rad of heading error
K_OBS = 0.8    # m/s per meter of clearance
K_WP = 1.0     # m/s per meter to the active waypoint
CAPTURE_RADIUS = 0.5
SAFETY_RADIUS = 0.3
UGV_W_DEFAULT = 0.3
UAV_CLEAR_CAP = 2.0   # clearance beyond this earns no reward


@dataclass(frozen=True)
class Path:
    waypoints: np.ndarray       # (N, 3) meters
    cost: float
    min_clearance: float

    def __post_init__(self):
        object.__setattr__(self, "waypoints",
                           np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 3))

    @property
    def length(self) -> float:
        d = np.diff(self.waypoints, axis=0)
        return float(np.sqrt((d * d).sum(axis=1)).sum())


@dataclass(frozen=True)
class PlatformLimits:
    v_max: float
    w_max: float = 2.0
    safety_radius: float = SAFETY_RADIUS


@dataclass(frozen=True)
class FollowerState:
    path: Path
    index: int = 0
    commanded: tuple = (0.0, 0.0)
    done: bool = False


_DIAG = math.sqrt(2.0)
_NEIGH8 = [(-1, -1, _DIAG), (-1, 0, 1.0), (-1, 1, _DIAG), (0, -1, 1.0),
           (0, 1, 1.0), (1, -1, _DIAG), (1, 0, 1.0), (1, 1, _DIAG)]


# ---------------------------------------------------------------------------
# ground planner


def _cell_of(field: CostField, p):
    g = np.asarray(p, dtype=np.float64)[:2] / field.resolution
    return int(math.floor(g[0])), int(math.floor(g[1]))


def _edge_cost(field: CostField, w: float, eps: float, nb, step_len: float) -> float:
    return step_len * (1.0 + w / max(field.dist[nb], eps))


def plan_ugv(field: CostField, start, goal, w: float = UGV_W_DEFAULT,
             elevation=None, hover: float = 0.0):
    """A* over traversable cells. Edge cost is length times
    (1 + w / max(clearance, eps)), so narrow passages cost more but are
    never forbidden outright. Returns None when the goal is unreachable.

    Waypoint heights come from the optional elevation layer plus hover,
    else the start height is carried flat.
    """
    mask = field.source_mask
    res = field.resolution
    eps = res / 2.0
    s = _cell_of(field, start)
    g = _cell_of(field, goal)
    nx, ny = mask.shape
    if not (0 <= s[0] < nx and 0 <= s[1] < ny) or not mask[s]:
        raise StartUntraversableError(f"start cell {s} is not traversable")
    if not (0 <= g[0] < nx and 0 <= g[1] < ny) or not mask[g]:
        return None

    came, gcost = _astar_grid2(mask, s, g,
                               lambda nb, step: _edge_cost(field, w, eps, nb, step) * res,
                               lambda c: math.dist(c, g) * res)
    if g not in gcost:
        return None
    cells = _walk_back(came, s, g)
    return _path_from_cells(field, cells, gcost[g], np.asarray(start, dtype=np.float64),
                            elevation, hover)


def _astar_grid2(mask, s, g, edge_cost, heuristic):
    """Deterministic 8-connected A*. Ties break on smaller g, then cell.
    Diagonal moves need both orthogonal neighbors passable, or the path
    would thread through wall corners a real chassis cannot clear."""
    nx, ny = mask.shape
    gcost = {s: 0.0}
    came = {}
    open_heap = [(heuristic(s), 0.0, s)]
    closed = set()
    while open_heap:
        f, gc, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == g:
            break
        ci, cj = cur
        for di, dj, step in _NEIGH8:
            ni, nj = ci + di, cj + dj
            if not (0 <= ni < nx and 0 <= nj < ny) or not mask[ni, nj]:
                continue
            if di and dj and not (mask[ci, nj] and mask[ni, cj]):
                continue
            nb = (ni, nj)
            cand = gc + edge_cost(nb, step)
            if cand < gcost.get(nb, math.inf) - 1e-12:
                gcost[nb] = cand
                came[nb] = cur
                heapq.heappush(open_heap, (cand + heuristic(nb), cand, nb))
    if g in closed:
        return came, gcost
    return came, {k: v for k, v in gcost.items() if k in closed}


def _walk_back(came, s, g):
    cells = [g]
    while cells[-1] != s:
        cells.append(came[cells[-1]])
    cells.reverse()
    return cells


def _path_from_cells(field, cells, cost, start_pos, elevation, hover):
    res = field.resolution
    pts = np.empty((len(cells), 3))
    for i, c in enumerate(cells):
        pts[i, 0] = (c[0] + 0.5) * res
        pts[i, 1] = (c[1] + 0.5) * res
        if elevation is not None and np.isfinite(elevation[c]):
            pts[i, 2] = elevation[c] + hover
        else:
            pts[i, 2] = start_pos[2]
    clear = min(float(field.dist[c]) for c in cells)
    return Path(waypoints=pts, cost=float(cost), min_clearance=clear)


def cost_to_go(field: CostField, start, w: float = UGV_W_DEFAULT):
    """One Dijkstra flood from start over the whole traversable grid.

    Returns (costs, predecessors) flat arrays indexed by cell raveled
    index; costs share plan_ugv's edge model, so goal selection and path
    extraction stay consistent with single-goal planning.
    """
    mask = field.source_mask
    nx, ny = mask.shape
    res = field.resolution
    eps = res / 2.0
    s = _cell_of(field, start)
    if not (0 <= s[0] < nx and 0 <= s[1] < ny) or not mask[s]:
        raise StartUntraversableError(f"start cell {s} is not traversable")

    idx = np.flatnonzero(mask.reshape(-1))
    pos = np.full(nx * ny, -1, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    rows, cols, vals = [], [], []
    ii, jj = np.divmod(idx, ny)
    penal = 1.0 + w / np.maximum(field.dist.reshape(-1)[idx], eps)
    for di, dj, step in _NEIGH8:
        ni, nj = ii + di, jj + dj
        ok = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
        flat_n = ni[ok] * ny + nj[ok]
        ok2 = pos[flat_n] >= 0
        if di and dj:
            # same corner rule as the A*: diagonals need both orthogonals
            ok2 &= mask[ii[ok], nj[ok]] & mask[ni[ok], jj[ok]]
        src = np.arange(len(idx))[ok][ok2]
        dst = pos[flat_n[ok2]]
        rows.append(src)
        cols.append(dst)
        vals.append(step * res * penal[dst])
    graph = csr_matrix((np.concatenate(vals),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(len(idx), len(idx)))
    dist, pred = _sp_dijkstra(graph, indices=pos[s[0] * ny + s[1]],
                              return_predecessors=True)
    costs = np.full(nx * ny, np.inf)
    costs[idx] = dist
    predecessors = np.full(nx * ny, -1, dtype=np.int64)
    reached = pred >= 0
    predecessors[idx[reached]] = idx[pred[reached]]
    return costs.reshape(nx, ny), predecessors


def extract_flood_path(field: CostField, costs, predecessors, start, goal_cell,
                       elevation=None, hover: float = 0.0):
    """Path to goal_cell using the predecessor tree from cost_to_go."""
    nx, ny = field.source_mask.shape
    gi, gj = goal_cell
    if not np.isfinite(costs[gi, gj]):
        return None
    cells = [(gi, gj)]
    flat = gi * ny + gj
    pred_flat = predecessors.reshape(-1)
    s = _cell_of(field, start)
    while cells[-1] != s:
        flat = pred_flat[flat]
        if flat < 0:
            return None
        cells.append((int(flat // ny), int(flat % ny)))
    cells.reverse()
    return _path_from_cells(field, cells, float(costs[gi, gj]),
                            np.asarray(start, dtype=np.float64), elevation, hover)


# ---------------------------------------------------------------------------
# aerial tunnel planner


def plan_uav_tunnel(field: CostField, start, goal, p: float = 0.0,
                    clear_cap: float = UAV_CLEAR_CAP, snap_goal: bool = False,
                    altitude: float = None):
    """A* whose heuristic adds p times the proximity penalty
    max(0, clear_cap - clearance), steering expansion toward open space.
    p=0 is plain Euclidean A*. With snap_goal, an out-of-grid or blocked
    goal is replaced by the nearest traversable cell (how deployment sets
    a far goal hundreds of meters down the axis of a mine)."""
    if p < 0:
        raise ValueError("p must be non-negative")
    mask = field.source_mask
    res = field.resolution
    nx, ny = mask.shape
    s = _cell_of(field, start)
    if not (0 <= s[0] < nx and 0 <= s[1] < ny) or not mask[s]:
        raise StartUntraversableError(f"start cell {s} is not traversable")
    g = _cell_of(field, goal)
    if not (0 <= g[0] < nx and 0 <= g[1] < ny) or not mask[g]:
        if not snap_goal:
            return None
        free_cells = np.argwhere(mask)
        d2 = ((free_cells - np.array(g)) ** 2).sum(axis=1)
        g = tuple(free_cells[int(d2.argmin())])

    def h(c):
        prox = max(0.0, clear_cap - float(field.dist[c]))
        return math.dist(c, g) * res + p * prox

    came, gcost = _astar_grid2(mask, s, g, lambda nb, step: step * res, h)
    if g not in gcost:
        return None
    cells = _walk_back(came, s, g)
    z = np.asarray(start, dtype=np.float64)[2] if altitude is None else altitude
    pts = np.array([[(c[0] + 0.5) * res, (c[1] + 0.5) * res, z] for c in cells])
    clear = min(float(field.dist[c]) for c in cells)
    return Path(waypoints=pts, cost=float(gcost[g]), min_clearance=clear)


# ---------------------------------------------------------------------------
# aerial urban planner


_NEIGH6 = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


def _astar_grid3(free, s, g, res, allowed=None):
    """6-connected 3D A* with Manhattan heuristic, deterministic ties."""
    nx, ny, nz = free.shape

    def h(c):
        return (abs(c[0] - g[0]) + abs(c[1] - g[1]) + abs(c[2] - g[2])) * res

    gcost = {s: 0.0}
    came = {}
    open_heap = [(h(s), 0.0, s)]
    closed = set()
    while open_heap:
        f, gc, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == g:
            cells = _walk_back(came, s, g)
            return cells, gc
        for di, dj, dk in _NEIGH6:
            nb = (cur[0] + di, cur[1] + dj, cur[2] + dk)
            if not (0 <= nb[0] < nx and 0 <= nb[1] < ny and 0 <= nb[2] < nz):
                continue
            if not free[nb] or (allowed is not None and not allowed[nb]):
                continue
            cand = gc + res
            if cand < gcost.get(nb, math.inf) - 1e-12:
                gcost[nb] = cand
                came[nb] = cur
                heapq.heappush(open_heap, (cand + h(nb), cand, nb))
    return None, math.inf


def _local_clearance(free, cells, res, cap=1.0):
    """Min distance from path cells to any non-free voxel, exact up to cap."""
    r = int(math.ceil(cap / res))
    offs = []
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            for dk in range(-r, r + 1):
                d = math.sqrt(di * di + dj * dj + dk * dk)
                if 0 < d <= r:
                    offs.append((d, di, dj, dk))
    offs.sort()
    nx, ny, nz = free.shape
    best = cap / res
    for c in cells:
        for d, di, dj, dk in offs:
            if d >= best:
                break
            a, b, e = c[0] + di, c[1] + dj, c[2] + dk
            if not (0 <= a < nx and 0 <= b < ny and 0 <= e < nz) or not free[a, b, e]:
                best = d
                break
    return best * res


def plan_uav_urban(m: NavMap, start, goal, coarse: int = 4):
    """3D lattice A*, Manhattan heuristic, 6-neighborhood. A coarse search
    (cells free only when fully free at fine scale) finds a corridor first;
    the fine search is then confined to that corridor dilated by one coarse
    cell. Either failure falls back to an unconstrained fine search."""
    free = m.state == FREE
    res = m.resolution
    s = tuple(np.floor(m.to_grid(start)).astype(int))
    g = tuple(np.floor(m.to_grid(goal)).astype(int))
    nx, ny, nz = free.shape
    if not all(0 <= s[d] < free.shape[d] for d in range(3)) or not free[s]:
        raise StartUntraversableError(f"start voxel {s} is not known free")
    if not all(0 <= g[d] < free.shape[d] for d in range(3)) or not free[g]:
        return None

    cells = None
    if coarse > 1:
        cs = _coarsen_all_free(free, coarse)
        sc = tuple(c // coarse for c in s)
        gc_ = tuple(c // coarse for c in g)
        if cs[sc] and cs[gc_]:
            coarse_cells, _ = _astar_grid3(cs, sc, gc_, res * coarse)
            if coarse_cells is not None:
                allowed = _corridor_mask(free.shape, coarse_cells, coarse)
                cells, cost = _astar_grid3(free, s, g, res, allowed=allowed)
    if cells is None:
        cells, cost = _astar_grid3(free, s, g, res)
    if cells is None:
        return None
    pts = np.array([m.origin + (np.array(c) + 0.5) * res for c in cells])
    clear = _local_clearance(free, cells, res)
    return Path(waypoints=pts, cost=float(cost), min_clearance=clear)


def _coarsen_all_free(free, k):
    nx, ny, nz = free.shape
    cx, cy, cz = -(-nx // k), -(-ny // k), -(-nz // k)
    padded = np.zeros((cx * k, cy * k, cz * k), dtype=bool)
    padded[:nx, :ny, :nz] = free
    return padded.reshape(cx, k, cy, k, cz, k).all(axis=(1, 3, 5))


def _corridor_mask(shape, coarse_cells, k):
    allowed = np.zeros(shape, dtype=bool)
    nx, ny, nz = shape
    for (ci, cj, ck) in coarse_cells:
        x0 = max(0, (ci - 1) * k)
        y0 = max(0, (cj - 1) * k)
        z0 = max(0, (ck - 1) * k)
        allowed[x0:min(nx, (ci + 2) * k), y0:min(ny, (cj + 2) * k), z0:min(nz, (ck + 2) * k)] = True
    return allowed


# ---------------------------------------------------------------------------
# smoothing


def smooth_path(path: Path, window: int, field: CostField = None,
                safety_radius: float = SAFETY_RADIUS) -> Path:
    """Sliding moving-average over waypoints, endpoints pinned. The input
    comes back unchanged when any smoothed point would drop below the
    safety clearance (checked against field when given) or when smoothing
    somehow lengthens the path beyond 1%."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    wp = path.waypoints
    n = len(wp)
    if window == 1 or n <= 2:
        return path
    hw = window // 2
    out = wp.copy()
    for i in range(1, n - 1):
        lo = max(0, i - hw)
        hi = min(n, i + hw + 1)
        out[i] = wp[lo:hi].mean(axis=0)

    d = np.diff(out, axis=0)
    new_len = float(np.sqrt((d * d).sum(axis=1)).sum())
    if new_len > path.length * 1.01:
        return path
    clear = path.min_clearance
    if field is not None:
        nx, ny = field.dist.shape
        clear = math.inf
        for pt in out:
            c = _cell_of(field, pt)
            if not (0 <= c[0] < nx and 0 <= c[1] < ny):
                return path
            clear = min(clear, float(field.dist[c]))
        if clear < safety_radius:
            return path
    return Path(waypoints=out, cost=new_len, min_clearance=float(clear))


# ---------------------------------------------------------------------------
# following


def follow_step(fs: FollowerState, pose_estimate, field: CostField, dt: float,
                limits: PlatformLimits, capture_radius: float = CAPTURE_RADIUS,
                k_ang: float = K_ANG, k_obs: float = K_OBS, k_wp: float = K_WP
                ) -> FollowerState:
    """One control step of the two-law follower.

    Law 1: angular velocity proportional to the heading error toward the
    active waypoint. Law 2: forward velocity limited by platform maximum,
    obstacle clearance, and remaining distance; zero while the heading
    error exceeds 90 degrees or clearance falls under the safety radius.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    wp = fs.path.waypoints
    idx = fs.index
    pos = np.asarray(pose_estimate.position, dtype=np.float64)

    # advance through any waypoints already captured
    while idx < len(wp) and math.dist(pos[:2], wp[idx][:2]) < capture_radius:
        idx += 1
    if idx >= len(wp):
        return replace(fs, index=len(wp) - 1, commanded=(0.0, 0.0), done=True)

    to_wp = wp[idx][:2] - pos[:2]
    dist_wp = float(np.linalg.norm(to_wp))
    err = wrap_angle(math.atan2(to_wp[1], to_wp[0]) - pose_estimate.yaw)
    ang = max(-limits.w_max, min(limits.w_max, k_ang * err))

    nx, ny = field.dist.shape
    c = _cell_of(field, pos)
    clearance = float(field.dist[c]) if (0 <= c[0] < nx and 0 <= c[1] < ny) else 0.0
    if abs(err) > math.pi / 2 or clearance < limits.safety_radius:
        lin = 0.0
    else:
        lin = min(limits.v_max, k_obs * clearance, k_wp * dist_wp)
    return replace(fs, index=idx, commanded=(lin, ang), done=False)


# ---------------------------------------------------------------------------
# homing graph


@dataclass(frozen=True)
class HomingGraph:
    nodes: np.ndarray           # (N, 3) meters
    edges: dict                 # node index -> list of (node index, length)

    def degree(self, i):
        return len(self.edges.get(i, []))


def _los_traversable(mask, res, a, b):
    """Straight segment between xy points stays on traversable cells."""
    a = np.asarray(a, dtype=np.float64)[:2]
    b = np.asarray(b, dtype=np.float64)[:2]
    n = max(2, int(math.ceil(math.dist(a, b) / (res * 0.5))) + 1)
    nx, ny = mask.shape
    for t in np.linspace(0.0, 1.0, n):
        p = a + (b - a) * t
        i, j = int(math.floor(p[0] / res)), int(math.floor(p[1] / res))
        if not (0 <= i < nx and 0 <= j < ny) or not mask[i, j]:
            return False
    return True


def build_homing_graph(m: NavMap, visited, mask=None, k_d: float = None,
                       platform: str = None, spacing: float = 2.0,
                       connect_radius: float = 6.0) -> HomingGraph:
    """Sparse return-trip graph over the robot's own trail.

    Nodes: visited poses decimated to the given spacing, plus poses where
    the trail turns sharply (junction corners). Edges connect node pairs
    within connect_radius whose straight segment stays traversable.
    """
    if len(visited) == 0:
        raise ValueError("no visited poses")
    from .navmap import traversability_mask
    if mask is None:
        mask, _ = traversability_mask(m, k_d=k_d, platform=platform)
    pts = np.asarray([np.asarray(p, dtype=np.float64)[:3] for p in visited])

    kept = [0]
    for i in range(1, len(pts)):
        d_near = min(math.dist(pts[i][:2], pts[k][:2]) for k in kept)
        take = d_near >= spacing
        if not take and i > 0 and i + 1 < len(pts):
            v0 = pts[i][:2] - pts[i - 1][:2]
            v1 = pts[i + 1][:2] - pts[i][:2]
            n0, n1 = np.linalg.norm(v0), np.linalg.norm(v1)
            if n0 > 1e-6 and n1 > 1e-6:
                cosang = float(np.dot(v0, v1) / (n0 * n1))
                # sharp turns become nodes so junction corners are kept
                take = cosang < math.cos(math.radians(45.0)) and d_near >= 0.5
        if take:
            kept.append(i)
    nodes = pts[kept]

    edges = {i: [] for i in range(len(nodes))}
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            d = math.dist(nodes[i][:2], nodes[j][:2])
            if d <= connect_radius and _los_traversable(mask, m.resolution, nodes[i], nodes[j]):
                edges[i].append((j, d))
                edges[j].append((i, d))
    return HomingGraph(nodes=nodes, edges=edges)


def plan_home(g: HomingGraph, field: CostField, start, to, w: float = UGV_W_DEFAULT,
              snap_radius: float = 4.0):
    """Dijkstra over the homing graph, then grid refinement per segment.

    Returns None when either endpoint has no graph node within snap_radius
    or the endpoints are not connected."""
    start = np.asarray(start, dtype=np.float64)
    to = np.asarray(to, dtype=np.float64)

    def snap(p):
        d = [math.dist(p[:2], n[:2]) for n in g.nodes]
        i = int(np.argmin(d))
        return i if d[i] <= snap_radius else None

    a, b = snap(start), snap(to)
    if a is None or b is None:
        return None

    dist = {a: 0.0}
    came = {}
    heap = [(0.0, a)]
    seen = set()
    while heap:
        dc, cur = heapq.heappop(heap)
        if cur in seen:
            continue
        seen.add(cur)
        if cur == b:
            break
        for nb, length in g.edges.get(cur, []):
            nd = dc + length
            if nd < dist.get(nb, math.inf) - 1e-12:
                dist[nb] = nd
                came[nb] = cur
                heapq.heappush(heap, (nd, nb))
    if b not in seen:
        return None
    route = [b]
    while route[-1] != a:
        route.append(came[route[-1]])
    route.reverse()

    # refine each graph hop on the grid, stitching the full path
    pts_list = []
    total = 0.0
    clear = math.inf
    anchors = [start] + [g.nodes[i] for i in route] + [to]
    for u, v in zip(anchors[:-1], anchors[1:]):
        if math.dist(u[:2], v[:2]) < field.resolution:
            continue
        seg = plan_ugv(field, u, v, w=w)
        if seg is None:
            return None
        pts_list.append(seg.waypoints if not pts_list else seg.waypoints[1:])
        total += seg.cost
        clear = min(clear, seg.min_clearance)
    if not pts_list:
        return Path(waypoints=np.array([start, to]), cost=0.0, min_clearance=clear)
    return Path(waypoints=np.vstack(pts_list), cost=total, min_clearance=clear)

"""Planner behavior against independent oracles: a self-contained Dijkstra
for grid costs, homotopy-class comparison for clearance-seeking choices,
BFS for 3D lattice optimality, plus follower and homing-graph fixtures."""

import heapq
import math
from collections import deque

import numpy as np
import pytest

from subterra import navmap as NM
from subterra import planner as P
from subterra.errors import StartUntraversableError
from subterra.geom import Pose
from subterra.kernels import FREE, OCCUPIED


def field_from_mask(mask, res=1.0):
    return NM.distance_transform(np.asarray(mask, dtype=bool), resolution=res)


def dijkstra_oracle(field, start_cell, goal_cell, w, allow=None):
    """Independent shortest-path cost on the same edge model. `allow`
    restricts the route to a cell subset without touching the clearance
    field, which is how homotopy classes get enumerated separately."""
    mask = field.source_mask if allow is None else (field.source_mask & allow)
    res = field.resolution
    eps = res / 2.0
    nx, ny = mask.shape
    dist = {start_cell: 0.0}
    heap = [(0.0, start_cell)]
    seen = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in seen:
            continue
        seen.add(cur)
        if cur == goal_cell:
            return d
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ni, nj = cur[0] + di, cur[1] + dj
                if not (0 <= ni < nx and 0 <= nj < ny) or not mask[ni, nj]:
                    continue
                if di and dj and not (mask[cur[0], nj] and mask[ni, cur[1]]):
                    continue
                step = math.sqrt(di * di + dj * dj) * res
                cost = step * (1.0 + w / max(field.dist[ni, nj], eps))
                nd = d + cost
                if nd < dist.get((ni, nj), math.inf):
                    dist[(ni, nj)] = nd
                    heapq.heappush(heap, (nd, (ni, nj)))
    return None


# ---------------------------------------------------------------------------
# ground planner


def test_ugv_open_grid_matches_oracle_and_geometry():
    mask = np.ones((10, 10), dtype=bool)
    f = field_from_mask(mask)
    path = P.plan_ugv(f, (0.5, 0.5, 0.0), (9.5, 6.5, 0.0), w=0.0)
    oracle = dijkstra_oracle(f, (0, 0), (9, 6), 0.0)
    assert path.cost == pytest.approx(oracle, abs=1e-9)
    # 6 diagonal + 3 straight moves
    assert path.cost == pytest.approx(6 * math.sqrt(2) + 3)


def test_ugv_matches_oracle_random_grids():
    rng = np.random.default_rng(12)
    for _ in range(20):
        mask = rng.random((16, 16)) < 0.75
        mask[1, 1] = True
        mask[14, 14] = True
        f = field_from_mask(mask, res=0.5)
        w = float(rng.choice([0.0, 0.2, 0.7]))
        oracle = dijkstra_oracle(f, (1, 1), (14, 14), w)
        try:
            path = P.plan_ugv(f, (0.75, 0.75, 0.0), (7.25, 7.25, 0.0), w=w)
        except StartUntraversableError:
            pytest.fail("start forced traversable")
        if oracle is None:
            assert path is None
        else:
            assert path.cost == pytest.approx(oracle, abs=1e-9)


def test_ugv_prefers_wide_branch():
    # a 6 m thick wall pierced by a 1-cell slit on the straight line and a
    # 10-cell opening off to the side
    mask = np.ones((36, 36), dtype=bool)
    mask[15:21, :] = False
    mask[15:21, 17:18] = True
    mask[15:21, 25:35] = True
    f = field_from_mask(mask)
    start, goal = (7.5, 17.5, 0.0), (29.5, 17.5, 0.0)
    allow_narrow = np.ones_like(mask)
    allow_narrow[15:21, 25:35] = False
    allow_wide = np.ones_like(mask)
    allow_wide[15:21, 17:18] = False

    short = P.plan_ugv(f, start, goal, w=0.0)
    safe = P.plan_ugv(f, start, goal, w=6.0)
    # per-class optima share the planner's exact edge model
    for w, path in ((0.0, short), (6.0, safe)):
        best_n = dijkstra_oracle(f, (7, 17), (29, 17), w, allow=allow_narrow)
        best_w = dijkstra_oracle(f, (7, 17), (29, 17), w, allow=allow_wide)
        assert path.cost == pytest.approx(min(best_n, best_w), abs=1e-9)
    # w=0 shoots the slit; the clearance weight flips to the wide opening
    assert short.waypoints[:, 1].max() < 22.0
    assert safe.waypoints[:, 1].max() > 24.0
    assert safe.min_clearance > short.min_clearance


def test_ugv_unreachable_goal_none():
    mask = np.ones((10, 10), dtype=bool)
    mask[:, 5] = False  # full wall
    f = field_from_mask(mask)
    assert P.plan_ugv(f, (1.5, 1.5, 0.0), (8.5, 8.5, 0.0)) is None


def test_ugv_untraversable_start_raises():
    mask = np.ones((6, 6), dtype=bool)
    mask[2, 2] = False
    f = field_from_mask(mask)
    with pytest.raises(StartUntraversableError):
        P.plan_ugv(f, (2.5, 2.5, 0.0), (5.5, 5.5, 0.0))


def test_flood_costs_match_single_goal_plans():
    rng = np.random.default_rng(15)
    mask = rng.random((20, 20)) < 0.8
    mask[2, 2] = True
    f = field_from_mask(mask, res=0.5)
    costs, pred = P.cost_to_go(f, (1.25, 1.25, 0.0), w=0.3)
    for gi, gj in [(18, 3), (4, 17), (19, 19), (10, 10)]:
        if not mask[gi, gj]:
            continue
        path = P.plan_ugv(f, (1.25, 1.25, 0.0), ((gi + 0.5) * 0.5, (gj + 0.5) * 0.5, 0.0), w=0.3)
        if path is None:
            assert not np.isfinite(costs[gi, gj])
        else:
            assert costs[gi, gj] == pytest.approx(path.cost, abs=1e-9)
            flood_path = P.extract_flood_path(f, costs, pred, (1.25, 1.25, 0.0), (gi, gj))
            assert flood_path.cost == pytest.approx(path.cost, abs=1e-9)


# ---------------------------------------------------------------------------
# aerial tunnel planner


def fork_mask():
    """Two openings through a wall: 2-cell gap near, 6-cell gap far."""
    mask = np.ones((24, 24), dtype=bool)
    mask[11:13, :] = False
    mask[11:13, 2:4] = True    # narrow gap
    mask[11:13, 14:20] = True  # wide gap
    return mask


def test_uav_tunnel_p0_equals_plain_astar():
    mask = fork_mask()
    f = field_from_mask(mask)
    path = P.plan_uav_tunnel(f, (2.5, 2.5, 1.0), (22.5, 2.5, 1.0), p=0.0)
    oracle = dijkstra_oracle(f, (2, 2), (22, 2), 0.0)
    assert path.cost == pytest.approx(oracle, abs=1e-9)


def test_uav_tunnel_large_p_picks_wide_gap():
    mask = fork_mask()
    f = field_from_mask(mask)
    start, goal = (2.5, 2.5, 1.0), (22.5, 2.5, 1.0)
    low = P.plan_uav_tunnel(f, start, goal, p=0.0)
    high = P.plan_uav_tunnel(f, start, goal, p=60.0)
    # plain A* shoots the narrow gap (shorter), high p detours to the wide one
    assert low.waypoints[:, 1].max() < 8.0
    assert high.waypoints[:, 1].max() > 12.0
    assert high.min_clearance > low.min_clearance


def test_uav_tunnel_clearance_monotone_in_p():
    mask = fork_mask()
    f = field_from_mask(mask)
    start, goal = (2.5, 2.5, 1.0), (22.5, 2.5, 1.0)
    prev = -1.0
    for p in [0.0, 5.0, 15.0, 40.0, 80.0]:
        path = P.plan_uav_tunnel(f, start, goal, p=p)
        assert path.min_clearance >= prev - 1e-12
        prev = path.min_clearance


def test_uav_tunnel_snap_far_goal():
    mask = np.ones((30, 8), dtype=bool)
    mask[:, 0] = False
    mask[:, 7] = False
    f = field_from_mask(mask)
    # goal far beyond the grid along +x, mirroring a deep exploration bias
    path = P.plan_uav_tunnel(f, (1.5, 4.5, 1.0), (300.0, 4.5, 1.0), p=0.0, snap_goal=True)
    assert path is not None
    assert path.waypoints[-1, 0] > 28.0


def test_uav_tunnel_unreachable_none():
    mask = np.ones((10, 10), dtype=bool)
    mask[5, :] = False
    f = field_from_mask(mask)
    assert P.plan_uav_tunnel(f, (1.5, 1.5, 1.0), (8.5, 8.5, 1.0), p=0.0) is None


# ---------------------------------------------------------------------------
# aerial urban planner


def bfs3_oracle(free, s, g):
    """Unweighted 6-connected shortest hop count, None if unreachable."""
    if not free[s]:
        return None
    dist = {s: 0}
    q = deque([s])
    while q:
        cur = q.popleft()
        if cur == g:
            return dist[cur]
        for di, dj, dk in P._NEIGH6:
            nb = (cur[0] + di, cur[1] + dj, cur[2] + dk)
            if all(0 <= nb[d] < free.shape[d] for d in range(3)) and free[nb] and nb not in dist:
                dist[nb] = dist[cur] + 1
                q.append(nb)
    return None


def make_map3(free):
    m = NM.NavMap(resolution=1.0, shape=free.shape)
    m.state[free] = FREE
    m.state[~free] = OCCUPIED
    m._version += 1
    return m


def test_urban_free_box_manhattan_optimal():
    free = np.ones((8, 8, 8), dtype=bool)
    m = make_map3(free)
    path = P.plan_uav_urban(m, (0.5, 0.5, 0.5), (7.5, 7.5, 7.5))
    assert path.cost == pytest.approx(7 + 7 + 7)


def test_urban_vertical_shaft():
    free = np.zeros((6, 6, 12), dtype=bool)
    free[1:5, 1:5, 1:3] = True     # bottom room
    free[3, 3, 1:10] = True        # shaft
    free[1:5, 1:5, 9:11] = True    # top room
    m = make_map3(free)
    path = P.plan_uav_urban(m, (1.5, 1.5, 1.5), (4.5, 4.5, 10.5))
    assert path is not None
    hops = bfs3_oracle(free, (1, 1, 1), (4, 4, 10))
    assert path.cost == pytest.approx(hops)
    assert path.waypoints[:, 2].max() > 9.0


def test_urban_replan_with_new_obstacle():
    free = np.ones((10, 10, 4), dtype=bool)
    m = make_map3(free)
    first = P.plan_uav_urban(m, (0.5, 4.5, 1.5), (9.5, 4.5, 1.5))
    mid = first.waypoints[len(first.waypoints) // 2]
    # wall appears ahead with one opening at the top edge
    free2 = free.copy()
    free2[7, :, :] = False
    free2[7, 9, :] = True
    m2 = make_map3(free2)
    replanned = P.plan_uav_urban(m2, mid, (9.5, 4.5, 1.5))
    assert replanned is not None
    s = tuple(np.floor(mid).astype(int))
    assert replanned.cost == pytest.approx(bfs3_oracle(free2, s, (9, 4, 1)))
    cells = {tuple(np.floor(wp).astype(int)) for wp in replanned.waypoints}
    assert all(free2[c] for c in cells)


def test_urban_unreachable_none():
    free = np.ones((6, 6, 6), dtype=bool)
    free[3, :, :] = False
    m = make_map3(free)
    assert P.plan_uav_urban(m, (0.5, 0.5, 0.5), (5.5, 5.5, 5.5)) is None


def test_urban_narrow_passage_survives_coarse_blocking():
    # 1-voxel doorway: invisible at coarse scale, found by fallback
    free = np.zeros((12, 12, 4), dtype=bool)
    free[1:11, 1:5, 1:3] = True
    free[1:11, 8:11, 1:3] = True
    free[5, 5:8, 1] = True
    m = make_map3(free)
    path = P.plan_uav_urban(m, (2.5, 2.5, 1.5), (2.5, 9.5, 1.5), coarse=4)
    assert path is not None
    assert path.cost == pytest.approx(bfs3_oracle(free, (2, 2, 1), (2, 9, 1)))


# ---------------------------------------------------------------------------
# smoothing


def test_smooth_window1_identity():
    path = P.Path(waypoints=[[0, 0, 0], [1, 0, 0], [1, 1, 0]], cost=2.0, min_clearance=1.0)
    out = P.smooth_path(path, 1)
    assert out is path


def test_smooth_zigzag_shortens():
    pts = []
    for i in range(20):
        pts.append([i * 0.5, 0.25 * (i % 2), 0.0])
    path = P.Path(waypoints=pts, cost=0.0, min_clearance=2.0)
    out = P.smooth_path(path, 5)
    assert out.length < path.length
    np.testing.assert_allclose(out.waypoints[0], path.waypoints[0])
    np.testing.assert_allclose(out.waypoints[-1], path.waypoints[-1])


def test_smooth_rejects_corner_cut_into_wall():
    mask = np.ones((10, 10), dtype=bool)
    mask[0:5, 0:5] = False
    f = field_from_mask(mask)
    cells = [(i, 5) for i in range(0, 6)] + [(5, j) for j in range(4, -1, -1)]
    pts = [[(i + 0.5), (j + 0.5), 0.0] for i, j in cells]
    path = P.Path(waypoints=pts, cost=0.0, min_clearance=1.0)
    out = P.smooth_path(path, 7, field=f, safety_radius=0.4)
    assert out is path  # unchanged object: rejected


def test_smooth_bad_window_rejected():
    path = P.Path(waypoints=[[0, 0, 0], [1, 0, 0]], cost=1.0, min_clearance=1.0)
    with pytest.raises(ValueError):
        P.smooth_path(path, 4)


# ---------------------------------------------------------------------------
# follower


def straight_field(n=30, width=6, res=0.5):
    mask = np.zeros((n, width), dtype=bool)
    mask[1:n - 1, 1:width - 1] = True
    return NM.distance_transform(mask, resolution=res)


def test_follow_aligned_full_speed():
    f = straight_field()
    path = P.Path(waypoints=[[2.0, 1.5, 0.0], [10.0, 1.5, 0.0]], cost=8.0, min_clearance=1.0)
    fs = P.FollowerState(path=path)
    lim = P.PlatformLimits(v_max=0.6)
    out = P.follow_step(fs, Pose(position=(2.0, 1.5, 0.0), yaw=0.0), f, 0.1, lim)
    lin, ang = out.commanded
    assert ang == pytest.approx(0.0)
    assert lin == pytest.approx(0.6)


def test_follow_reversed_heading_turns_in_place():
    f = straight_field()
    path = P.Path(waypoints=[[10.0, 1.5, 0.0]], cost=0.0, min_clearance=1.0)
    fs = P.FollowerState(path=path)
    lim = P.PlatformLimits(v_max=1.0, w_max=1.2)
    out = P.follow_step(fs, Pose(position=(2.0, 1.5, 0.0), yaw=math.pi), f, 0.1, lim)
    lin, ang = out.commanded
    assert lin == 0.0
    assert abs(ang) == pytest.approx(1.2)


def test_follow_closed_loop_reaches_goal_safely():
    f = straight_field(n=40, width=8, res=0.5)
    xs = np.arange(1.0, 18.5, 0.5)
    path = P.Path(waypoints=[[x, 2.0, 0.0] for x in xs], cost=0.0, min_clearance=1.5)
    fs = P.FollowerState(path=path)
    lim = P.PlatformLimits(v_max=1.0, safety_radius=0.3)
    pose = Pose(position=(1.0, 2.0, 0.0), yaw=0.3)
    dt = 0.1
    ideal = (xs[-1] - xs[0]) / lim.v_max
    t = 0.0
    while t < 1.5 * ideal * 2.0 and not fs.done:
        fs = P.follow_step(fs, pose, f, dt, lim)
        lin, ang = fs.commanded
        yaw = pose.yaw + ang * dt
        newp = pose.position + np.array([math.cos(yaw), math.sin(yaw), 0.0]) * lin * dt
        pose = Pose(position=newp, yaw=yaw)
        cell = (int(newp[0] / 0.5), int(newp[1] / 0.5))
        assert f.dist[cell] >= lim.safety_radius - 1e-9
        t += dt
    assert fs.done
    assert t <= 1.5 * ideal + 3.0  # startup turn allowance


def test_follow_commands_within_limits():
    f = straight_field()
    path = P.Path(waypoints=[[8.0, 1.5, 0.0]], cost=0.0, min_clearance=1.0)
    lim = P.PlatformLimits(v_max=0.4, w_max=0.9)
    for yaw in np.linspace(-math.pi, math.pi, 17):
        out = P.follow_step(P.FollowerState(path=path),
                            Pose(position=(2.0, 1.5, 0.0), yaw=yaw), f, 0.1, lim)
        lin, ang = out.commanded
        assert 0.0 <= lin <= lim.v_max + 1e-12
        assert abs(ang) <= lim.w_max + 1e-12


# ---------------------------------------------------------------------------
# homing graph


def corridor_navmap(length_m=50.0, width_m=4.0, res=0.5):
    n = int(length_m / res)
    w = int(width_m / res)
    m = NM.NavMap(resolution=res, shape=(n, w, 8))
    m.state[1:n - 1, 1:w - 1, 1] = OCCUPIED
    m.state[1:n - 1, 1:w - 1, 2:7] = FREE
    m._version += 1
    return m


def test_homing_chain_on_straight_corridor():
    m = corridor_navmap()
    trail = [np.array([x, 2.0, 0.5]) for x in np.arange(1.0, 49.0, 0.25)]
    mask, _ = NM.traversability_mask(m, k_d=0.3)
    g = P.build_homing_graph(m, trail, mask=mask)
    # about one node per 2 m
    assert 20 <= len(g.nodes) <= 30
    f = NM.distance_transform(mask, resolution=m.resolution)
    home = P.plan_home(g, f, trail[-1], trail[0], w=0.0)
    assert home is not None
    direct = P.plan_ugv(f, trail[-1], trail[0], w=0.0)
    assert home.cost >= direct.cost - 1e-9
    assert home.cost <= direct.cost * 1.05


def test_homing_none_when_target_unvisited():
    m = corridor_navmap()
    trail = [np.array([x, 2.0, 0.5]) for x in np.arange(1.0, 20.0, 0.5)]
    mask, _ = NM.traversability_mask(m, k_d=0.3)
    g = P.build_homing_graph(m, trail, mask=mask)
    f = NM.distance_transform(mask, resolution=m.resolution)
    assert P.plan_home(g, f, trail[-1], np.array([45.0, 2.0, 0.5])) is None


def test_homing_junction_has_degree_three():
    # T shape: corridor along x plus a stem in +y at x=10
    res = 0.5
    m = NM.NavMap(resolution=res, shape=(40, 40, 8))
    m.state[1:39, 2:6, 1] = OCCUPIED
    m.state[1:39, 2:6, 2:7] = FREE
    m.state[18:23, 2:38, 1] = OCCUPIED
    m.state[18:23, 2:38, 2:7] = FREE
    m._version += 1
    trail = [np.array([x, 2.0, 0.5]) for x in np.arange(1.0, 19.0, 0.25)]
    trail += [np.array([10.0, y, 0.5]) for y in np.arange(2.0, 18.0, 0.25)]
    mask, _ = NM.traversability_mask(m, k_d=0.3)
    g = P.build_homing_graph(m, trail, mask=mask)
    assert any(g.degree(i) >= 3 for i in range(len(g.nodes)))


def test_homing_empty_trail_rejected():
    m = corridor_navmap()
    with pytest.raises(ValueError):
        P.build_homing_graph(m, [], k_d=0.3)

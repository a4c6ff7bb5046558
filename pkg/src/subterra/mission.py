"""Mission orchestration.

Fixed-timestep engine driving a simulated fleet through a voxel world:
lidar sensing into per-robot maps, artifact detection and fusion,
frontier and coverage goal selection, path following, tracked-flipper
control, pitch and roll watchdogs, scripted failure injection with
state-preserving restarts, radio sync back to base, and the report
scoring ledger. One logical thread advances everything on a 0.1 s tick,
so a seeded run is exactly reproducible and its event log replays bit
for bit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import comms, kernels
from .detector import (DetectorModel, HypothesisSet, confirm, confirmed_record,
                       hypothesis_update, simulate_detections)
from .errors import SchemaError, UnknownFailureKindError
from .explorer import (CameraModel, CoverageState, ExplorationGoal, _field_coords,
                       detect_stuck, filter_visited_by_peers, mark_covered,
                       select_coverage_goal, select_frontier_goal)
from .geom import Pose, wrap_angle
from .navmap import (NavMap, cluster_frontiers, distance_transform,
                     elevation_layer, extract_frontiers, integrate_scan,
                     traversability_mask)
from .planner import (FollowerState, Path, PlatformLimits, follow_step,
                      plan_ugv, cost_to_go, smooth_path)
from .sync import RecordStore, anti_entropy_session
from .world import TerrainProfile, WorldModel, generate_world, reachable_free

DT_DEFAULT = 0.1

PLATFORM_SPEED = {"wheeled": 1.0, "tracked": 0.4, "legged": 0.2, "aerial": 1.0}
# tallest single step the chassis can mount, meters
CLIMB_LIMIT = {"wheeled": 0.15, "tracked": 0.40, "legged": 0.30, "aerial": math.inf}

MODES = ("idle", "explore", "waypoint", "force_follow", "homing", "estopped", "failed")

SENSOR_HEIGHT = 0.45        # lidar/camera mast above the base link
BODY_CLEARANCE = 0.2        # base link height above the ground surface
SCAN_RANGE = 20.0
ARRIVE_RADIUS = 0.4
PEER_VISITED_RADIUS = 8.0   # frontiers this close to a teammate's trail wait
CLAIM_RADIUS = 8.0          # frontiers this close to a teammate's goal wait
CLAIM_TTL = 30.0            # unrefreshed claims stop blocking after this
GOAL_HOLD_RADIUS = 3.0      # a held goal stays valid while frontier is near
HEADING_BIAS = 5.0          # meters of penalty per radian off assigned bearing

WARN_DEG = 30.0
CRIT_DEG = 45.0

# ---------------------------------------------------------------------------
# localization drift


@dataclass(frozen=True)
class DriftParams:
    """Open-loop odometry error rates as fractions of distance driven."""

    xy_rate: float = 0.003
    z_rate: float = 0.008
    heading_rate: float = 0.002   # rad per sqrt(meter) random walk


@dataclass
class DriftState:
    bias: np.ndarray              # per-meter error vector, drawn once per run
    accumulated: np.ndarray
    heading_error: float
    params: DriftParams

    @classmethod
    def make(cls, params: DriftParams, rng) -> "DriftState":
        # xy bias is zero-mean; z bias has a fixed magnitude band with a
        # random sign, which keeps the vertical component dominant
        bx = min(max(rng.normal(0.0, params.xy_rate), -2 * params.xy_rate), 2 * params.xy_rate)
        by = min(max(rng.normal(0.0, params.xy_rate), -2 * params.xy_rate), 2 * params.xy_rate)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        bz = sign * params.z_rate * rng.uniform(0.75, 1.25)
        return cls(bias=np.array([bx, by, bz]), accumulated=np.zeros(3),
                   heading_error=0.0, params=params)


def apply_drift(ds: DriftState, delta, rng) -> DriftState:
    """Grow the accumulated error in proportion to distance moved."""
    dist = float(np.linalg.norm(np.asarray(delta, dtype=np.float64)))
    if dist == 0.0:
        return ds
    ds.accumulated = ds.accumulated + ds.bias * dist
    ds.heading_error += float(rng.normal(0.0, ds.params.heading_rate * math.sqrt(dist)))
    return ds


# ---------------------------------------------------------------------------
# flipper state machine


NEUTRAL = "Neutral"
CLIMB_FRONT = "ClimbFront"
CLIMB_REAR = "ClimbRear"
DESCEND_FRONT = "DescendFront"
DESCEND_REAR = "DescendRear"

H_TRIG = 0.15               # height change that starts a climb or descent
TRIG_REGION = (0.3, 0.8)    # meters ahead where the trigger is evaluated
REAR_HOLD = 5               # flat calls the rear phase persists before reset

# target angles (front, rear) in radians, positive raised, plus a
# low-torque ground-conformance flag
_FLIPPER_COMMANDS = {
    NEUTRAL: (0.0, 0.0, True),
    CLIMB_FRONT: (0.9, -0.2, False),
    CLIMB_REAR: (-0.3, -0.9, False),
    DESCEND_FRONT: (-0.9, 0.2, False),
    DESCEND_REAR: (0.3, 0.9, False),
}


@dataclass
class FlipperFsm:
    state: str = NEUTRAL
    stair_mode: bool = False
    hold: int = 0

    @property
    def turn_allowed(self) -> bool:
        return not self.stair_mode


@dataclass(frozen=True)
class FlipperCommand:
    front: float
    rear: float
    conform: bool       # press with low torque, following the ground


def flipper_step(fsm: FlipperFsm, profile, moving: bool):
    """Advance the flipper machine one control step.

    Rises or drops of at least H_TRIG inside the trigger region ahead
    start a climb or descent; the front phase hands over to the rear
    phase once the window flattens (the front tracks crested), and the
    rear phase resets to neutral after holding flat for a few calls.
    """
    h = profile.samples - profile.samples[0]
    idx = np.arange(len(h)) * profile.spacing
    region = h[(idx >= TRIG_REGION[0]) & (idx <= TRIG_REGION[1])]
    rise = float(region.max()) if region.size else 0.0
    drop = float(region.min()) if region.size else 0.0
    window_flat = bool(np.abs(h).max() < H_TRIG / 2)

    if moving:
        if fsm.state == NEUTRAL:
            if rise >= H_TRIG:
                fsm.state = CLIMB_FRONT
            elif drop <= -H_TRIG:
                fsm.state = DESCEND_FRONT
        elif fsm.state == CLIMB_FRONT:
            if float(h.max()) < H_TRIG / 2:
                fsm.state = CLIMB_REAR
                fsm.hold = REAR_HOLD
        elif fsm.state == DESCEND_FRONT:
            if float(h.min()) > -H_TRIG / 2:
                fsm.state = DESCEND_REAR
                fsm.hold = REAR_HOLD
        elif fsm.state in (CLIMB_REAR, DESCEND_REAR):
            if window_flat:
                fsm.hold -= 1
                if fsm.hold <= 0:
                    fsm.state = NEUTRAL
            else:
                fsm.hold = REAR_HOLD

    f, r, conform = _FLIPPER_COMMANDS[fsm.state]
    return fsm, FlipperCommand(front=f, rear=r, conform=conform)


# ---------------------------------------------------------------------------
# safety watchdog


def watchdog_step(robot) -> tuple:
    """Recovery actions for the robot's current pitch and roll.

    Returns a tuple of action names: empty when safe, ("stop",) plus
    "flipper_assist" on tracked platforms past the warn angle, and
    ("estop",) past the critical angle. A disabled watchdog never acts.
    """
    if not robot.watchdog_enabled:
        return ()
    tilt = max(abs(robot.pitch), abs(robot.roll))
    if tilt > math.radians(CRIT_DEG):
        return ("estop",)
    if tilt > math.radians(WARN_DEG):
        if robot.platform == "tracked":
            return ("stop", "flipper_assist")
        return ("stop",)
    return ()


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class Report:
    stamp: float
    cls: str
    position: np.ndarray
    outcome: str

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))


class ScoreLedger:
    """Report bookkeeping against the ground-truth artifact list."""

    def __init__(self, truths, budget: int = 40, radius: float = 5.0):
        if budget <= 0 or radius <= 0:
            raise SchemaError("budget and radius must be positive")
        self.truths = list(truths)
        self.budget = int(budget)
        self.radius = float(radius)
        self.reports: list[Report] = []
        self.scored = [False] * len(self.truths)
        self.points = 0

    @property
    def remaining(self) -> int:
        used = sum(1 for r in self.reports if r.outcome != "rejected_budget")
        return self.budget - used


def submit_report(ledger: ScoreLedger, cls: str, position, clock: float) -> str:
    """Judge one report. The nearest same-class truth within the score
    radius decides the outcome: +1 if it was unscored, -1 if it was
    already scored, miss otherwise. Rejected reports cost no budget."""
    position = np.asarray(position, dtype=np.float64)
    if ledger.remaining <= 0:
        outcome = "rejected_budget"
    else:
        near = []
        for k, truth in enumerate(ledger.truths):
            if truth.cls != cls:
                continue
            d = float(np.linalg.norm(truth.position - position))
            if d <= ledger.radius:
                near.append((d, k))
        if not near:
            outcome = "miss"
        else:
            _, k = min(near)
            if ledger.scored[k]:
                outcome = "duplicate_penalty"
                ledger.points -= 1
            else:
                ledger.scored[k] = True
                outcome = "scored"
                ledger.points += 1
    ledger.reports.append(Report(stamp=float(clock), cls=cls,
                                 position=position, outcome=outcome))
    return outcome


def final_score(ledger: ScoreLedger, robots) -> tuple:
    """(points, -sum of scored stamps, total odometer); compare
    lexicographically, larger wins on every component."""
    stamps = sum(r.stamp for r in ledger.reports if r.outcome == "scored")
    odometer = 0.0
    for r in robots:
        odometer += r.odometer if hasattr(r, "odometer") else float(r)
    return (ledger.points, -stamps, odometer)


# ---------------------------------------------------------------------------
# failure injection


FAILURE_KINDS = ("node_crash", "sensor_fail", "motor_reset", "computer_reboot",
                 "comms_out")


@dataclass(frozen=True)
class FailureEvent:
    stamp: float
    robot: str
    kind: str
    duration: float
    subsystem: str = "mapping"

    def __post_init__(self):
        if self.kind not in FAILURE_KINDS:
            raise UnknownFailureKindError(f"unknown failure kind {self.kind!r}")
        if self.duration < 0:
            raise SchemaError("failure duration must be non-negative")


def restart_policy(platform: str, failure: FailureEvent):
    """Ordered recovery timeline as (seconds after injection, step name).

    Single-subsystem failures come back in one step. A full reboot powers
    hardware first, then restores persisted software state, then releases
    autonomy, so the robot resumes with its map, hypotheses, and record
    store intact.
    """
    d = failure.duration
    if failure.kind == "node_crash":
        return [(d, "restore_subsystem")]
    if failure.kind == "sensor_fail":
        return [(d, "restore_sensor")]
    if failure.kind == "motor_reset":
        return [(d, "restore_motor")]
    if failure.kind == "comms_out":
        return [(d, "restore_comms")]
    if failure.kind == "computer_reboot":
        return [(d, "power_on"), (d + 2.0, "restore_software"),
                (d + 4.0, "resume_autonomy")]
    raise UnknownFailureKindError(failure.kind)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class MissionConfig:
    duration: float = 3600.0
    setup: float = 1800.0
    report_budget: int = 40
    score_radius: float = 5.0
    fleet: tuple = ()
    world: object = None            # WorldModel or generator params dict
    seed: int = 0
    failures: tuple = ()
    drift: DriftParams = None
    initial_offset: tuple = (0.0, 0.0, 0.0)   # setup-phase alignment residual
    dt: float = DT_DEFAULT

    def __post_init__(self):
        if self.duration <= 0 or self.report_budget <= 0 or self.score_radius <= 0:
            raise SchemaError("duration, report budget, and score radius must be positive")
        if self.dt <= 0:
            raise SchemaError("dt must be positive")
        if self.drift is None:
            self.drift = DriftParams()
        elif isinstance(self.drift, dict):
            self.drift = DriftParams(**self.drift)
        fleet = []
        for entry in self.fleet:
            entry = dict(entry)
            if entry.get("platform") not in PLATFORM_SPEED:
                raise SchemaError(f"unknown platform {entry.get('platform')!r}")
            entry.setdefault("mode", "explore")
            fleet.append(entry)
        ids = [e["id"] for e in fleet]
        if len(set(ids)) != len(ids):
            raise SchemaError("fleet ids must be unique")
        self.fleet = tuple(fleet)
        failures = []
        for f in self.failures:
            failures.append(f if isinstance(f, FailureEvent) else FailureEvent(**f))
        self.failures = tuple(sorted(failures, key=lambda f: (f.stamp, f.robot)))


# ---------------------------------------------------------------------------
# per-robot runtime


@dataclass
class RobotState:
    id: str
    platform: str
    true_pose: Pose
    drift: DriftState
    mode: str = "idle"
    battery: float = 1.0
    flipper: FlipperFsm = None
    pitch: float = 0.0
    roll: float = 0.0
    odometer: float = 0.0
    watchdog_enabled: bool = True

    @property
    def estimated_pose(self) -> Pose:
        return Pose(self.true_pose.position + self.drift.accumulated,
                    wrap_angle(self.true_pose.yaw + self.drift.heading_error))


class _RobotRuntime:
    """Everything the engine tracks per robot beyond the public state."""

    def __init__(self, index, state, nav, coverage, hyp, store, rng_motion, rng_detect):
        self.index = index
        self.state = state
        self.map = nav
        self.coverage = coverage
        self.hyp = hyp
        self.store = store
        self.rng_motion = rng_motion
        self.rng_detect = rng_detect
        self.model = DetectorModel()
        self.model_degraded = DetectorModel(bearing_fraction=1.0)
        self.field = None
        self.costs = None
        self.follower = None
        self.goal = None
        self.command_target = None
        self.force_plan = True
        self.blacklist = set()      # frontier cells already stood on
        self.driven = np.zeros(nav.shape[:2], dtype=bool)   # odometry-proven
        self.banned = np.zeros(nav.shape[:2], dtype=bool)   # contact-refused
        self.trails = {}            # peer id -> visited positions, from records
        self.claims = {}            # peer id -> (stamp, goal xy or None)
        self.trail_scan = 0         # store records already folded into trails
        self.blocked = 0
        self.max_cmd = 0.0
        self.history = []           # (t, estimated position) samples
        self.commanded = []         # (t, commanded speed) samples
        # failure bookkeeping
        self.sensor_down = False
        self.mapping_down = False
        self.motor_down = False
        self.offline = False
        self.persisted = None
        self.pending_steps = []     # (t, step name, FailureEvent)


def _scan_directions(n_az=60):
    """Unit ray fan in the body frame: an azimuth ring swept through a
    two-band elevation set, plus straight up and down.

    The shallow band is fine-grained so that near-horizontal rays graze
    the floor out to most of the sensor range; without it the map never
    learns distant ground and a robot cannot plan past a few meters.
    The steep band is coarse but must reach far down, or the floor
    annulus between the robot's own cell and the shallowest steep ray
    stays unknown and walls the planner in."""
    az = np.linspace(0.0, 2.0 * math.pi, n_az, endpoint=False)
    el = np.radians(np.concatenate([
        np.linspace(-70.0, -18.0, 8),
        np.linspace(-15.0, 15.0, 21),
        np.linspace(18.0, 70.0, 8)]))
    A, E = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)],
                    axis=-1).reshape(-1, 3)
    poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    return np.ascontiguousarray(np.vstack([dirs, poles]))


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _chord_on_mask(field, a, b) -> bool:
    """Straight xy run between two field-frame points stays on
    traversable cells."""
    res = field.resolution
    mask = field.source_mask
    nx, ny = mask.shape
    n = max(1, int(math.hypot(b[0] - a[0], b[1] - a[1]) / (0.5 * res)))
    for k in range(n + 1):
        t = k / n
        i = int(math.floor((a[0] + (b[0] - a[0]) * t) / res))
        j = int(math.floor((a[1] + (b[1] - a[1]) * t) / res))
        if not (0 <= i < nx and 0 <= j < ny) or not mask[i, j]:
            return False
    return True


def _thin_waypoints(path: Path, field, spacing: float = 0.75) -> Path:
    """Drop waypoints closer than `spacing` apart, keeping the endpoints,
    any vertex that bends the path, and any vertex whose removal would
    let the straight chord leave the traversable cells. The follower
    brakes toward its active waypoint, so cell-by-cell paths crawl."""
    wp = path.waypoints
    if len(wp) <= 2:
        return path
    keep = [0]
    for i in range(1, len(wp) - 1):
        a = wp[i, :2] - wp[keep[-1], :2]
        b = wp[i + 1, :2] - wp[i, :2]
        turn = abs(wrap_angle(math.atan2(b[1], b[0]) - math.atan2(a[1], a[0]))) \
            if a.any() and b.any() else 0.0
        if (np.hypot(a[0], a[1]) >= spacing or turn > 0.45
                or not _chord_on_mask(field, wp[keep[-1]], wp[i + 1])):
            keep.append(i)
    keep.append(len(wp) - 1)
    return Path(waypoints=wp[keep], cost=path.cost,
                min_clearance=path.min_clearance)


# ---------------------------------------------------------------------------
# engine


class MissionEngine:
    """Owns all mutable mission state; tick() advances one dt step.

    Sub-step order within a tick is fixed: failures, commands, then per
    robot sense (with map integration), detect, plan, follow, flipper,
    watchdog; then fleet-wide comms beacons, record sync, and periodic
    status logging. All randomness comes from streams spawned off the
    config seed, and the clock is tick_no * dt, so two runs with the
    same config are identical.
    """

    SENSE_PERIOD = 0.5
    DETECT_PERIOD = 1.0
    PLAN_PERIOD = 5.0
    COMMS_PERIOD = 2.0
    STATUS_PERIOD = 10.0

    def __init__(self, config: MissionConfig):
        self.config = config
        self.dt = config.dt
        self.tick_no = 0
        self.events = []
        self.ended = False

        w = config.world
        if isinstance(w, dict):
            w = generate_world(w.get("seed", config.seed), w.get("style", "tunnel"),
                               w.get("extent", 60.0))
        if not isinstance(w, WorldModel):
            raise SchemaError("config.world must be a WorldModel or generator params")
        self.world = w
        if w.staging is None:
            raise SchemaError("world has no staging position")

        self.ledger = ScoreLedger(w.artifacts, config.report_budget, config.score_radius)
        self.base_store = RecordStore("base")
        self.net = comms.Network(w)
        base_z = self._ground_at(w.staging[:2], w.staging[2]) + BODY_CLEARANCE
        base_pos = np.array([w.staging[0], w.staging[1], base_z])
        self.net.add_node(comms.RadioNode("base", base_pos.copy(),
                                          ("wifi", "mesh", "mote"), kind="base"))
        self.tables = {"base": comms.BeaconTable()}
        self._beacon_seq = {}

        seed_idx = tuple(int(v) for v in np.floor(w.to_grid(w.staging)).astype(int))
        self.reachable = reachable_free(w.occupancy, seed_idx)
        self.truth_state = np.zeros(w.shape, dtype=np.int8)
        self.truth_counts = np.zeros(w.shape, dtype=np.uint16)

        streams = np.random.SeedSequence(config.seed).spawn(1 + 2 * len(config.fleet))
        self.rng = np.random.Generator(np.random.PCG64(streams[0]))
        self._dirs_body = _scan_directions()

        self.robots: dict[str, _RobotRuntime] = {}
        self.order = []
        offset = np.asarray(config.initial_offset, dtype=np.float64)
        for k, entry in enumerate(config.fleet):
            rid, platform = entry["id"], entry["platform"]
            pos = self._spawn_position(k)
            rng_motion = np.random.Generator(np.random.PCG64(streams[1 + 2 * k]))
            rng_detect = np.random.Generator(np.random.PCG64(streams[2 + 2 * k]))
            drift = DriftState.make(config.drift, rng_motion)
            drift.accumulated = drift.accumulated + offset
            state = RobotState(id=rid, platform=platform,
                               true_pose=Pose(pos, yaw=0.0), drift=drift,
                               mode=entry["mode"],
                               flipper=FlipperFsm() if platform == "tracked" else None)
            nav = NavMap(w.resolution, w.shape, origin=w.frame_origin, owner=rid)
            coverage = CoverageState(w.shape[:2], CameraModel())
            rt = _RobotRuntime(k, state, nav, coverage, HypothesisSet(robot=rid),
                               RecordStore(rid), rng_motion, rng_detect)
            self.robots[rid] = rt
            self.order.append(rid)
            self.net.add_node(comms.RadioNode(rid, pos.copy(), ("wifi", "mesh", "mote")))
            self.tables[rid] = comms.BeaconTable()
            self._beacon_seq[rid] = 0

        self.failure_cursor = 0
        self.commands = []
        self._cmd_seq = 0
        self._log("run_header", world=w.generator, seed=config.seed,
                  duration=config.duration, budget=config.report_budget,
                  radius=config.score_radius,
                  fleet=[{"id": e["id"], "platform": e["platform"]} for e in config.fleet],
                  artifacts=[{"class": a.cls, "position": [float(v) for v in a.position]}
                             for a in w.artifacts])

    # -- setup helpers -------------------------------------------------

    def _ground_at(self, xy, z_ref: float) -> float:
        """Top of the highest solid voxel at or just above the reference
        height, scanning the column downward. Unlike the world's open-sky
        elevation layer this respects ceilings and multiple floors."""
        w = self.world
        g = w.to_grid((xy[0], xy[1], 0.0))
        i = min(max(int(math.floor(g[0])), 0), w.shape[0] - 1)
        j = min(max(int(math.floor(g[1])), 0), w.shape[1] - 1)
        k_hi = int(math.floor((z_ref + 0.5 - w.frame_origin[2]) / w.resolution))
        k_hi = min(max(k_hi, 0), w.shape[2] - 1)
        col = w.occupancy[i, j, :k_hi + 1]
        solid = np.flatnonzero(col)
        if len(solid) == 0:
            return float(w.frame_origin[2])
        return float((solid[-1] + 1) * w.resolution + w.frame_origin[2])

    def _support_at(self, xy, z_ref: float, reach: float) -> float:
        """Z of the highest exposed solid top within `reach` of z_ref.

        Wall faces and ceilings are solid under solid; they expose no top
        and give no support, so a wheel beside one rides at chassis
        height instead of on the obstruction."""
        w = self.world
        g = w.to_grid((xy[0], xy[1], 0.0))
        i = min(max(int(math.floor(g[0])), 0), w.shape[0] - 1)
        j = min(max(int(math.floor(g[1])), 0), w.shape[1] - 1)
        col = w.occupancy[i, j, :]
        exposed = col.copy()
        exposed[:-1] &= ~col[1:]
        tops = np.flatnonzero(exposed)
        if tops.size == 0:
            return z_ref
        z_tops = w.frame_origin[2] + (tops + 1) * w.resolution
        z_tops = z_tops[z_tops <= z_ref + reach]
        if z_tops.size == 0 or z_tops.max() < z_ref - reach:
            return z_ref
        return float(z_tops.max())

    def _spawn_position(self, k: int) -> np.ndarray:
        w = self.world
        base = w.staging.copy()
        for step in (0.6 * k, 0.0):
            xy = base[:2] + np.array([step, 0.0])
            z = self._ground_at(xy, base[2]) + BODY_CLEARANCE
            p = np.array([xy[0], xy[1], z])
            if w.is_free(p):
                return p
        z = self._ground_at(base[:2], base[2]) + BODY_CLEARANCE
        return np.array([base[0], base[1], z])

    def _log(self, kind: str, **body):
        self.events.append({"t": round(self.now, 6), "kind": kind, **body})

    @property
    def now(self) -> float:
        return self.tick_no * self.dt

    def _every(self, period: float, phase: int = 0) -> bool:
        n = max(1, int(round(period / self.dt)))
        return (self.tick_no + phase) % n == 0

    # -- operator commands ---------------------------------------------

    def enqueue_command(self, cmd: dict):
        cmd = dict(cmd)
        if "stamp" not in cmd or "kind" not in cmd:
            raise SchemaError("command needs stamp and kind")
        self._cmd_seq += 1
        self.commands.append((float(cmd["stamp"]), self._cmd_seq, cmd))
        self.commands.sort(key=lambda c: (c[0], c[1]))
        return self._cmd_seq

    def _process_commands(self):
        while self.commands and self.commands[0][0] <= self.now + 1e-9:
            _, seq, cmd = self.commands.pop(0)
            self._apply_command(seq, cmd)

    def _apply_command(self, seq: int, cmd: dict):
        kind = cmd["kind"]
        if kind == "report":
            if self.ended:
                self._log("report_rejected_closed", cls=cmd.get("class"))
                return
            outcome = submit_report(self.ledger, cmd["class"], cmd["position"], self.now)
            self.base_store.append("command_ack", {"command": "report", "seq": seq,
                                                   "outcome": outcome}, self.now)
            self._log("report", cls=cmd["class"],
                      position=[float(v) for v in cmd["position"]],
                      outcome=outcome, points=self.ledger.points,
                      remaining=self.ledger.remaining)
            return
        rid = cmd.get("robot")
        if rid not in self.robots:
            self._log("command_rejected", command=kind, reason=f"unknown robot {rid!r}")
            return
        rt = self.robots[rid]
        if kind in ("explore", "waypoint", "force_follow", "home", "estop"):
            rt.follower = None
            rt.goal = None
            rt.force_plan = True
            if kind == "explore":
                rt.state.mode = "explore"
            elif kind == "estop":
                rt.state.mode = "estopped"
            elif kind == "home":
                rt.state.mode = "homing"
            else:
                rt.state.mode = kind
                rt.command_target = np.asarray(cmd["position"], dtype=np.float64)
            if rt.state.flipper is not None and "stair_mode" in cmd:
                rt.state.flipper.stair_mode = bool(cmd["stair_mode"])
        elif kind == "watchdog":
            rt.state.watchdog_enabled = bool(cmd["enabled"])
        elif kind == "drop_relay":
            try:
                node = self.net.drop_relay(rid, cmd["tier"])
                self._log("relay_dropped", robot=rid, node=node.id)
            except Exception as e:
                self._log("command_rejected", command=kind, reason=str(e))
                return
        else:
            self._log("command_rejected", command=kind, reason="unknown command")
            return
        rt.store.append("command_ack", {"command": kind, "seq": seq}, self.now)
        self._log("command", robot=rid, command=kind)

    # -- failure handling ----------------------------------------------

    def _process_failures(self):
        script = self.config.failures
        while self.failure_cursor < len(script) and \
                script[self.failure_cursor].stamp <= self.now + 1e-9:
            f = script[self.failure_cursor]
            self.failure_cursor += 1
            if f.robot in self.robots:
                self._inject(self.robots[f.robot], f)
        for rid in self.order:
            rt = self.robots[rid]
            due = [s for s in rt.pending_steps if s[0] <= self.now + 1e-9]
            rt.pending_steps = [s for s in rt.pending_steps if s[0] > self.now + 1e-9]
            for _, step, f in due:
                self._recover(rt, step, f)

    def _inject(self, rt: _RobotRuntime, f: FailureEvent):
        self._log("failure_inject", robot=f.robot, failure=f.kind,
                  duration=f.duration, subsystem=f.subsystem)
        if f.kind == "node_crash":
            rt.mapping_down = True
            rt.persisted = {"map": rt.map.to_doc()}
        elif f.kind == "sensor_fail":
            rt.sensor_down = True
        elif f.kind == "motor_reset":
            rt.motor_down = True
            rt.follower = None
            fsm = rt.state.flipper
            if fsm is not None and fsm.state != NEUTRAL:
                self._log("flipper_torque_loss", robot=f.robot, state=fsm.state)
                fsm.state = NEUTRAL
        elif f.kind == "comms_out":
            self.net.nodes[f.robot].powered = False
        elif f.kind == "computer_reboot":
            rt.persisted = {
                "map": rt.map.to_doc(),
                "hyp": rt.hyp.to_doc(),
                "store": rt.store.snapshot(),
                "accumulated": rt.state.drift.accumulated.copy(),
                "heading_error": rt.state.drift.heading_error,
                "mode": rt.state.mode,
            }
            rt.offline = True
            rt.follower = None
            rt.state.mode = "failed"
            self.net.nodes[f.robot].powered = False
        for offset, step in restart_policy(rt.state.platform, f):
            rt.pending_steps.append((f.stamp + offset, step, f))
        rt.pending_steps.sort(key=lambda s: s[0])

    def _recover(self, rt: _RobotRuntime, step: str, f: FailureEvent):
        rid = rt.state.id
        if step == "restore_subsystem":
            rt.map = NavMap.from_doc(rt.persisted["map"])
            rt.mapping_down = False
            rt.force_plan = True
        elif step == "restore_sensor":
            rt.sensor_down = False
        elif step == "restore_motor":
            rt.motor_down = False
            rt.force_plan = True
        elif step == "restore_comms":
            self.net.nodes[rid].powered = True
        elif step == "power_on":
            self.net.nodes[rid].powered = True
        elif step == "restore_software":
            p = rt.persisted
            rt.map = NavMap.from_doc(p["map"])
            rt.hyp = HypothesisSet.from_doc(p["hyp"])
            rt.store = RecordStore.restore(rid, p["store"])
            rt.state.drift.accumulated = p["accumulated"].copy()
            rt.state.drift.heading_error = p["heading_error"]
        elif step == "resume_autonomy":
            rt.offline = False
            rt.state.mode = rt.persisted["mode"]
            rt.force_plan = True
        self._log("failure_recover", robot=rid, failure=f.kind, step=step)

    # -- per-robot sub-steps -------------------------------------------

    def _sensor_pose(self, pose: Pose) -> Pose:
        return Pose(pose.position + np.array([0.0, 0.0, SENSOR_HEIGHT]), pose.yaw)

    def _sense(self, rt: _RobotRuntime):
        if rt.sensor_down or rt.mapping_down:
            return
        w = self.world
        st = rt.state
        true_sensor = self._sensor_pose(st.true_pose)
        dirs = self._dirs_body @ _rot_z(st.true_pose.yaw).T
        origin_g = w.to_grid(true_sensor.position)
        ranges_g = kernels.raycast_batch(w._occ_u8, origin_g, dirs, SCAN_RANGE / w.resolution)
        ranges_g = np.asarray(ranges_g)
        # truth-side record of what the sensor swept, for completeness metrics
        kernels.integrate_rays(self.truth_state, self.truth_counts, origin_g,
                               dirs, ranges_g, SCAN_RANGE / w.resolution)
        err = st.drift.heading_error
        dirs_est = dirs if abs(err) < 1e-12 else dirs @ _rot_z(err).T
        ranges_m = ranges_g * w.resolution
        est_sensor = self._sensor_pose(st.estimated_pose)
        integrate_scan(rt.map, est_sensor, dirs_est, ranges_m, SCAN_RANGE)
        mark_covered(rt.coverage, rt.map, st.estimated_pose)

    def _detect(self, rt: _RobotRuntime):
        if rt.offline:
            return
        st = rt.state
        model = rt.model_degraded if rt.sensor_down else rt.model
        true_sensor = self._sensor_pose(st.true_pose)
        dets = simulate_detections(self.world, true_sensor, model, rt.rng_detect,
                                   robot=st.id, stamp=self.now, dt=self.DETECT_PERIOD)
        est_sensor = self._sensor_pose(st.estimated_pose)
        for d in dets:
            hypothesis_update(rt.hyp, d, est_sensor)
        for h in confirm(rt.hyp):
            rec = confirmed_record(st.id, h, self.now)
            rt.store.append("detection", rec, self.now)
            self._log("hypothesis_confirmed", robot=st.id, cls=h.cls,
                      position=[round(float(v), 3) for v in h.state])

    def _plan(self, rt: _RobotRuntime):
        st = rt.state
        if st.mode not in ("explore", "waypoint", "homing") or rt.motor_down:
            return
        m = rt.map
        k_d = 10.0 if st.platform == "aerial" else None
        platform = None if st.platform == "aerial" else st.platform
        mask, _ = traversability_mask(m, k_d=k_d, platform=platform)
        # ground the robot has already driven over is proven passable no
        # matter how rough the half-observed map makes it look; without
        # this, scan shadows behind the robot can sever its own corridor.
        # Cells that refused entry are banned outright.
        mask |= rt.driven
        mask &= ~rt.banned
        est = st.estimated_pose
        cell = m.cell_of(est.position[:2])
        if 0 <= cell[0] < mask.shape[0] and 0 <= cell[1] < mask.shape[1]:
            mask[cell] = True      # the robot stands here, so it is passable
        rt.field = distance_transform(mask, m.resolution)
        start_f = _field_coords(m, est.position)
        rt.costs, _ = cost_to_go(rt.field, start_f)

        if st.mode == "waypoint":
            target = rt.command_target
        elif st.mode == "homing":
            target = self.world.staging
        else:
            clusters = self._clusters(m, mask, rt.blacklist)
            trails = self._peer_trails(rt)
            if self._keep_goal(rt, clusters):
                return
            pool = clusters
            claimed = self._live_claims(rt)
            if pool and claimed:
                # skip openings a teammate has announced for, unless that
                # would leave nothing to chase
                free = [c for c in pool
                        if min(float(np.linalg.norm(xy - c.centroid[:2]))
                               for xy in claimed) > CLAIM_RADIUS]
                if free:
                    pool = free
            if pool and trails:
                marks = [ExplorationGoal(position=c.centroid, kind="frontier",
                                         score=0.0) for c in pool]
                kept, crowded = filter_visited_by_peers(marks, trails,
                                                        PEER_VISITED_RADIUS)
                if crowded:
                    # every candidate sits in a teammate's wake; chasing
                    # the cheapest would keep the pack together, so break
                    # for the farthest reachable one
                    pts = np.concatenate([np.asarray(t, float)[:, :2]
                                          for t in trails])
                    byfar = sorted(pool, key=lambda c: -float(np.min(
                        np.linalg.norm(pts - c.centroid[None, :2], axis=1))))
                    far = [c for c in byfar if math.isfinite(float(
                        rt.costs[self._rep_cell(m, c)]))]
                    if far:
                        pool = [far[0]]
                else:
                    kept_ids = {id(g) for g in kept}
                    pool = [c for c, g in zip(pool, marks)
                            if id(g) in kept_ids]
            goal = self._elect_biased(rt, m, pool, est)
            if goal is None and pool is not clusters:
                goal = select_frontier_goal(m, clusters, est, rt.field, rt.costs)
            if goal is None:
                goal = select_coverage_goal(rt.coverage, m, rt.field, rt.costs,
                                            exclude=rt.blacklist)
            if goal is None:
                if self.now < 10.0:
                    return      # first scans still landing, keep waiting
                if rt.goal is not None:
                    self._log("exploration_done", robot=st.id)
                st.mode = "homing"
                rt.goal = None
                target = self.world.staging
            else:
                keep = (rt.goal is not None and rt.follower is not None
                        and not rt.follower.done
                        and np.linalg.norm(goal.position[:2] - rt.goal.position[:2]) < 1.0)
                rt.goal = goal
                if st.mode == "explore":
                    # announce right away so teammates planning within the
                    # next few seconds pick somewhere else
                    rt.store.append("status", {
                        "mode": st.mode, "battery": round(st.battery, 4),
                        "odometer": round(st.odometer, 3),
                        "goal": [round(float(v), 2)
                                 for v in goal.position[:2]]}, self.now)
                if keep:
                    return
                target = goal.position

        elev, _ = elevation_layer(m)
        hover = 1.2 if st.platform == "aerial" else BODY_CLEARANCE
        try:
            path = plan_ugv(rt.field, start_f, _field_coords(m, target),
                            elevation=elev, hover=hover)
        except Exception:
            path = None
        if path is None:
            rt.follower = None
            return
        path = _thin_waypoints(smooth_path(path, 5, rt.field), rt.field)
        rt.follower = FollowerState(path=path)

    def _keep_goal(self, rt: _RobotRuntime, clusters) -> bool:
        """A transit in progress keeps its goal while frontier remains
        near it. Re-electing mid-drive lets every map update yank the
        whole fleet toward the same cheapest opening, and the u-turns
        burn the mission clock on ground already swept. The hold yields
        when a lower-id teammate announces the same area, so exactly one
        of a colliding pair backs off."""
        if (rt.goal is None or rt.goal.cell is None or rt.follower is None
                or rt.follower.done or not clusters):
            return False
        gx, gy = (float(v) for v in rt.goal.position[:2])
        for origin, (stamp, xy) in rt.claims.items():
            if (xy is not None and origin < rt.state.id
                    and self.now - stamp <= CLAIM_TTL
                    and math.hypot(xy[0] - gx, xy[1] - gy) <= CLAIM_RADIUS):
                return False
        gi, gj = rt.goal.cell
        near = GOAL_HOLD_RADIUS / rt.map.resolution
        for c in clusters:
            arr = np.asarray(c.cells, dtype=np.float64)
            if arr.size and float(np.min(
                    np.hypot(arr[:, 0] - gi, arr[:, 1] - gj))) <= near:
                return True
        return False

    @staticmethod
    def _rep_cell(m: NavMap, cluster):
        """Member cell a cluster is judged by, nearest its centroid."""
        cen = cluster.centroid[:2]
        return min(cluster.cells, key=lambda cc: (
            math.dist(tuple(m.cell_center(cc)), tuple(cen)), cc))

    def _elect_biased(self, rt: _RobotRuntime, m: NavMap, pool, est):
        """Cheapest frontier with a per-robot bearing preference.

        Co-located robots hold nearly identical maps and would elect the
        same opening. Charging a few meters per radian between each
        candidate's bearing and the robot's assigned compass direction
        makes the fleet fan out at junctions, while leaving any frontier
        electable once nothing lies the preferred way."""
        if not pool:
            return None
        anchor = np.asarray(self.world.staging[:2], dtype=np.float64)
        cx = m.origin[:2] + np.array(m.shape[:2], np.float64) * (m.resolution / 2.0)
        base = math.atan2(cx[1] - anchor[1], cx[0] - anchor[0])
        want = base + 2.0 * math.pi * rt.index / max(1, len(self.order))
        here = est.position[:2]
        ranked = []
        for c in pool:
            cost = float(rt.costs[self._rep_cell(m, c)])
            if not math.isfinite(cost):
                continue
            v = c.centroid[:2] - here
            off = abs(wrap_angle(math.atan2(v[1], v[0]) - want))
            ranked.append((cost + HEADING_BIAS * off, c.cells[0], c))
        ranked.sort(key=lambda t: (t[0], t[1]))
        for _, _, c in ranked:
            g = select_frontier_goal(m, [c], est, rt.field, rt.costs)
            if g is not None:
                return g
        return select_frontier_goal(m, pool, est, rt.field, rt.costs)

    def _follow(self, rt: _RobotRuntime):
        st = rt.state
        if st.mode in ("idle", "estopped", "failed") or rt.motor_down:
            rt.commanded.append((self.now, 0.0))
            return
        v_max = PLATFORM_SPEED[st.platform]
        est = st.estimated_pose
        lin = ang = 0.0
        if st.mode == "force_follow" and rt.command_target is not None:
            to = rt.command_target[:2] - est.position[:2]
            dist = float(np.linalg.norm(to))
            if dist < ARRIVE_RADIUS:
                st.mode = "idle"
                rt.command_target = None
                self._log("arrived", robot=st.id)
            else:
                err = wrap_angle(math.atan2(to[1], to[0]) - est.yaw)
                ang = max(-1.5, min(1.5, 2.0 * err))
                lin = 0.0 if abs(err) > math.pi / 2 else min(v_max, dist)
        elif rt.follower is not None and rt.field is not None:
            pose_f = Pose(np.concatenate([_field_coords(rt.map, est.position),
                                          est.position[2:]]), est.yaw)
            # stop radius under one cell: a cell next to a wall reads 0.25 m
            # clearance and must stay drivable, just slowly. Contact with
            # anything truly solid is caught by the motion step instead.
            limits = PlatformLimits(v_max=v_max, w_max=1.5,
                                    safety_radius=0.5 * rt.map.resolution)
            rt.follower = follow_step(rt.follower, pose_f, rt.field, self.dt,
                                      limits, capture_radius=0.3, k_wp=2.0)
            lin, ang = rt.follower.commanded
            if rt.follower.done:
                rt.follower = None
                if st.mode == "waypoint":
                    st.mode = "idle"
                    self._log("arrived", robot=st.id)
                elif st.mode == "homing":
                    st.mode = "idle"
                    self._log("homed", robot=st.id)
                elif rt.goal is not None:
                    # arriving must not re-elect the same goal forever; if
                    # standing here resolves it the ban costs nothing
                    rt.blacklist.add(rt.goal.cell)

        fsm = st.flipper
        if fsm is not None and not fsm.turn_allowed:
            ang = 0.0
        lin = min(lin, v_max)
        rt.max_cmd = max(rt.max_cmd, lin)
        rt.commanded.append((self.now, lin))
        self._move(rt, lin, ang)

    def _move(self, rt: _RobotRuntime, lin: float, ang: float):
        w = self.world
        st = rt.state
        pose = st.true_pose
        old = pose.position.copy()
        pose.yaw = wrap_angle(pose.yaw + ang * self.dt)
        if lin > 0.0:
            step = pose.heading()[:2] * lin * self.dt
            here = pose.position[:2]
            ground_here = self._ground_at(here, pose.position[2])

            def admit(new_xy):
                if st.platform == "aerial":
                    z = pose.position[2]
                    if rt.follower is not None:
                        wp = rt.follower.path.waypoints[rt.follower.index]
                        z = wp[2]
                    cand = np.array([new_xy[0], new_xy[1], z])
                    return cand if w.is_free(cand) else None
                ground_new = self._ground_at(new_xy, pose.position[2])
                if abs(ground_new - ground_here) > CLIMB_LIMIT[st.platform]:
                    return None
                cand = np.array([new_xy[0], new_xy[1], ground_new + BODY_CLEARANCE])
                return cand if w.is_free(cand) else None

            target = admit(here + step)
            if target is None and abs(step[0]) > 1e-12 and abs(step[1]) > 1e-12:
                # pressed on a face at a shallow angle: drop the component
                # into the wall and keep the rest, or the chassis stalls a
                # hair short of the boundary every tick
                trials = [np.array([step[0], 0.0]), np.array([0.0, step[1]])]
                if abs(step[1]) > abs(step[0]):
                    trials.reverse()
                for s in trials:
                    target = admit(here + s)
                    if target is not None:
                        break
            if target is not None:
                pose.position = target
                rt.blocked = 0
            else:
                rt.blocked += 1
                if rt.blocked >= 5:
                    self._mark_bump(rt, here + step)
                    rt.blocked = 0
                    rt.follower = None
                    rt.force_plan = True
        delta = pose.position - old
        dist = float(np.linalg.norm(delta))
        st.odometer += dist
        apply_drift(st.drift, delta, rt.rng_motion)
        st.battery = max(0.0, st.battery - self.dt / 7200.0 - dist / 4000.0)
        self._update_attitude(rt)
        dc = rt.map.cell_of(st.estimated_pose.position[:2])
        if 0 <= dc[0] < rt.driven.shape[0] and 0 <= dc[1] < rt.driven.shape[1]:
            rt.driven[dc] = True
        rt.history.append((self.now, st.estimated_pose.position.copy()))
        if len(rt.history) > 200:
            del rt.history[:100]
        if len(rt.commanded) > 200:
            del rt.commanded[:100]

    def _mark_bump(self, rt: _RobotRuntime, blocked_xy):
        """The step toward this spot was refused by the terrain; ban its
        cell so plans stop routing through it. The ban outranks the
        driven-ground override, or a once-crossed ledge would flip back
        to passable and the robot would ram it forever."""
        m = rt.map
        st = rt.state
        est_xy = st.estimated_pose.position[:2] + (
            np.asarray(blocked_xy) - st.true_pose.position[:2])
        i, j = m.cell_of(est_xy)
        if (i, j) == m.cell_of(st.estimated_pose.position[:2]):
            # refusal right at the cell boundary rounds into the cell the
            # robot stands on; the obstruction is the next one over
            i, j = m.cell_of(st.estimated_pose.position[:2]
                             + st.estimated_pose.heading()[:2] * m.resolution)
        if 0 <= i < m.shape[0] and 0 <= j < m.shape[1]:
            rt.banned[i, j] = True
            g = m.to_grid(st.estimated_pose.position)
            k = min(max(int(g[2]), 0), m.shape[2] - 1)
            m.state[i, j, k] = kernels.OCCUPIED
            m.counts[i, j, k] += 1
            m._dirty_boxes.append((i, i + 1, j, j + 1))
            m._version += 1
        self._log("bump", robot=st.id)

    def _peer_trails(self, rt: _RobotRuntime):
        """Where teammates have already driven, as far as this robot's
        replicated records know. Scans only store entries that arrived
        since the last call; a shrunken store (restore) resets the fold."""
        recs = rt.store.records
        if len(recs) < rt.trail_scan:
            rt.trails = {}
            rt.claims = {}
            rt.trail_scan = 0
        if len(recs) > rt.trail_scan:
            own = rt.state.id
            for rec in itertools.islice(recs.values(), rt.trail_scan, None):
                if rec.origin == own:
                    continue
                if rec.kind == "pose_history":
                    rt.trails.setdefault(rec.origin, []).append(
                        rec.payload["position"])
                elif rec.kind == "status":
                    # replication may fold records out of stamp order
                    held = rt.claims.get(rec.origin)
                    if held is None or rec.stamp >= held[0]:
                        rt.claims[rec.origin] = (rec.stamp,
                                                 rec.payload.get("goal"))
            rt.trail_scan = len(recs)
        return [t for t in rt.trails.values() if t]

    def _live_claims(self, rt: _RobotRuntime):
        """Goal positions teammates have recently announced."""
        return [np.asarray(xy, dtype=np.float64)
                for stamp, xy in rt.claims.values()
                if xy is not None and self.now - stamp <= CLAIM_TTL]

    def _clusters(self, m: NavMap, mask, exclude=frozenset()):
        """Frontier clusters worth traveling to.

        Columns solid in every observation are wall faces that can never
        turn into ground, so cells whose only unresolved neighbors are
        wall faces come out, as do cells the robot already stood on
        without learning anything."""
        opaque = ((m.state == kernels.OCCUPIED).any(axis=2)
                  & ~(m.state == kernels.FREE).any(axis=2))
        dark = ~m._elev_known & ~opaque
        near = ndimage.binary_dilation(dark, structure=np.ones((3, 3), bool))
        cells = [c for c in extract_frontiers(m, mask)
                 if near[c] and c not in exclude]
        return cluster_frontiers(m, cells, linkage_radius=3.0 * m.resolution)

    def _flipper(self, rt: _RobotRuntime):
        st = rt.state
        fsm = st.flipper
        if fsm is None or rt.offline:
            return
        moving = bool(rt.commanded and rt.commanded[-1][1] > 0.05)
        p = st.true_pose.position
        h = st.true_pose.heading()[:2]
        spacing = 0.1
        z = p[2] - BODY_CLEARANCE
        reach = CLIMB_LIMIT[st.platform] + 0.05
        samples = np.array([self._support_at(p[:2] + h * (k * spacing), z, reach)
                            for k in range(9)])
        profile = TerrainProfile(samples=samples, spacing=spacing)
        before = fsm.state
        flipper_step(fsm, profile, moving)
        if fsm.state != before:
            self._log("flipper", robot=st.id, state=fsm.state)

    def _update_attitude(self, rt: _RobotRuntime):
        w = self.world
        st = rt.state
        if st.platform == "aerial":
            st.pitch = st.roll = 0.0
            return
        p = st.true_pose.position[:2]
        z = st.true_pose.position[2] - BODY_CLEARANCE
        h = st.true_pose.heading()[:2]
        left = np.array([-h[1], h[0]])
        reach = min(CLIMB_LIMIT[st.platform], 0.45)
        dz_f = (self._support_at(p + h * 0.3, z, reach)
                - self._support_at(p - h * 0.3, z, reach))
        dz_l = (self._support_at(p + left * 0.3, z, reach)
                - self._support_at(p - left * 0.3, z, reach))
        st.pitch = math.atan2(dz_f, 0.6)
        st.roll = math.atan2(dz_l, 0.6)

    def _watchdog(self, rt: _RobotRuntime):
        st = rt.state
        if rt.offline or st.mode in ("estopped", "failed"):
            return
        actions = watchdog_step(st)
        if not actions:
            return
        self._log("watchdog", robot=st.id, actions=list(actions))
        if "estop" in actions:
            st.mode = "estopped"
            rt.follower = None
        elif "stop" in actions:
            rt.follower = None
            rt.force_plan = True
            if "flipper_assist" in actions and st.flipper is not None:
                st.flipper.state = CLIMB_FRONT

    def _check_stuck(self, rt: _RobotRuntime):
        st = rt.state
        if st.mode not in ("explore", "waypoint", "homing"):
            return
        try:
            verdict = detect_stuck(rt.history, 6.0, rt.commanded,
                                   PLATFORM_SPEED[st.platform])
        except Exception:
            return
        if verdict == "stuck":
            self._log("stuck", robot=st.id)
            rt.follower = None
            rt.force_plan = True
        elif verdict == "mislocalized":
            self._log("mislocalized", robot=st.id)

    # -- fleet-wide sub-steps ------------------------------------------

    def _comms(self):
        for rid in self.order:
            rt = self.robots[rid]
            node = self.net.nodes[rid]
            node.position = rt.state.true_pose.position.copy()
            if rt.offline or not node.powered:
                continue
            self._beacon_seq[rid] += 1
            word = comms.encode_pose_beacon(rt.index, rt.state.estimated_pose.position,
                                            rt.state.estimated_pose.yaw)
            self.tables[rid].offer(comms.Beacon(rid, self._beacon_seq[rid], word))
        comms.mote_beacon_exchange(self.net, self.tables, self.now)

    def _sync(self):
        for rid in self.order:
            rt = self.robots[rid]
            if rt.offline:
                continue
            est = rt.state.estimated_pose
            # records keep accumulating locally even with the radio dark;
            # they drain to base once a route comes back
            rt.store.append("pose_history",
                            {"position": [round(float(v), 3) for v in est.position],
                             "yaw": round(float(est.yaw), 4)}, self.now)
            if not self.net.nodes[rid].powered:
                continue
            reachable = any(self.net.route("base", rid, tier) is not None
                            for tier in ("wifi", "mesh"))
            if reachable:
                anti_entropy_session(self.base_store, rt.store, limit=64)
        # robots also reconcile pairwise whenever a route exists, so peer
        # trails stay fresh deep in the course where the base is dark
        live = [r for r in self.order
                if not self.robots[r].offline and self.net.nodes[r].powered]
        for a, b in itertools.combinations(live, 2):
            if any(self.net.route(a, b, tier) is not None
                   for tier in ("wifi", "mesh")):
                anti_entropy_session(self.robots[a].store,
                                     self.robots[b].store, limit=64)

    def _status(self):
        for rid in self.order:
            rt = self.robots[rid]
            st = rt.state
            if not rt.offline:
                body = {"mode": st.mode, "battery": round(st.battery, 4),
                        "odometer": round(st.odometer, 3)}
                if st.mode == "explore" and rt.goal is not None:
                    # keep the announced goal fresh while committed to it
                    body["goal"] = [round(float(v), 2)
                                    for v in rt.goal.position[:2]]
                rt.store.append("status", body, self.now)
            self._log("robot_status", robot=rid, mode=st.mode,
                      position=[round(float(v), 3) for v in st.true_pose.position],
                      estimated=[round(float(v), 3) for v in st.estimated_pose.position],
                      odometer=round(st.odometer, 3),
                      battery=round(st.battery, 4), points=self.ledger.points)

    # -- main loop -----------------------------------------------------

    def tick(self):
        if not self.ended and self.now >= self.config.duration:
            self.ended = True
            for rid in self.order:
                self.robots[rid].state.mode = "estopped"
                self.robots[rid].follower = None
            self._log("mission_end", points=self.ledger.points,
                      score=list(final_score(self.ledger,
                                             [self.robots[r].state for r in self.order])))
        self._process_failures()
        self._process_commands()
        for rid in self.order:
            rt = self.robots[rid]
            if rt.offline:
                continue
            if self._every(self.SENSE_PERIOD):
                self._sense(rt)
            if self._every(self.DETECT_PERIOD):
                self._detect(rt)
            if self._every(self.PLAN_PERIOD, phase=rt.index * 7) or rt.force_plan:
                rt.force_plan = False
                self._plan(rt)
            self._follow(rt)
            self._flipper(rt)
            self._watchdog(rt)
            if self._every(2.0, phase=3):
                self._check_stuck(rt)
        if self._every(self.COMMS_PERIOD):
            self._comms()
            self._sync()
        if self._every(self.STATUS_PERIOD):
            self._status()
        self.tick_no += 1

    def run(self, until: float = None):
        """Advance to the given sim time, default one tick past duration."""
        stop = self.config.duration if until is None else until
        while self.now <= stop + 1e-9:
            self.tick()
        return self

    # -- metrics -------------------------------------------------------

    def observed_fraction(self) -> float:
        """Share of reachable free voxels swept by any robot's sensor."""
        seen = self.truth_state != kernels.UNKNOWN
        total = int(self.reachable.sum())
        return float((seen & self.reachable).sum()) / total if total else 0.0

    def coverage_fraction(self) -> float:
        """Share of ground cells with a known height that some camera has
        covered, fleet-wide."""
        known = np.zeros(self.world.shape[:2], dtype=bool)
        covered = np.zeros_like(known)
        for rid in self.order:
            rt = self.robots[rid]
            _, k = elevation_layer(rt.map)
            known |= k
            covered |= rt.coverage.seen
        total = int(known.sum())
        return float((covered & known).sum()) / total if total else 0.0

    def write_log(self, path):
        with open(path, "w") as fp:
            for e in self.events:
                fp.write(json.dumps(e, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# replay


def replay_score(events) -> ScoreLedger:
    """Rebuild the ledger from a run log: the header fixes the truth list
    and limits, then every report event is re-judged in order."""
    from .world import ArtifactTruth
    header = None
    for e in events:
        if e["kind"] == "run_header":
            header = e
            break
    if header is None:
        raise SchemaError("log has no run header")
    truths = [ArtifactTruth(a["class"], np.asarray(a["position"]))
              for a in header["artifacts"]]
    ledger = ScoreLedger(truths, header["budget"], header["radius"])
    for e in events:
        if e["kind"] == "report":
            submit_report(ledger, e["cls"], e["position"], e["t"])
    return ledger


def read_log(path):
    with open(path) as fp:
        return [json.loads(line) for line in fp if line.strip()]

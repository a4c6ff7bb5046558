"""Artifact perception and fusion.

A stochastic camera emits ranged detections of visible artifacts plus a
Poisson stream of false positives. Per-robot hypothesis sets fuse
detections with a static-target Kalman filter behind a Mahalanobis gate;
bearings without depth are buffered and promoted through ray
triangulation. Confirmed hypotheses become replication records exactly
once. Radio and gas artifacts get their own estimators: weighted
trilateration over RSSI samples and a concentration-weighted centroid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import WorldModel, ARTIFACT_CLASSES, raycast

P_TP = 0.7
SIGMA_FRAC = 0.1           # position noise is this fraction of range
RECOGNITION_RANGE = 10.0
GATE = 3.0                 # Mahalanobis, in standard deviations
THETA_COV = 1.0            # covariance trace ceiling for confirmation, m^2
N_MIN = 3
INFLATION = 1e-4           # per-update covariance floor against overconfidence
SIGMA_FLOOR = 1e-3

# tuned for roughly 50 raw false positives per four-robot hour
FP_RATE = 50.0 / (4 * 3600.0)

P0_DBM = -40.0             # received power at 1 m
PATH_EXPONENT = 2.2
AMBIENT_PPM = 400.0
ELEVATED_PPM = 1000.0


@dataclass(frozen=True)
class DetectorModel:
    half_angle: float = math.pi
    range: float = RECOGNITION_RANGE
    p_tp: float = P_TP
    sigma_frac: float = SIGMA_FRAC
    fp_rate: float = FP_RATE
    # the simulated rig always has lidar depth for its detections; the
    # bearing path serves payloads without it
    bearing_fraction: float = 0.0


@dataclass(frozen=True)
class Detection:
    robot: str
    stamp: float
    cls: str
    mode: str                  # ranged | bearing
    value: np.ndarray          # robot-frame point, or robot-frame unit vector
    confidence: float
    snapshot_ref: str

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        object.__setattr__(self, "value", v)
        if self.mode == "ranged":
            if not np.all(np.isfinite(v)):
                raise ValueError("ranged detection needs a finite point")
        elif self.mode == "bearing":
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise ValueError("bearing detection needs a unit vector")
        else:
            raise ValueError(f"unknown detection mode {self.mode!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0,1]")


@dataclass
class Hypothesis:
    id: int
    cls: str
    state: np.ndarray
    cov: np.ndarray
    count: int = 1
    status: str = "tentative"      # tentative | confirmed
    snapshot_ref: str = ""


@dataclass(frozen=True)
class RssiSample:
    position: np.ndarray
    rssi: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        object.__setattr__(self, "position", p)
        if not (np.all(np.isfinite(p)) and np.isfinite(self.rssi)):
            raise ValueError("sample must be finite")


@dataclass(frozen=True)
class GasSample:
    position: np.ndarray
    ppm: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        object.__setattr__(self, "position", p)
        if self.ppm < 0:
            raise ValueError("ppm must be non-negative")


def _yaw_matrix(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# camera simulation


def _visible(w: WorldModel, eye, target, model: DetectorModel, heading):
    d = np.asarray(target) - eye
    dist = float(np.linalg.norm(d))
    if dist < 1e-9 or dist > model.range:
        return None
    d = d / dist
    if model.half_angle < math.pi:
        cosang = float(np.dot(d, heading))
        if math.acos(max(-1.0, min(1.0, cosang))) > model.half_angle:
            return None
    hit = raycast(w, eye, d, max_range=dist)
    # the artifact sits against a surface; a hit at its own voxel is fine
    if hit is not None and hit < dist - w.resolution:
        return None
    return dist


def simulate_detections(w: WorldModel, true_pose, model: DetectorModel, rng,
                        robot: str = "", stamp: float = 0.0, dt: float = 1.0):
    """One camera frame. Visible artifacts fire with probability p_tp and
    ranged noise sigma_frac * range; false positives arrive as a Poisson
    process at fp_rate per second. All values are in the robot frame."""
    eye = np.asarray(true_pose.position, dtype=np.float64)
    R = _yaw_matrix(true_pose.yaw)
    heading = R[:, 0]
    out = []
    k = 0
    for art in w.artifacts:
        dist = _visible(w, eye, art.position, model, heading)
        if dist is None or rng.random() >= model.p_tp:
            continue
        sigma = model.sigma_frac * dist
        noisy = np.asarray(art.position) + rng.normal(0.0, sigma, size=3)
        local = R.T @ (noisy - eye)
        ref = f"{robot}:{stamp:.1f}:{k}"
        k += 1
        if rng.random() < model.bearing_fraction:
            n = np.linalg.norm(local)
            if n < 1e-9:
                continue
            out.append(Detection(robot, stamp, art.cls, "bearing", local / n,
                                 float(rng.uniform(0.5, 1.0)), ref))
        else:
            out.append(Detection(robot, stamp, art.cls, "ranged", local,
                                 float(rng.uniform(0.5, 1.0)), ref))
    for _ in range(rng.poisson(model.fp_rate * dt)):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r = rng.uniform(1.0, model.range)
        local = R.T @ (d * r)
        out.append(Detection(robot, stamp, ARTIFACT_CLASSES[rng.integers(len(ARTIFACT_CLASSES))],
                             "ranged", local, float(rng.uniform(0.3, 0.9)),
                             f"{robot}:{stamp:.1f}:fp{k}"))
        k += 1
    return out


# ---------------------------------------------------------------------------
# triangulation


def triangulate(bearings, cond_limit: float = 1e6):
    """Point minimizing summed squared distance to the rays, via the
    normal equations of sum (I - d d^T). None when the geometry is too
    close to parallel to pin a point down."""
    if len(bearings) < 2:
        raise ValueError("need at least two bearings")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for origin, d in bearings:
        d = np.asarray(d, dtype=np.float64)
        d = d / np.linalg.norm(d)
        M = np.eye(3) - np.outer(d, d)
        A += M
        b += M @ np.asarray(origin, dtype=np.float64)
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= 0 or ev[-1] / ev[0] > cond_limit:
        return None
    return np.linalg.solve(A, b)


# ---------------------------------------------------------------------------
# hypothesis management


class HypothesisSet:
    """Per-robot fusion state, updated sequentially in the robot tick."""

    def __init__(self, robot: str = "", gate: float = GATE,
                 theta_cov: float = THETA_COV, n_min: int = N_MIN,
                 inflation: float = INFLATION, sigma_frac: float = SIGMA_FRAC):
        self.robot = robot
        self.gate = gate
        self.theta_cov = theta_cov
        self.n_min = n_min
        self.inflation = inflation
        self.sigma_frac = sigma_frac
        self.hypotheses = []
        self._next_id = 1
        self._bearing_buffer = {}        # class -> list of (origin, direction)
        self._emitted = set()

    def to_doc(self):
        return {
            "robot": self.robot,
            "next_id": self._next_id,
            "emitted": sorted(self._emitted),
            "hypotheses": [{
                "id": h.id, "cls": h.cls,
                "state": [float(x) for x in h.state],
                "cov": [[float(x) for x in row] for row in h.cov],
                "count": h.count, "status": h.status,
                "snapshot_ref": h.snapshot_ref,
            } for h in self.hypotheses],
        }

    @classmethod
    def from_doc(cls, doc, **kwargs):
        hs = cls(robot=doc["robot"], **kwargs)
        hs._next_id = doc["next_id"]
        hs._emitted = set(doc["emitted"])
        hs.hypotheses = [Hypothesis(id=d["id"], cls=d["cls"],
                                    state=np.array(d["state"]),
                                    cov=np.array(d["cov"]),
                                    count=d["count"], status=d["status"],
                                    snapshot_ref=d["snapshot_ref"])
                         for d in doc["hypotheses"]]
        return hs


def _measurement_sigma(hset: HypothesisSet, rng_dist: float) -> float:
    return max(hset.sigma_frac * rng_dist, SIGMA_FLOOR)


def _fuse_point(hset: HypothesisSet, cls: str, z, sigma: float, snapshot_ref: str):
    Rm = (sigma * sigma) * np.eye(3)
    best = None
    for h in hset.hypotheses:
        if h.cls != cls:
            continue
        S = h.cov + Rm
        innov = z - h.state
        d2 = float(innov @ np.linalg.solve(S, innov))
        if d2 <= hset.gate ** 2 and (best is None or d2 < best[0]):
            best = (d2, h)
    if best is None:
        h = Hypothesis(id=hset._next_id, cls=cls, state=np.asarray(z, dtype=np.float64),
                       cov=Rm.copy(), snapshot_ref=snapshot_ref)
        hset._next_id += 1
        hset.hypotheses.append(h)
        return h
    _, h = best
    S = h.cov + Rm
    K = h.cov @ np.linalg.inv(S)
    h.state = h.state + K @ (z - h.state)
    h.cov = (np.eye(3) - K) @ h.cov
    if hset.inflation:
        h.cov = h.cov + hset.inflation * np.eye(3)
    h.count += 1
    h.snapshot_ref = snapshot_ref or h.snapshot_ref
    return h


def hypothesis_update(hset: HypothesisSet, d: Detection, pose_estimate):
    """Fold one detection into the set. Ranged measurements go straight
    to the gated Kalman update; bearings accumulate per class until
    triangulation pins a point, which is then fused like a ranged one."""
    pos = np.asarray(pose_estimate.position, dtype=np.float64)
    if not np.all(np.isfinite(pos)):
        raise ValueError("pose estimate must be finite")
    R = _yaw_matrix(pose_estimate.yaw)
    if d.mode == "ranged":
        z = pos + R @ d.value
        sigma = _measurement_sigma(hset, float(np.linalg.norm(d.value)))
        _fuse_point(hset, d.cls, z, sigma, d.snapshot_ref)
    else:
        ray = (pos, R @ d.value)
        buf = hset._bearing_buffer.setdefault(d.cls, [])
        buf.append(ray)
        if len(buf) >= 2:
            point = triangulate(buf)
            if point is not None:
                dist = float(np.mean([np.linalg.norm(point - o) for o, _ in buf]))
                _fuse_point(hset, d.cls, point, _measurement_sigma(hset, dist),
                            d.snapshot_ref)
                buf.clear()
    return hset


def confirm(hset: HypothesisSet):
    """Promote hypotheses that meet both certainty thresholds. Each
    promotion is returned exactly once across repeated calls."""
    fresh = []
    for h in hset.hypotheses:
        if h.status != "tentative":
            continue
        if h.count >= hset.n_min and float(np.trace(h.cov)) <= hset.theta_cov:
            h.status = "confirmed"
            if h.id not in hset._emitted:
                hset._emitted.add(h.id)
                fresh.append(h)
    return fresh


def confirmed_record(robot: str, h: Hypothesis, stamp: float):
    """Replication payload; field order is fixed so serialized bytes are
    stable across runs."""
    return {
        "robot": robot,
        "hyp_id": h.id,
        "class": h.cls,
        "position": [float(x) for x in h.state],
        "covariance_trace": float(np.trace(h.cov)),
        "count": h.count,
        "stamp": stamp,
        "snapshot_ref": h.snapshot_ref,
    }


# ---------------------------------------------------------------------------
# radio and gas estimators


def rssi_at(distance: float, p0: float = P0_DBM, n: float = PATH_EXPONENT) -> float:
    """Log-distance model, the inverse of the trilateration range."""
    return p0 - 10.0 * n * math.log10(max(distance, 1e-6))


def wifi_trilaterate(samples, p0: float = P0_DBM, n: float = PATH_EXPONENT):
    """Weighted least squares over range circles in the horizontal plane,
    weights proportional to linear received power. The vertical estimate
    is the weighted receiver height. None for collinear receivers."""
    if len(samples) < 3:
        raise ValueError("need at least three samples")
    pts = np.array([s.position for s in samples], dtype=np.float64)
    rssi = np.array([s.rssi for s in samples], dtype=np.float64)
    ranges = 10.0 ** ((p0 - rssi) / (10.0 * n))
    weights = 10.0 ** (rssi / 10.0)
    weights = weights / weights.max()

    # subtract the strongest sample's circle equation to linearize
    ref = int(np.argmax(rssi))
    rows, rhs, wts = [], [], []
    for j in range(len(samples)):
        if j == ref:
            continue
        rows.append(2.0 * (pts[j, :2] - pts[ref, :2]))
        rhs.append((pts[j, :2] @ pts[j, :2]) - (pts[ref, :2] @ pts[ref, :2])
                   - (ranges[j] ** 2 - ranges[ref] ** 2))
        wts.append(min(weights[j], weights[ref]))
    A = np.asarray(rows)
    b = np.asarray(rhs)
    W = np.asarray(wts)
    AtWA = A.T @ (A * W[:, None])
    if np.linalg.matrix_rank(AtWA, tol=1e-9) < 2:
        return None
    xy = np.linalg.solve(AtWA, A.T @ (W * b))
    z = float(np.average(pts[:, 2], weights=weights))
    est = np.array([xy[0], xy[1], z])
    resid = np.abs(np.linalg.norm(pts[:, :2] - xy[None, :], axis=1) - ranges)
    return est, float(np.sqrt(np.average(resid ** 2, weights=weights)))


def gas_peak(samples, elevated: float = ELEVATED_PPM):
    """Concentration-weighted centroid of elevated readings. None when
    nothing rises above the threshold. With two separated sources the
    centroid lands between them; callers get one guess, not a map."""
    if len(samples) < 5:
        raise ValueError("need at least five samples")
    pts = np.array([s.position for s in samples], dtype=np.float64)
    ppm = np.array([s.ppm for s in samples], dtype=np.float64)
    hot = ppm > elevated
    if not hot.any():
        return None
    return np.average(pts[hot], axis=0, weights=ppm[hot])

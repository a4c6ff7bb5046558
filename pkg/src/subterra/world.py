"""Ground-truth environment: voxel occupancy, elevation, artifacts, raycasting,
and procedural tunnel/urban/cave generation.

Worlds are immutable after load/generate. The document format is JSON with a
run-length encoded occupancy lattice; see docs/FORMATS.md for the byte-exact
layout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ArtifactInWallError, OriginInSolidError, SchemaError
from .geom import Pose

WORLD_SCHEMA_VERSION = 1

ARTIFACT_CLASSES = (
    "Backpack",
    "Survivor",
    "Cellphone",
    "Drill",
    "Extinguisher",
    "Vent",
    "CO2",
    "Rope",
    "Helmet",
)

DEFAULT_RESOLUTION = 0.25
# dB per meter traversed through solid voxels; one ~1 m wall kills wifi
# margin but not the long-range tier.
DEFAULT_ATTENUATION = 30.0
HEADROOM_M = 2.0


@dataclass(frozen=True)
class ArtifactTruth:
    cls: str
    position: np.ndarray
    emits_wifi: bool = False
    emits_gas: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        if self.cls not in ARTIFACT_CLASSES:
            raise SchemaError(f"unknown artifact class {self.cls!r}")


@dataclass(frozen=True)
class TerrainProfile:
    """Ground heights sampled along a heading at fixed spacing."""

    samples: np.ndarray
    spacing: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if len(self.samples) < 2:
            raise ValueError("profile needs at least 2 samples")


class WorldModel:
    """Immutable voxel world. Voxel (i,j,k) spans
    frame_origin + res*[i,i+1) x [j,j+1) x [k,k+1)."""

    def __init__(self, resolution, occupancy, frame_origin=(0.0, 0.0, 0.0),
                 artifacts=(), attenuation=DEFAULT_ATTENUATION, generator=None,
                 staging=None):
        if resolution <= 0:
            raise SchemaError("resolution must be positive")
        self.resolution = float(resolution)
        self.occupancy = np.ascontiguousarray(occupancy, dtype=bool)
        self._occ_u8 = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        self.frame_origin = np.asarray(frame_origin, dtype=np.float64)
        self.artifacts = list(artifacts)
        self.attenuation = float(attenuation)
        self.generator = generator
        self.staging = None if staging is None else np.asarray(staging, dtype=np.float64)
        self._elevation = None
        for a in self.artifacts:
            if not self.is_free(a.position):
                raise ArtifactInWallError(f"artifact {a.cls} at {a.position} is inside a wall")
        self.occupancy.setflags(write=False)

    # -- coordinates ---------------------------------------------------

    @property
    def shape(self):
        return self.occupancy.shape

    def to_grid(self, p) -> np.ndarray:
        """World meters -> continuous grid coordinates."""
        return (np.asarray(p, dtype=np.float64) - self.frame_origin) / self.resolution

    def to_world(self, g) -> np.ndarray:
        return np.asarray(g, dtype=np.float64) * self.resolution + self.frame_origin

    def voxel_index(self, p):
        g = np.floor(self.to_grid(p)).astype(int)
        return tuple(g)

    def in_bounds(self, idx) -> bool:
        return all(0 <= idx[d] < self.occupancy.shape[d] for d in range(3))

    def is_free(self, p) -> bool:
        idx = self.voxel_index(p)
        return self.in_bounds(idx) and not self.occupancy[idx]

    # -- elevation -----------------------------------------------------

    @property
    def elevation(self) -> np.ndarray:
        """Ground height per column: top of the highest solid voxel with at
        least HEADROOM_M of non-solid space above (overhangs skipped)."""
        if self._elevation is None:
            self._elevation = self._compute_elevation()
        return self._elevation

    def _compute_elevation(self):
        occ = self.occupancy
        nx, ny, nz = occ.shape
        head = int(math.ceil(HEADROOM_M / self.resolution))
        top_idx = np.full((nx, ny), -1, dtype=np.int32)
        for z in range(nz - 1, -1, -1):
            window = occ[:, :, z + 1:z + 1 + head]
            clear = ~window.any(axis=2) if window.shape[2] else np.ones((nx, ny), bool)
            cand = occ[:, :, z] & clear & (top_idx < 0)
            top_idx[cand] = z
        elev = np.where(top_idx >= 0, (top_idx + 1) * self.resolution, 0.0)
        return elev + self.frame_origin[2]

    def elevation_at(self, xy) -> float:
        g = self.to_grid((xy[0], xy[1], 0.0))
        ix = min(max(int(math.floor(g[0])), 0), self.shape[0] - 1)
        iy = min(max(int(math.floor(g[1])), 0), self.shape[1] - 1)
        return float(self.elevation[ix, iy])


# ---------------------------------------------------------------------------
# document I/O


def _rle_encode(flat: np.ndarray) -> list[int]:
    """Alternating run lengths over the z-fastest flattened lattice,
    starting with the count of empty voxels (possibly 0)."""
    v = flat.astype(np.int8)
    edges = np.flatnonzero(np.diff(v)) + 1
    bounds = np.concatenate(([0], edges, [len(v)]))
    runs = np.diff(bounds).tolist()
    if len(v) and v[0] != 0:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def _rle_decode(runs, n) -> np.ndarray:
    total = sum(runs)
    if total != n:
        raise SchemaError(f"rle runs sum to {total}, lattice has {n} voxels")
    flat = np.zeros(n, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if r < 0:
            raise SchemaError("negative run length")
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return flat


def save_world(w: WorldModel) -> dict:
    doc = {
        "version": WORLD_SCHEMA_VERSION,
        "resolution": w.resolution,
        "origin": [float(x) for x in w.frame_origin],
        "occupancy": {
            "encoding": "rle-z",
            "shape": list(w.occupancy.shape),
            "data": _rle_encode(w.occupancy.reshape(-1)),
        },
        "artifacts": [
            {
                "class": a.cls,
                "pos": [float(x) for x in a.position],
                "emits": {"wifi": a.emits_wifi, "gas": a.emits_gas},
            }
            for a in w.artifacts
        ],
        "attenuation_default": w.attenuation,
    }
    if w.generator is not None:
        doc["generator"] = w.generator
    if w.staging is not None:
        doc["staging"] = [float(x) for x in w.staging]
    return doc


def load_world(source) -> WorldModel:
    """Build a WorldModel from a document dict, JSON string, or file path."""
    if isinstance(source, (str, Path)) :
        p = Path(source)
        if p.exists():
            doc = json.loads(p.read_text())
        else:
            try:
                doc = json.loads(str(source))
            except json.JSONDecodeError as e:
                raise SchemaError(f"world source is neither a file nor JSON: {e}") from e
    elif isinstance(source, dict):
        doc = source
    else:
        raise SchemaError(f"unsupported world source {type(source)!r}")

    try:
        version = doc["version"]
        resolution = float(doc["resolution"])
        origin = doc["origin"]
        occ_doc = doc["occupancy"]
        artifacts_doc = doc["artifacts"]
        attenuation = float(doc.get("attenuation_default", DEFAULT_ATTENUATION))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"malformed world document: {e}") from e
    if version != WORLD_SCHEMA_VERSION:
        raise SchemaError(f"unsupported world version {version}")
    if resolution <= 0:
        raise SchemaError("resolution must be positive")
    if occ_doc.get("encoding") != "rle-z":
        raise SchemaError(f"unsupported occupancy encoding {occ_doc.get('encoding')!r}")
    shape = tuple(int(s) for s in occ_doc["shape"])
    if len(shape) != 3 or any(s <= 0 for s in shape):
        raise SchemaError(f"bad occupancy shape {shape}")
    flat = _rle_decode(occ_doc["data"], int(np.prod(shape)))
    occupancy = flat.reshape(shape)

    artifacts = []
    for a in artifacts_doc:
        emits = a.get("emits", {})
        artifacts.append(ArtifactTruth(
            cls=a["class"],
            position=np.asarray(a["pos"], dtype=np.float64),
            emits_wifi=bool(emits.get("wifi", False)),
            emits_gas=bool(emits.get("gas", False)),
        ))
    return WorldModel(
        resolution=resolution,
        occupancy=occupancy,
        frame_origin=origin,
        artifacts=artifacts,
        attenuation=attenuation,
        generator=doc.get("generator"),
        staging=doc.get("staging"),
    )


# ---------------------------------------------------------------------------
# sensing


def raycast(w: WorldModel, origin, direction, max_range: float):
    """Distance in meters to the first solid voxel boundary, or None."""
    direction = np.asarray(direction, dtype=np.float64)
    n = float(np.linalg.norm(direction))
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"direction must be unit length, |d| = {n}")
    g = w.to_grid(origin)
    idx = tuple(np.floor(g).astype(int))
    if not w.in_bounds(idx) or w.occupancy[idx]:
        raise OriginInSolidError(f"raycast origin {origin} is not in free space")
    t = kernels.raycast(w._occ_u8, float(g[0]), float(g[1]), float(g[2]),
                        float(direction[0]), float(direction[1]), float(direction[2]),
                        max_range / w.resolution)
    if t < 0:
        return None
    return t * w.resolution


def raycast_batch(w: WorldModel, origin, directions, max_range: float) -> np.ndarray:
    """Vectorized raycast for unit directions (N,3); -1 marks no hit.
    Returned distances are in meters."""
    g = w.to_grid(origin)
    idx = tuple(np.floor(g).astype(int))
    if not w.in_bounds(idx) or w.occupancy[idx]:
        raise OriginInSolidError(f"raycast origin {origin} is not in free space")
    t = kernels.raycast_batch(w._occ_u8, g, np.asarray(directions, dtype=np.float64),
                              max_range / w.resolution)
    t = np.asarray(t)
    out = t * w.resolution
    out[t < 0] = -1.0
    return out


def terrain_profile(w: WorldModel, pose: Pose, lookahead: float, spacing: float) -> TerrainProfile:
    """Ground heights sampled along the pose heading every `spacing` meters,
    index 0 at the pose itself."""
    if not w.is_free(pose.position):
        raise OriginInSolidError("profile pose is not in free space")
    n = int(math.floor(lookahead / spacing)) + 1
    h = pose.heading()
    samples = np.empty(n, dtype=np.float64)
    for k in range(n):
        p = pose.position + h * (k * spacing)
        samples[k] = w.elevation_at(p[:2])
    return TerrainProfile(samples=samples, spacing=spacing)


# ---------------------------------------------------------------------------
# procedural generation


def generate_world(seed: int, style: str, extent: float) -> WorldModel:
    """Deterministic world construction. Styles: tunnel, urban, cave."""
    if extent < 20:
        raise ValueError("extent must be at least 20 m")
    rng = np.random.Generator(np.random.PCG64(seed))
    if style == "tunnel":
        return _generate_tunnel(rng, extent)
    if style == "urban":
        return _generate_urban(rng, extent)
    if style == "cave":
        return _generate_cave(rng, extent)
    raise ValueError(f"unknown world style {style!r}")


_FLOOR = 2  # solid slab thickness in voxels at the bottom of every world


def _maze_edges(rng, L):
    """Randomized spanning tree over an LxL lattice plus ~15% loop edges."""
    start = (0, L // 2)
    visited = {start}
    stack = [start]
    edges = []
    while stack:
        cx, cy = stack[-1]
        nbrs = [(cx + dx, cy + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= cx + dx < L and 0 <= cy + dy < L and (cx + dx, cy + dy) not in visited]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        edges.append(((cx, cy), nxt))
        visited.add(nxt)
        stack.append(nxt)
    # loop edges
    all_pairs = []
    for cx in range(L):
        for cy in range(L):
            if cx + 1 < L:
                all_pairs.append(((cx, cy), (cx + 1, cy)))
            if cy + 1 < L:
                all_pairs.append(((cx, cy), (cx, cy + 1)))
    existing = {frozenset(e) for e in edges}
    candidates = [e for e in all_pairs if frozenset(e) not in existing]
    n_extra = max(1, len(candidates) // 7)
    extra_idx = rng.choice(len(candidates), size=min(n_extra, len(candidates)), replace=False)
    for i in sorted(int(j) for j in extra_idx):
        edges.append(candidates[i])
    return start, edges


def _carve_box(occ, x0, x1, y0, y1, z0, z1):
    nx, ny, nz = occ.shape
    occ[max(0, x0):min(nx, x1), max(0, y0):min(ny, y1), max(0, z0):min(nz, z1)] = False


def _generate_tunnel(rng, extent):
    res = DEFAULT_RESOLUTION
    pitch = 10.0
    L = max(2, int(extent // pitch))
    n = int(round(extent / res))
    nz = _FLOOR + int(round(3.5 / res))
    occ = np.ones((n, n, nz), dtype=bool)

    start, edges = _maze_edges(rng, L)
    pv = int(round(pitch / res))

    def center(cell):
        return (cell[0] * pv + pv // 2, cell[1] * pv + pv // 2)

    rooms = {}
    for (a, b) in edges:
        for cell in (a, b):
            if cell not in rooms:
                rooms[cell] = int(rng.integers(8, 13))  # room half-side 2-3 m
        w_vox = int(rng.integers(8, 21))  # corridor width 2-5 m
        h_vox = int(rng.integers(10, 13))  # height 2.5-3 m
        ax, ay = center(a)
        bx, by = center(b)
        half = w_vox // 2
        z1 = _FLOOR + h_vox
        if ax == bx:
            y0, y1 = sorted((ay, by))
            _carve_box(occ, ax - half, ax + half, y0, y1 + 1, _FLOOR, z1)
        else:
            x0, x1 = sorted((ax, bx))
            _carve_box(occ, x0, x1 + 1, ay - half, ay + half, _FLOOR, z1)
    for cell, half in rooms.items():
        cx, cy = center(cell)
        _carve_box(occ, cx - half, cx + half, cy - half, cy + half, _FLOOR, _FLOOR + 12)

    # rubble bumps: one-voxel floor raises hugging the walls, so corridors
    # stay passable but roughness is exercised
    free_floor = ~occ[:, :, _FLOOR]
    bump_candidates = np.argwhere(free_floor)
    n_bumps = min(len(bump_candidates), L * L // 2)
    if n_bumps:
        order = rng.permutation(len(bump_candidates))[:n_bumps * 4]
        placed = 0
        for i in order:
            x, y = bump_candidates[i]
            # hug a wall: must have a solid lateral neighbor at floor level
            if placed >= n_bumps:
                break
            lateral = occ[max(0, x - 1):x + 2, max(0, y - 1):y + 2, _FLOOR]
            if lateral.any():
                occ[x, y, _FLOOR] = True
                placed += 1

    sx, sy = center(start)
    staging = np.array([(sx + 0.5) * res, (sy + 0.5) * res, (_FLOOR + 1.0) * res])
    return _finalize(rng, occ, res, staging, "tunnel-v1")


def _generate_urban(rng, extent):
    res = DEFAULT_RESOLUTION
    n = int(round(extent / res))
    level_h = int(round(3.0 / res))
    slab = 2
    nz = _FLOOR + level_h + slab + level_h + 2
    occ = np.ones((n, n, nz), dtype=bool)
    z0_lo, z1_lo = _FLOOR, _FLOOR + level_h
    z0_hi, z1_hi = z1_lo + slab, z1_lo + slab + level_h

    room_pitch = int(round(12.0 / res))
    wall = 2
    n_rooms = max(2, n // room_pitch)

    def carve_level(z0, z1):
        # rooms with doorways on a grid
        for rx in range(n_rooms):
            for ry in range(n_rooms):
                x0 = rx * room_pitch + wall
                y0 = ry * room_pitch + wall
                x1 = min(n - 1, (rx + 1) * room_pitch - wall)
                y1 = min(n - 1, (ry + 1) * room_pitch - wall)
                if x1 - x0 < 4 or y1 - y0 < 4:
                    continue
                _carve_box(occ, x0, x1, y0, y1, z0, z1)
        # doorways between adjacent rooms
        door = int(round(2.0 / res))
        for rx in range(n_rooms):
            for ry in range(n_rooms):
                cx = rx * room_pitch + room_pitch // 2
                cy = ry * room_pitch + room_pitch // 2
                if rx + 1 < n_rooms:
                    _carve_box(occ, (rx + 1) * room_pitch - wall - 1, (rx + 1) * room_pitch + wall + 1,
                               cy - door // 2, cy + door // 2, z0, z1)
                if ry + 1 < n_rooms:
                    _carve_box(occ, cx - door // 2, cx + door // 2,
                               (ry + 1) * room_pitch - wall - 1, (ry + 1) * room_pitch + wall + 1,
                               z0, z1)

    carve_level(z0_lo, z1_lo)
    carve_level(z0_hi, z1_hi)

    # stairwell in room (1,1): treads rise one voxel per two voxels of run
    sx0 = room_pitch + room_pitch // 4
    sy = room_pitch + room_pitch // 2
    rise = z0_hi - z0_lo
    stair_w = int(round(1.5 / res))
    for step in range(rise):
        tx0 = sx0 + step * 2
        # open the column through the slab, then backfill the tread mass
        _carve_box(occ, tx0, tx0 + 2, sy - stair_w // 2, sy + stair_w // 2,
                   z0_lo + step, z1_hi)
        occ[tx0:tx0 + 2, sy - stair_w // 2: sy + stair_w // 2, :z0_lo + step] = True

    staging = np.array([(room_pitch // 2) * res, (room_pitch // 2) * res, (z0_lo + 1.0) * res])
    return _finalize(rng, occ, res, staging, "urban-v1")


def _generate_cave(rng, extent):
    res = DEFAULT_RESOLUTION
    n = int(round(extent / res))
    nz = _FLOOR + int(round(5.0 / res))
    occ = np.ones((n, n, nz), dtype=bool)
    start = np.array([2.0, extent / 2.0, _FLOOR * res + 1.0])
    frontier = [(start.copy(), rng.uniform(-0.6, 0.6))]
    carved_len = 0.0
    target_len = extent * 4.0
    zc = _FLOOR * res + 1.2
    while frontier and carved_len < target_len:
        pos, heading = frontier.pop(int(rng.integers(len(frontier))))
        walk_len = rng.uniform(10.0, 30.0)
        steps = int(walk_len)
        for _ in range(steps):
            r = rng.uniform(1.0, 2.5)
            _carve_sphere(occ, pos / res, r / res, _FLOOR)
            heading += rng.normal(0.0, 0.25)
            pos = pos + np.array([math.cos(heading), math.sin(heading), 0.0])
            pos[0] = min(max(pos[0], 3.0), extent - 3.0)
            pos[1] = min(max(pos[1], 3.0), extent - 3.0)
            pos[2] = zc
            carved_len += 1.0
            if rng.random() < 0.04:
                frontier.append((pos.copy(), heading + rng.uniform(1.0, 2.2) * (1 if rng.random() < 0.5 else -1)))
    staging = np.array([start[0], start[1], _FLOOR * res + 0.5])
    return _finalize(rng, occ, res, staging, "cave-v1")


def _carve_sphere(occ, center_g, radius_g, floor):
    nx, ny, nz = occ.shape
    cx, cy, cz = center_g
    r = int(math.ceil(radius_g))
    x0, x1 = max(0, int(cx) - r), min(nx, int(cx) + r + 1)
    y0, y1 = max(0, int(cy) - r), min(ny, int(cy) + r + 1)
    z0, z1 = max(floor, int(cz) - r), min(nz - 1, int(cz) + r + 1)
    if x0 >= x1 or y0 >= y1 or z0 >= z1:
        return
    X, Y, Z = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1), np.arange(z0, z1), indexing="ij")
    inside = (X - cx) ** 2 + (Y - cy) ** 2 + ((Z - cz) * 1.6) ** 2 <= radius_g ** 2
    occ[x0:x1, y0:y1, z0:z1][inside] = False


def reachable_free(occ: np.ndarray, seed_idx) -> np.ndarray:
    """Boolean mask of free voxels 6-connected to seed_idx."""
    free = ~occ
    structure = ndimage.generate_binary_structure(3, 1)
    labels, _ = ndimage.label(free, structure=structure)
    want = labels[tuple(seed_idx)]
    if want == 0:
        raise ValueError("seed voxel is not free")
    return labels == want


def _finalize(rng, occ, res, staging, generator_id):
    """Cull unreachable free space, place artifacts, wrap up the model."""
    seed_idx = tuple(int(math.floor(c / res)) for c in staging)
    occ[seed_idx] = False  # guarantee the staging voxel is open
    keep = reachable_free(occ, seed_idx)
    occ = ~keep  # free space is exactly the reachable component

    # artifact candidates: two voxels above a ground voxel, with the full
    # 3x3x3 neighborhood free so nothing sits flush against a wall
    interior = ~ndimage.maximum_filter(occ, size=3, mode="constant", cval=True)
    cand_mask = np.zeros_like(occ)
    cand_mask[:, :, 3:] = occ[:, :, :-3] & ~occ[:, :, 1:-2] & ~occ[:, :, 2:-1]
    cand_mask &= interior
    cand = [tuple(int(v) for v in row) for row in np.argwhere(cand_mask)]
    n_art = int(rng.integers(10, 21))
    n_art = min(n_art, len(cand))
    chosen = rng.choice(len(cand), size=n_art, replace=False)
    classes = ["Cellphone", "CO2"]
    classes += [ARTIFACT_CLASSES[int(i)] for i in rng.integers(0, len(ARTIFACT_CLASSES), size=max(0, n_art - 2))]
    artifacts = []
    for slot, ci in enumerate(sorted(int(i) for i in chosen)):
        x, y, z = cand[ci]
        cls = classes[slot]
        artifacts.append(ArtifactTruth(
            cls=cls,
            position=np.array([(x + 0.5) * res, (y + 0.5) * res, (z + 0.5) * res]),
            emits_wifi=(cls == "Cellphone"),
            emits_gas=(cls == "CO2"),
        ))
    return WorldModel(
        resolution=res,
        occupancy=occ,
        frame_origin=(0.0, 0.0, 0.0),
        artifacts=artifacts,
        attenuation=DEFAULT_ATTENUATION,
        generator=generator_id,
        staging=staging,
    )

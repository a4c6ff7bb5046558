"""Per-robot online map.

Scan integration writes into a dense voxel state lattice (unknown / free /
occupied with observation counts). Derived 2D layers (ground elevation,
roughness, traversability) are recomputed lazily and cached against a map
version counter. Knowledge is monotone: observed cells never return to
unknown, occupied never downgrades to free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import kernels
from .kernels import FREE, OCCUPIED, UNKNOWN

# roughness threshold k_d in meters, by locomotion platform
K_D_DEFAULTS = {"wheeled": 0.12, "tracked": 0.30, "legged": 0.20}

HEADROOM_M = 2.0


@dataclass(frozen=True)
class CostField:
    """Distance in meters to the nearest untraversable cell, zero on
    untraversable cells, 1-Lipschitz between grid neighbors."""

    dist: np.ndarray
    source_mask: np.ndarray
    resolution: float


@dataclass(frozen=True)
class FrontierCluster:
    cells: tuple
    centroid: np.ndarray
    size: int


class NavMap:
    def __init__(self, resolution, shape, origin=(0.0, 0.0, 0.0), owner=""):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.shape = tuple(int(s) for s in shape)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.owner = owner
        self.state = np.zeros(self.shape, dtype=np.int8)
        self.counts = np.zeros(self.shape, dtype=np.uint16)
        self.bad_rays = 0
        self._version = 0
        self._cache_version = -1
        self._dirty_boxes = []      # (i0, i1, j0, j1) per hinted version bump
        self._elev = None
        self._elev_known = None
        self._rough = None

    # -- coordinates ---------------------------------------------------

    def to_grid(self, p):
        return (np.asarray(p, dtype=np.float64) - self.origin) / self.resolution

    def cell_center(self, ij):
        """World xy of a 2D cell center."""
        return self.origin[:2] + (np.asarray(ij, dtype=np.float64) + 0.5) * self.resolution

    def cell_of(self, xy):
        g = (np.asarray(xy, dtype=np.float64) - self.origin[:2]) / self.resolution
        return tuple(np.floor(g).astype(int))

    # -- state ---------------------------------------------------------

    @property
    def version(self):
        return self._version

    def observed_fraction_of(self, truth_free: np.ndarray) -> float:
        """Fraction of a reference free-space mask this map has observed."""
        n = int(truth_free.sum())
        if n == 0:
            return 1.0
        return float(((self.state != UNKNOWN) & truth_free).sum()) / n

    def snapshot(self) -> "NavMap":
        m = NavMap(self.resolution, self.shape, self.origin, self.owner)
        m.state = self.state.copy()
        m.counts = self.counts.copy()
        m.bad_rays = self.bad_rays
        m._version = self._version
        return m

    def to_doc(self) -> dict:
        return {
            "version": 1,
            "resolution": self.resolution,
            "origin": [float(x) for x in self.origin],
            "shape": list(self.shape),
            "owner": self.owner,
            "state": _rle_pairs(self.state.reshape(-1)),
            "counts": _rle_pairs(self.counts.reshape(-1)),
            "bad_rays": self.bad_rays,
        }

    @classmethod
    def from_doc(cls, doc) -> "NavMap":
        m = cls(doc["resolution"], doc["shape"], doc["origin"], doc.get("owner", ""))
        n = int(np.prod(m.shape))
        m.state = _rle_unpairs(doc["state"], n, np.int8).reshape(m.shape)
        m.counts = _rle_unpairs(doc["counts"], n, np.uint16).reshape(m.shape)
        m.bad_rays = int(doc.get("bad_rays", 0))
        m._version = 1
        return m


def _rle_pairs(flat):
    v = np.asarray(flat)
    if v.size == 0:
        return []
    edges = np.flatnonzero(np.diff(v)) + 1
    bounds = np.concatenate(([0], edges, [v.size]))
    return [[int(v[bounds[i]]), int(bounds[i + 1] - bounds[i])] for i in range(len(bounds) - 1)]


def _rle_unpairs(pairs, n, dtype):
    out = np.empty(n, dtype=dtype)
    pos = 0
    for val, count in pairs:
        out[pos:pos + count] = val
        pos += count
    if pos != n:
        raise ValueError(f"rle pairs cover {pos} of {n} cells")
    return out


# ---------------------------------------------------------------------------
# scan integration


def integrate_scan(m: NavMap, pose_estimate, dirs, ranges, max_range: float) -> NavMap:
    """Mark free space along each ray and the hit voxel occupied, from the
    robot's own pose estimate. Rays with non-finite or non-unit directions
    are skipped and counted in m.bad_rays. Returns m (mutated)."""
    pos = np.asarray(pose_estimate.position if hasattr(pose_estimate, "position")
                     else pose_estimate, dtype=np.float64)
    if not np.isfinite(pos).all():
        raise ValueError("pose estimate must be finite")
    dirs = np.asarray(dirs, dtype=np.float64)
    rng_arr = np.array([-1.0 if r is None else float(r) for r in ranges], dtype=np.float64)
    norms = np.linalg.norm(dirs, axis=1)
    ok = np.isfinite(dirs).all(axis=1) & (np.abs(norms - 1.0) < 1e-6)
    ok &= np.isfinite(rng_arr) | (rng_arr < 0)
    m.bad_rays += int((~ok).sum())
    if not ok.any():
        return m
    g = m.to_grid(pos)
    kernels.integrate_rays(m.state, m.counts, g, np.ascontiguousarray(dirs[ok]),
                           rng_arr[ok] / m.resolution, max_range / m.resolution)
    reach = max_range / m.resolution + 1.0
    m._dirty_boxes.append((
        max(0, int(g[0] - reach)), min(m.shape[0], int(g[0] + reach) + 1),
        max(0, int(g[1] - reach)), min(m.shape[1], int(g[1] + reach) + 1)))
    m._version += 1
    return m


# ---------------------------------------------------------------------------
# derived layers


def _column_layers(state, res: float, origin_z: float):
    """Per-column (elevation, known) over a block of the 3D state grid."""
    occ3 = state == OCCUPIED
    free3 = state == FREE
    nx, ny, nz = state.shape
    head = int(math.ceil(HEADROOM_M / res))
    # drivable ground: the lowest observed-solid voxel with no known
    # obstruction in the headroom above it; the lowest keeps tunnel floors
    # under solid ceilings, which a sky-down scan would shadow. A prefix
    # sum along z turns each headroom window into one subtraction.
    csum = np.zeros((nx, ny, nz + 1), dtype=np.int32)
    np.cumsum(occ3, axis=2, out=csum[:, :, 1:])
    top = np.minimum(np.arange(nz) + 1 + head, nz)
    clear = (csum[:, :, top] - csum[:, :, 1:]) == 0
    cand = occ3 & clear
    found = cand.any(axis=2)
    top_idx = np.where(found, cand.argmax(axis=2), -1).astype(np.int32)
    elev = np.where(found, (top_idx + 1) * res + origin_z, np.nan)

    # standing space directly above the ground voxel must be known free,
    # otherwise the "ground" may be a ceiling seen from afar
    zz = np.clip(top_idx + 1, 0, nz - 1)
    standing = np.take_along_axis(free3, zz[:, :, None], axis=2)[:, :, 0]
    return elev, found & standing


def _roughness(elev, known):
    """Max minus min confirmed ground over each 3x3 window, NaN where the
    window holds fewer than 3 confirmed cells."""
    hi = np.where(known, elev, -np.inf)
    lo = np.where(known, elev, np.inf)
    mx = ndimage.maximum_filter(hi, size=3, mode="constant", cval=-np.inf)
    mn = ndimage.minimum_filter(lo, size=3, mode="constant", cval=np.inf)
    cnt = ndimage.correlate(known.astype(np.int32), np.ones((3, 3), dtype=np.int32),
                            mode="constant", cval=0)
    return np.where(cnt >= 3, mx - mn, np.nan)


def _ensure_layers(m: NavMap):
    if m._cache_version == m._version:
        return
    nx, ny, _ = m.shape
    boxes = m._dirty_boxes
    if m._elev is not None and len(boxes) == m._version - m._cache_version:
        # every bump since the cache came with a touched box, so only that
        # region can differ. Elevation is column-local; roughness reads one
        # cell out, so compute over a 2-cell halo and write back inside a
        # 1-cell halo, where the 3x3 window never meets a sub-window edge
        # except at true array edges, whose padding matches the full pass.
        i0 = min(b[0] for b in boxes)
        i1 = max(b[1] for b in boxes)
        j0 = min(b[2] for b in boxes)
        j1 = max(b[3] for b in boxes)
        wi0, wi1 = max(0, i0 - 2), min(nx, i1 + 2)
        wj0, wj1 = max(0, j0 - 2), min(ny, j1 + 2)
        elev, known = _column_layers(m.state[wi0:wi1, wj0:wj1],
                                     m.resolution, m.origin[2])
        m._elev[wi0:wi1, wj0:wj1] = elev
        m._elev_known[wi0:wi1, wj0:wj1] = known
        ri0, ri1 = max(0, i0 - 1), min(nx, i1 + 1)
        rj0, rj1 = max(0, j0 - 1), min(ny, j1 + 1)
        rough = _roughness(elev, known)
        m._rough[ri0:ri1, rj0:rj1] = rough[ri0 - wi0:ri1 - wi0,
                                           rj0 - wj0:rj1 - wj0]
    else:
        m._elev, m._elev_known = _column_layers(m.state, m.resolution, m.origin[2])
        m._rough = _roughness(m._elev, m._elev_known)
    m._dirty_boxes = []
    m._cache_version = m._version


def elevation_layer(m: NavMap):
    """(elevation, known) 2D layers; elevation is NaN where unknown."""
    _ensure_layers(m)
    return m._elev, m._elev_known


def roughness_at(m: NavMap, xy, window: float = 0.75):
    """Max minus min observed ground height over the window centered on xy.
    None when fewer than 3 cells in the window have a ground estimate."""
    if window < m.resolution:
        raise ValueError("window must be at least one cell")
    _ensure_layers(m)
    r = max(1, int(window / (2.0 * m.resolution)))
    i, j = m.cell_of(xy)
    nx, ny = m._elev.shape
    block = m._elev[max(0, i - r):min(nx, i + r + 1), max(0, j - r):min(ny, j + r + 1)]
    vals = block[np.isfinite(block)]
    if vals.size < 3:
        return None
    return float(vals.max() - vals.min())


def traversability_mask(m: NavMap, k_d: float = None, platform: str = None):
    """(traversable, known) 2D boolean grids.

    Traversable: ground observed, standing space free, and 3x3 roughness
    within k_d. Cells too newly observed to score roughness (fewer than 3
    known neighbors) pass optimistically so exploration can leave the
    start area. Unknown columns are reported separately so frontier logic
    can tell 'wall' from 'not yet seen'.
    """
    if k_d is None:
        if platform not in K_D_DEFAULTS:
            raise ValueError(f"unknown platform {platform!r} and no explicit k_d")
        k_d = K_D_DEFAULTS[platform]
    if k_d <= 0:
        raise ValueError("k_d must be positive")
    _ensure_layers(m)
    rough_ok = np.isnan(m._rough) | (m._rough <= k_d)
    trav = m._elev_known & rough_ok
    return trav, m._elev_known


def distance_transform(mask: np.ndarray, resolution: float = 1.0) -> CostField:
    """Exact Euclidean distance in meters to the nearest False cell."""
    if mask.size == 0:
        raise ValueError("mask must be non-empty")
    sq = np.asarray(kernels.edt_sq(~np.asarray(mask, dtype=bool)))
    dist = np.sqrt(sq.astype(np.float64)) * resolution
    return CostField(dist=dist, source_mask=np.asarray(mask, dtype=bool), resolution=resolution)


# ---------------------------------------------------------------------------
# frontiers


def extract_frontiers(m: NavMap, mask: np.ndarray, connectivity: int = 8):
    """Traversable cells adjacent to at least one column whose ground is
    unresolved, as a sorted list of (i, j) grid cells."""
    _ensure_layers(m)
    unknown = ~m._elev_known
    if connectivity == 8:
        foot = np.ones((3, 3), dtype=bool)
    elif connectivity == 4:
        foot = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    else:
        raise ValueError("connectivity must be 4 or 8")
    near_unknown = ndimage.binary_dilation(unknown, structure=foot)
    cells = np.argwhere(np.asarray(mask, dtype=bool) & near_unknown)
    return [(int(i), int(j)) for i, j in cells]


def cluster_frontiers(m: NavMap, cells, linkage_radius: float):
    """Single-linkage clusters of frontier cells: two cells join when
    within linkage_radius meters. Sorted by size descending, then by the
    smallest member cell."""
    if linkage_radius < m.resolution:
        raise ValueError("linkage radius must be at least one cell")
    if not cells:
        return []
    pts = np.asarray(cells, dtype=np.float64)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(linkage_radius / m.resolution, output_type="ndarray")
    parent = list(range(len(cells)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    groups = {}
    for i in range(len(cells)):
        groups.setdefault(find(i), []).append(tuple(cells[i]))

    _ensure_layers(m)
    out = []
    for members in groups.values():
        members.sort()
        xy = np.array([m.cell_center(c) for c in members])
        zs = np.array([m._elev[c] for c in members])
        zs = zs[np.isfinite(zs)]
        z = float(zs.mean()) if zs.size else float(m.origin[2])
        centroid = np.array([xy[:, 0].mean(), xy[:, 1].mean(), z])
        out.append(FrontierCluster(cells=tuple(members), centroid=centroid, size=len(members)))
    out.sort(key=lambda c: (-c.size, c.cells[0]))
    return out

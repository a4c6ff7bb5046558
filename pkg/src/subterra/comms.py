"""Three-tier radio simulation.

Links exist when the tier's loss budget survives free-space path loss
plus through-wall attenuation integrated along the segment. Routing picks
the widest path by bottleneck margin. Frames move through per-node
transmit queues with serialization and latency delays on a discrete event
queue; links re-checked at each hop completion so a wall or a dead node
mid-flight drops the frame. Low-rate beacons gossip between mote nodes
with latest-wins tables.

Reliability is deliberately absent here: the replication layer above
retransmits records, this layer just loses frames honestly.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InventoryEmptyError
from .world import WorldModel

WALL_DB_PER_M = 30.0
HOP_LATENCY = 0.005
_FSPL_CONST = 20.0 * math.log10(4.0 * math.pi / 299792458.0)   # -147.55 dB


@dataclass(frozen=True)
class LinkTier:
    name: str
    bandwidth: float           # bits/s
    freq_hz: float
    loss_budget: float         # dB
    mtu_bits: int

    @property
    def base_range(self) -> float:
        """Free-space distance at which the margin reaches zero."""
        return 10.0 ** ((self.loss_budget - 20.0 * math.log10(self.freq_hz)
                         - _FSPL_CONST) / 20.0)


TIERS = {
    "wifi": LinkTier("wifi", 50_000_000.0, 5e9, 70.0, 16_000_000),
    "mesh": LinkTier("mesh", 1_000_000.0, 2.3e9, 95.0, 2_000_000),
    "mote": LinkTier("mote", 432.0, 900e6, 120.0, 512),
}

# two eight-slot containers of motes; a couple of droppable mesh units
DEFAULT_INVENTORY = {"mote": 16, "mesh": 2}


@dataclass
class RadioNode:
    id: str
    position: np.ndarray
    tiers: tuple
    powered: bool = True
    kind: str = "robot"        # robot | base | dropped_mote | dropped_mesh

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)


@dataclass(frozen=True)
class Frame:
    id: int
    src: str
    dst: str
    tier: str
    size_bits: int
    enqueued: float
    kind: str = "stream"       # stream | record_sync | command | beacon
    payload: object = None


def _traffic_class(f: Frame) -> str:
    return "stream" if f.kind == "stream" else "bulk"


def free_space_loss(distance: float, freq_hz: float) -> float:
    return 20.0 * math.log10(max(distance, 0.1)) + 20.0 * math.log10(freq_hz) + _FSPL_CONST


def wall_loss(w: WorldModel, a, b) -> float:
    ga = w.to_grid(a)
    gb = w.to_grid(b)
    meters = kernels.solid_length(w._occ_u8, *ga, *gb) * w.resolution
    return WALL_DB_PER_M * meters


def link_quality(w: WorldModel, a: RadioNode, b: RadioNode, tier: str):
    """dB margin left after path and wall losses; None when the link
    cannot close (negative margin, unpowered end, or missing radio)."""
    if not (a.powered and b.powered):
        return None
    if tier not in a.tiers or tier not in b.tiers:
        return None
    t = TIERS[tier]
    d = float(np.linalg.norm(a.position - b.position))
    margin = t.loss_budget - free_space_loss(d, t.freq_hz) - wall_loss(w, a.position, b.position)
    return margin if margin >= 0.0 else None


def widest_path(links, src, dst):
    """Path maximizing the bottleneck margin. links: {(a, b): margin},
    undirected. Ties break toward fewer hops, then node order."""
    if src == dst:
        return [src]
    adj = {}
    for (a, b), m in links.items():
        adj.setdefault(a, []).append((b, m))
        adj.setdefault(b, []).append((a, m))
    best = {src: (math.inf, 0)}
    came = {}
    heap = [(-math.inf, 0, src)]
    seen = set()
    while heap:
        neg_w, hops, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == dst:
            break
        for v, m in sorted(adj.get(u, [])):
            width = min(-neg_w, m)
            cand = (width, -(hops + 1))
            if v not in best or cand > (best[v][0], -best[v][1]):
                best[v] = (width, hops + 1)
                came[v] = u
                heapq.heappush(heap, (-width, hops + 1, v))
    if dst not in seen:
        return None
    path = [dst]
    while path[-1] != src:
        path.append(came[path[-1]])
    return path[::-1]


class Network:
    """Event-queued radio world. All sends and receives resolve through
    step(now); everything is deterministic given the call schedule."""

    def __init__(self, w: WorldModel, latency: float = HOP_LATENCY,
                 queue_limit: int = 64):
        self.world = w
        self.latency = latency
        self.queue_limit = queue_limit
        self.nodes = {}
        self.inventory = {}
        self._next_frame = 1
        self._next_event = 1
        self._events = []          # (time, seq, frame, hop index, route)
        # queues and airtime split by traffic class so a telemetry flood
        # cannot starve record replication (each tier reserves a share)
        self._busy = {}            # (node id, tier, class) -> free-at stamp
        self._queued = {}          # (node id, tier, class) -> frames waiting
        self.delivered = []
        self.log = []

    # -- topology ----------------------------------------------------------

    def add_node(self, node: RadioNode, inventory=None):
        self.nodes[node.id] = node
        if node.kind == "robot":
            self.inventory[node.id] = dict(DEFAULT_INVENTORY if inventory is None
                                           else inventory)
        return node

    def links(self, tier: str):
        out = {}
        ids = sorted(self.nodes)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                m = link_quality(self.world, self.nodes[a], self.nodes[b], tier)
                if m is not None:
                    out[(a, b)] = m
        return out

    def route(self, src: str, dst: str, tier: str):
        return widest_path(self.links(tier), src, dst)

    def drop_relay(self, robot_id: str, tier_kind: str) -> RadioNode:
        inv = self.inventory.get(robot_id, {})
        if inv.get(tier_kind, 0) <= 0:
            raise InventoryEmptyError(f"{robot_id} has no {tier_kind} relays left")
        inv[tier_kind] -= 1
        carrier = self.nodes[robot_id]
        n = sum(1 for x in self.nodes.values()
                if x.kind == f"dropped_{tier_kind}" and x.id.startswith(robot_id))
        node = RadioNode(id=f"{robot_id}/{tier_kind}{n + 1}",
                         position=carrier.position.copy(),
                         tiers=(tier_kind,), kind=f"dropped_{tier_kind}")
        self.nodes[node.id] = node
        return node

    # -- frames ------------------------------------------------------------

    def make_frame(self, src, dst, tier, size_bits, now, kind="stream", payload=None):
        if size_bits > TIERS[tier].mtu_bits:
            raise ValueError(f"{size_bits} bits exceeds {tier} MTU")
        f = Frame(self._next_frame, src, dst, tier, size_bits, now, kind, payload)
        self._next_frame += 1
        return f

    def transmit(self, f: Frame, route=None):
        """Queue a frame along a route (computed now if not given).
        Returns the scheduled delivery stamp, or None when dropped at
        enqueue. Mid-flight link loss can still drop it later."""
        if route is None:
            route = self.route(f.src, f.dst, f.tier)
        if route is None or len(route) < 2:
            self._log(f.enqueued, "drop_noroute", f)
            return None
        key = (f.src, f.tier, _traffic_class(f))
        q = self._queued.setdefault(key, 0)
        if q >= self.queue_limit:
            self._log(f.enqueued, "drop_overflow", f)
            return None
        self._queued[key] = q + 1
        self._log(f.enqueued, "enqueue", f)
        return self._schedule_hop(f, route, 0, f.enqueued)

    def _schedule_hop(self, f: Frame, route, hop, now):
        key = (route[hop], f.tier, _traffic_class(f))
        start = max(now, self._busy.get(key, 0.0))
        finish = start + f.size_bits / TIERS[f.tier].bandwidth
        self._busy[key] = finish
        arrive = finish + self.latency
        heapq.heappush(self._events, (arrive, self._next_event, f, hop, tuple(route)))
        self._next_event += 1
        # the stamp the whole route would deliver at, absent disruption
        t = arrive
        for h in range(hop + 1, len(route) - 1):
            t += f.size_bits / TIERS[f.tier].bandwidth + self.latency
        return t

    def step(self, now: float):
        """Resolve every hop completion due by now; returns frames that
        reached their destination as (frame, stamp) pairs."""
        out = []
        while self._events and self._events[0][0] <= now + 1e-12:
            t, _, f, hop, route = heapq.heappop(self._events)
            a, b = route[hop], route[hop + 1]
            na, nb = self.nodes.get(a), self.nodes.get(b)
            alive = (na is not None and nb is not None
                     and link_quality(self.world, na, nb, f.tier) is not None)
            if hop == 0:
                self._queued[(f.src, f.tier, _traffic_class(f))] -= 1
            if not alive:
                self._log(t, "drop_linkloss", f)
                continue
            if hop + 2 == len(route):
                self.delivered.append((f, t))
                self._log(t, "deliver", f)
                out.append((f, t))
            else:
                self._schedule_hop(f, route, hop + 1, t)
        return out

    def _log(self, t, event, f: Frame):
        self.log.append({"t": round(t, 6), "event": event, "frame": f.id,
                         "src": f.src, "dst": f.dst, "tier": f.tier,
                         "bits": f.size_bits, "kind": f.kind})


# ---------------------------------------------------------------------------
# mote beacon gossip

BEACON_BITS = 54
BEACON_INTERVAL = 2.0
BEACON_TTL = 8

# invented over-the-air layout, header excluded:
#   pose beacon:    id:4  kind:2  x:16  y:16  z:10  yaw:6   = 54 bits
#   command beacon: id:4  kind:2  opcode:6  arg:16          = 28 bits
_XY_STEP = 0.05       # 16 bits span 0..3276.75 m
_Z_STEP = 0.1         # 10 bits span +-51.2 m
_YAW_STEP = 2.0 * math.pi / 64.0


def encode_pose_beacon(robot_idx: int, position, yaw: float) -> int:
    x = min(max(int(round(position[0] / _XY_STEP)), 0), 0xFFFF)
    y = min(max(int(round(position[1] / _XY_STEP)), 0), 0xFFFF)
    z = min(max(int(round(position[2] / _Z_STEP)) + 512, 0), 0x3FF)
    a = int(round((yaw % (2.0 * math.pi)) / _YAW_STEP)) % 64
    return (((robot_idx & 0xF) << 50) | (0 << 48) | (x << 32) | (y << 16)
            | (z << 6) | a)


def decode_pose_beacon(word: int):
    a = word & 0x3F
    z = (word >> 6) & 0x3FF
    y = (word >> 16) & 0xFFFF
    x = (word >> 32) & 0xFFFF
    idx = (word >> 50) & 0xF
    return idx, np.array([x * _XY_STEP, y * _XY_STEP, (z - 512) * _Z_STEP]), a * _YAW_STEP


def encode_command_beacon(robot_idx: int, opcode: int, arg: int = 0) -> int:
    return ((robot_idx & 0xF) << 24) | (1 << 22) | ((opcode & 0x3F) << 16) | (arg & 0xFFFF)


def decode_command_beacon(word: int):
    return (word >> 24) & 0xF, (word >> 16) & 0x3F, word & 0xFFFF


@dataclass(frozen=True)
class Beacon:
    origin: str
    seq: int
    word: int                  # packed payload, <= 54 bits
    ttl: int = BEACON_TTL

    def __post_init__(self):
        if self.word.bit_length() > BEACON_BITS:
            raise ValueError("beacon payload exceeds 54 bits")


class BeaconTable:
    """Latest beacon per origin, merged by sequence number."""

    def __init__(self):
        self.latest = {}

    def offer(self, b: Beacon) -> bool:
        cur = self.latest.get(b.origin)
        if cur is not None and cur.seq >= b.seq:
            return False
        self.latest[b.origin] = b
        return True


def mote_beacon_exchange(net: Network, tables, now: float):
    """One gossip round: every powered mote node floods its table one hop.
    TTL decrements per hop; stale and duplicate entries are suppressed by
    the per-origin sequence numbers. Returns count of adopted entries."""
    links = net.links("mote")
    neighbors = {}
    for a, b in links:
        neighbors.setdefault(a, []).append(b)
        neighbors.setdefault(b, []).append(a)
    # snapshot first so a round moves data exactly one hop
    outbound = {nid: list(tables[nid].latest.values())
                for nid in sorted(tables) if nid in net.nodes}
    adopted = 0
    for nid in sorted(outbound):
        for peer in sorted(neighbors.get(nid, [])):
            if peer not in tables:
                continue
            for b in outbound[nid]:
                if b.ttl <= 0:
                    continue
                if tables[peer].offer(Beacon(b.origin, b.seq, b.word, b.ttl - 1)):
                    adopted += 1
    return adopted

"""Replication of mission-critical records over links that come and go.

Every node keeps an append-only store of records keyed by (origin, seq).
Reconciliation is digest and pull: a peer advertises its highest
contiguous sequence per origin, the other side returns what is missing,
oldest first, and application is idempotent, so sessions can be cut at
any point and resumed later without loss or duplication.

Telemetry streams live in a separate latest-wins channel with per-topic
rate budgets; losing stream frames never touches record replication.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, UnregisteredTopicError

RECORD_KINDS = ("detection", "pose_history", "status", "command_ack")

WIRE_MAGIC = b"SR"
WIRE_VERSION = 1


@dataclass(frozen=True)
class Record:
    origin: str
    seq: int
    kind: str
    payload: dict
    stamp: float

    def key(self):
        return (self.origin, self.seq)


def _valid(r) -> bool:
    return (isinstance(r, Record) and isinstance(r.origin, str) and r.origin != ""
            and isinstance(r.seq, int) and r.seq >= 1
            and r.kind in RECORD_KINDS and isinstance(r.payload, dict)
            and isinstance(r.stamp, (int, float)) and np.isfinite(r.stamp))


class RecordStore:
    """Append-only log plus the per-origin contiguity watermarks that
    drive anti-entropy. Replicas may transiently hold gaps; the digest
    only advances over contiguous prefixes, so gaps are re-pulled."""

    def __init__(self, owner: str):
        self.owner = owner
        self.records = {}          # (origin, seq) -> Record
        self.cursors = {}          # peer id -> last seen digest
        self.rejects = []
        self._contig = {}          # origin -> highest contiguous seq

    def __len__(self):
        return len(self.records)

    def append(self, kind: str, payload: dict, stamp: float) -> Record:
        seq = self._contig.get(self.owner, 0) + 1
        r = Record(self.owner, seq, kind, payload, stamp)
        if not _valid(r):
            raise ValueError(f"invalid record {r!r}")
        self.records[r.key()] = r
        self._contig[self.owner] = seq
        return r

    def digest(self):
        return {o: w for o, w in sorted(self._contig.items()) if w > 0}

    def pull(self, peer_digest, limit: int = None):
        """Records the peer is missing, oldest first per origin."""
        out = []
        for origin in sorted(self._contig):
            have = peer_digest.get(origin, 0)
            seq = have + 1
            while (origin, seq) in self.records:
                out.append(self.records[(origin, seq)])
                seq += 1
                if limit is not None and len(out) >= limit:
                    return out
        return out

    def apply(self, records) -> int:
        """Idempotent merge; malformed entries are logged and skipped."""
        fresh = 0
        for r in records:
            if not _valid(r):
                self.rejects.append(r)
                continue
            if r.key() in self.records:
                continue
            self.records[r.key()] = r
            fresh += 1
            w = self._contig.get(r.origin, 0)
            while (r.origin, w + 1) in self.records:
                w += 1
            self._contig[r.origin] = w
        return fresh

    def note_peer_digest(self, peer: str, digest):
        self.cursors[peer] = dict(digest)

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> bytes:
        ordered = [self.records[k] for k in sorted(self.records)]
        return encode_records(ordered)

    @classmethod
    def restore(cls, owner: str, blob: bytes) -> "RecordStore":
        s = cls(owner)
        s.apply(decode_records(blob))
        return s


def anti_entropy_session(a: RecordStore, b: RecordStore, limit: int = None):
    """One bidirectional reconciliation; returns records moved. Over a
    stable link and without a limit, both sides end up identical."""
    moved = b.apply(a.pull(b.digest(), limit))
    moved += a.apply(b.pull(a.digest(), limit))
    a.note_peer_digest(b.owner, b.digest())
    b.note_peer_digest(a.owner, a.digest())
    return moved


# ---------------------------------------------------------------------------
# wire format
#
# header:  "SR" | version u8 | count u32
# record:  body length u32 | origin length u8 | origin utf-8 | seq u32
#          | kind u8 (table index) | stamp f64 | payload length u32
#          | payload canonical JSON utf-8
# all integers big-endian; canonical JSON is sorted-keys, no spaces


def _canon(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def encode_records(records) -> bytes:
    parts = [WIRE_MAGIC, struct.pack(">BI", WIRE_VERSION, len(records))]
    for r in records:
        origin = r.origin.encode()
        payload = _canon(r.payload)
        body = struct.pack(">B", len(origin)) + origin
        body += struct.pack(">IBd", r.seq, RECORD_KINDS.index(r.kind), r.stamp)
        body += struct.pack(">I", len(payload)) + payload
        parts.append(struct.pack(">I", len(body)))
        parts.append(body)
    return b"".join(parts)


def decode_records(blob: bytes):
    if blob[:2] != WIRE_MAGIC:
        raise SchemaError("bad record stream magic")
    if len(blob) < 7:
        raise SchemaError("truncated header")
    version, count = struct.unpack(">BI", blob[2:7])
    if version != WIRE_VERSION:
        raise SchemaError(f"unsupported wire version {version}")
    out = []
    off = 7
    for _ in range(count):
        if off + 4 > len(blob):
            raise SchemaError("truncated record length")
        (blen,) = struct.unpack(">I", blob[off:off + 4])
        off += 4
        body = blob[off:off + blen]
        if len(body) != blen:
            raise SchemaError("truncated record body")
        off += blen
        try:
            olen = body[0]
            origin = body[1:1 + olen].decode()
            seq, kind_idx, stamp = struct.unpack(">IBd", body[1 + olen:14 + olen])
            (plen,) = struct.unpack(">I", body[14 + olen:18 + olen])
            payload = json.loads(body[18 + olen:18 + olen + plen])
        except (IndexError, struct.error, UnicodeDecodeError,
                json.JSONDecodeError) as e:
            raise SchemaError(f"malformed record body: {e}") from e
        if kind_idx >= len(RECORD_KINDS):
            raise SchemaError(f"unknown record kind index {kind_idx}")
        out.append(Record(origin, seq, RECORD_KINDS[kind_idx], payload, stamp))
    return out


# ---------------------------------------------------------------------------
# stream channel


@dataclass(frozen=True)
class Channel:
    topic: str
    tier: str
    max_rate_hz: float
    max_bits: int


class StreamHub:
    """Latest-wins telemetry with per-topic rate budgets. At most one
    pending payload per topic, so backlog cannot grow."""

    def __init__(self):
        self.channels = {}
        self._pending = {}
        self._last_emit = {}

    def register(self, topic: str, tier: str, max_rate_hz: float, max_bits: int):
        self.channels[topic] = Channel(topic, tier, max_rate_hz, max_bits)

    def publish(self, topic: str, payload, size_bits: int, now: float):
        ch = self.channels.get(topic)
        if ch is None:
            raise UnregisteredTopicError(f"topic {topic!r} not registered")
        # oversize payloads are down-sampled to the channel budget
        self._pending[topic] = (payload, min(size_bits, ch.max_bits), now)

    def take_due(self, now: float):
        """(topic, payload, size_bits, tier) for every topic whose rate
        budget allows an emission now; emitted payloads are consumed."""
        out = []
        for topic in sorted(self._pending):
            ch = self.channels[topic]
            last = self._last_emit.get(topic)
            if last is not None and now - last < 1.0 / ch.max_rate_hz - 1e-9:
                continue
            payload, bits, _ = self._pending.pop(topic)
            self._last_emit[topic] = now
            out.append((topic, payload, bits, ch.tier))
        return out

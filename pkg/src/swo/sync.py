"""State-vector dataset synchronization.

Each group member keeps a vector mapping producer id to that producer's
latest sequence number. Vectors travel as one-way gossip: requests on
``<group>/sync/p=<digest>`` carrying the TLV-encoded vector in the
application parameters and expecting no reply. The digest component keys the
notification to its vector so the pending-request table never aggregates a
newer vector away.

Receiving a vector means: merge pointwise-max, fetch every newly announced
name, and, if the sender is behind, schedule a re-broadcast after a random
suppression delay (cancelled when an equal-or-newer vector shows up first).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Optional

from . import manifests, security, wire
from .names import Name
from .wire import ContentType, Request, SwoObject

TLV_VECTOR = 0x71
TLV_VECTOR_ENTRY = 0x72
TLV_SEQNO = 0x73

SYNC_COMPONENT = b"sync"

DEFAULT_HEARTBEAT_MS = 30_000
DEFAULT_SUPPRESSION_MS = (100, 500)
MAX_INFLIGHT = 8


class SyncError(Exception):
    pass


class StateVector:
    """Map from producer id to latest sequence (>= 1)."""

    __slots__ = ("entries",)

    def __init__(self, entries: Optional[dict[Name, int]] = None):
        self.entries = dict(entries or {})
        for node, seq in self.entries.items():
            if seq < 1:
                raise SyncError(f"zero sequence for {node}")

    def copy(self) -> "StateVector":
        return StateVector(self.entries)

    def get(self, node: Name) -> int:
        return self.entries.get(node, 0)

    def set(self, node: Name, seq: int) -> None:
        if seq < 1:
            raise SyncError("sequence must be >= 1")
        self.entries[node] = seq

    def covers(self, other: "StateVector") -> bool:
        return all(self.get(n) >= s for n, s in other.entries.items())

    def __eq__(self, other) -> bool:
        return isinstance(other, StateVector) and self.entries == other.entries

    def __repr__(self) -> str:
        inner = ", ".join(
            f"{n}:{s}" for n, s in sorted(self.entries.items(), key=lambda kv: kv[0].sort_key())
        )
        return "{" + inner + "}"

    def encode(self) -> bytes:
        """Canonical encoding: entries sorted in canonical name order."""
        out = bytearray()
        for node in sorted(self.entries, key=lambda n: n.sort_key()):
            body = wire.encode_name(node) + wire._tlv(
                TLV_SEQNO, wire.enc_uint(self.entries[node])
            )
            out += wire._tlv(TLV_VECTOR_ENTRY, body)
        return wire._tlv(TLV_VECTOR, bytes(out))

    @classmethod
    def decode(cls, raw: bytes) -> "StateVector":
        t, value, end = wire._read_tlv(raw, 0)
        if t != TLV_VECTOR or end != len(raw):
            raise wire.UnknownTlv("not a state vector")
        entries: dict[Name, int] = {}
        off = 0
        prev: Optional[Name] = None
        while off < len(value):
            et, evalue, off = wire._read_tlv(value, off)
            if et != TLV_VECTOR_ENTRY:
                raise wire.UnknownTlv("bad vector entry")
            nt, nvalue, pos = wire._read_tlv(evalue, 0)
            if nt != wire.TLV_NAME:
                raise wire.BadValue("vector entry must start with a name")
            node = wire.decode_name_value(nvalue)
            st, svalue, pos = wire._read_tlv(evalue, pos)
            if st != TLV_SEQNO or pos != len(evalue):
                raise wire.BadValue("malformed vector entry")
            seq = wire.dec_uint(svalue)
            if seq < 1:
                raise wire.BadValue("zero sequence")
            if node in entries:
                raise wire.DuplicateField(f"vector entry {node}")
            if prev is not None and not node > prev:
                raise wire.BadOrder("vector entries not in canonical order")
            prev = node
            entries[node] = seq
        return cls(entries)


def merge_vectors(
    local: StateVector, remote: StateVector
) -> tuple[StateVector, list[tuple[Name, int, int]], bool]:
    """Pointwise max; returns (merged, missing ranges as (node, lo, hi),
    remote_behind)."""
    merged = local.copy()
    missing: list[tuple[Name, int, int]] = []
    for node in sorted(remote.entries, key=lambda n: n.sort_key()):
        rseq = remote.entries[node]
        lseq = local.get(node)
        if rseq > lseq:
            merged.set(node, rseq)
            missing.append((node, lseq + 1, rseq))
    remote_behind = any(local.get(n) > remote.get(n) for n in local.entries)
    return merged, missing, remote_behind


class Signer:
    """What sync needs from the node's security context."""

    __slots__ = ("key", "cert_name")

    def __init__(self, key: security.KeyPair, cert_name: Name):
        self.key = key
        self.cert_name = cert_name


class SyncGroup:
    """One node's membership in a sync group.

    node_suffix is the producer id used inside data names:
    ``<group_prefix>/<node_suffix...>/seq=<n>``.
    """

    def __init__(
        self,
        group_prefix: Name,
        node_suffix: Name,
        repo,
        forwarder,
        scheduler,
        rng,
        signer: Signer,
        fetcher: Optional[Callable] = None,
        heartbeat_ms: int = DEFAULT_HEARTBEAT_MS,
        suppression_ms: tuple[int, int] = DEFAULT_SUPPRESSION_MS,
        on_publication: Optional[Callable[[SwoObject], None]] = None,
        events: Optional[Callable[..., None]] = None,
        label: str = "sync",
    ):
        if len(node_suffix) == 0:
            raise SyncError("empty node suffix")
        self.group_prefix = group_prefix
        self.node_suffix = node_suffix
        self.repo = repo
        self.forwarder = forwarder
        self.scheduler = scheduler
        self.rng = rng
        self.signer = signer
        self.fetcher = fetcher
        self.heartbeat_ms = heartbeat_ms
        self.suppression_ms = suppression_ms
        self.on_publication = on_publication
        self._events = events
        self.label = label
        self.local_vector = StateVector()
        self.last_seen: dict[Name, int] = {}
        self._bcast_seq = 0
        self.face_id = forwarder.add_face(self._on_packet, f"{label}-app")
        self._suppression_timer = None
        self._heartbeat_timer = None
        self._queue: list[Name] = []
        self._inflight: set[Name] = set()
        self._running = False
        self.counters = {"broadcasts": 0, "fetched": 0, "dropped_vectors": 0}
        self._rebuild_from_repo()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._running = True
        self._schedule_heartbeat()
        self._broadcast()

    def stop(self) -> None:
        self._running = False
        for t in (self._suppression_timer, self._heartbeat_timer):
            if t is not None:
                t.cancel()

    def _rebuild_from_repo(self) -> None:
        """Vectors are never persisted; recover own count (and peers') from
        stored names ``group/<suffix...>/seq=<n>``."""
        plen = len(self.group_prefix)
        for name in self.repo.names_under(self.group_prefix):
            comps = name.components
            if len(comps) < plen + 2:
                continue
            seq = _parse_seq(comps[-1])
            if seq is None:
                continue
            suffix = Name(comps[plen:-1])
            if seq > self.local_vector.get(suffix):
                self.local_vector.set(suffix, seq)

    # -- publishing ----------------------------------------------------------

    def data_name(self, node: Name, seq: int) -> Name:
        return self.group_prefix + node + [b"seq=%d" % seq]

    def publish(self, content_type: ContentType, payload: bytes) -> SwoObject:
        """Sign and store the next object for this node, then announce it."""
        seq = self.local_vector.get(self.node_suffix) + 1
        name = self.data_name(self.node_suffix, seq)
        now = self.scheduler.now_ms()
        if len(payload) > manifests.SEGMENT_CONTENT_CAP:
            manifest, segments = manifests.blob_collection(
                payload, name, self.signer.key, self.signer.cert_name, now
            )
            for seg in segments:
                self.repo.put(seg, verified=True)
            obj = manifest
        else:
            obj = security.sign_object(
                name, content_type, payload, self.signer.key, self.signer.cert_name, now
            )
        self.repo.put(obj, verified=True)
        self.local_vector.set(self.node_suffix, seq)
        self._event("publish", name=str(name), seq=seq)
        self._broadcast()
        return obj

    # -- gossip ----------------------------------------------------------------

    def _broadcast(self) -> None:
        if self._suppression_timer is not None:
            self._suppression_timer.cancel()
            self._suppression_timer = None
        params = self.local_vector.encode()
        # The digest component keys the notification to this sender and this
        # emission; reusing a name would let pending-request aggregation at
        # any hop (including our own) swallow a later broadcast.
        self._bcast_seq += 1
        digest = (
            hashlib.sha256(
                wire.encode_name(self.node_suffix)
                + self._bcast_seq.to_bytes(8, "big")
                + params
            )
            .hexdigest()[:16]
            .encode("ascii")
        )
        req = Request(
            name=self.group_prefix + [SYNC_COMPONENT, b"p=" + digest],
            can_be_prefix=False,
            nonce=self.rng.randbytes(4),
            lifetime_ms=wire.DEFAULT_LIFETIME_MS,
            app_params=params,
        )
        self.counters["broadcasts"] += 1
        self._event("sync_broadcast", vector=repr(self.local_vector))
        self.forwarder.handle_packet(self.face_id, wire.encode_request(req))

    def _schedule_heartbeat(self) -> None:
        if not self._running:
            return
        self._heartbeat_timer = self.scheduler.call_later(
            self.heartbeat_ms, self._heartbeat
        )

    def _heartbeat(self) -> None:
        if not self._running:
            return
        self._broadcast()
        self._kick_queue()
        self._schedule_heartbeat()

    def _on_packet(self, data: bytes) -> None:
        try:
            packet = wire.decode_packet(data)
        except wire.WireError:
            return
        if not isinstance(packet, Request):
            return
        name = packet.name
        if (
            len(name) != len(self.group_prefix) + 2
            or not self.group_prefix.is_prefix_of(name)
            or name.components[len(self.group_prefix)] != SYNC_COMPONENT
        ):
            return
        if packet.app_params is None:
            self.counters["dropped_vectors"] += 1
            return
        try:
            remote = StateVector.decode(packet.app_params)
        except wire.WireError:
            self.counters["dropped_vectors"] += 1
            self._event("sync_malformed")
            return
        self.on_sync_message(remote)

    def on_sync_message(self, remote: StateVector) -> None:
        # Never let a remote claim raise our own entry; we are authoritative.
        own = self.local_vector.get(self.node_suffix)
        merged, missing, remote_behind = merge_vectors(self.local_vector, remote)
        if merged.get(self.node_suffix) != own and own > 0:
            merged.set(self.node_suffix, own)
        elif merged.get(self.node_suffix) != own:
            merged.entries.pop(self.node_suffix, None)
        self.local_vector = merged
        now = self.scheduler.now_ms()
        for node in remote.entries:
            if node != self.node_suffix:
                self.last_seen[node] = now
        self._event("sync_recv", vector=repr(remote), behind=remote_behind)

        for node, lo, hi in missing:
            if node == self.node_suffix:
                continue  # never fetch own publications
            for seq in range(lo, hi + 1):
                name = self.data_name(node, seq)
                if not self.repo.has(name) and name not in self._inflight:
                    if name not in self._queue:
                        self._queue.append(name)
        self._kick_queue()

        if remote_behind and self.local_vector.covers(remote):
            self._schedule_suppressed_broadcast()
        elif not remote_behind and remote.covers(self.local_vector):
            # Peer is up to date; an answer planned for an older view is moot.
            if self._suppression_timer is not None:
                self._suppression_timer.cancel()
                self._suppression_timer = None

    def _schedule_suppressed_broadcast(self) -> None:
        if self._suppression_timer is not None:
            return
        lo, hi = self.suppression_ms
        delay = self.rng.randint(lo, hi)
        self._suppression_timer = self.scheduler.call_later(delay, self._broadcast)

    # -- fetching --------------------------------------------------------------

    def _kick_queue(self) -> None:
        if self.fetcher is None:
            return
        while self._queue and len(self._inflight) < MAX_INFLIGHT:
            name = self._queue.pop(0)
            if self.repo.has(name):
                continue
            self._inflight.add(name)
            self.fetcher(name, lambda obj, n=name: self._fetched(n, obj))

    def _fetched(self, name: Name, obj: Optional[SwoObject]) -> None:
        self._inflight.discard(name)
        if obj is None or obj.name != name:
            # Retry on a later vector or heartbeat; the announcement stands.
            if not self.repo.has(name) and name not in self._queue:
                self._queue.append(name)
            self._kick_queue()
            return
        try:
            stored_new = not self.repo.has(name)
            self.repo.put(obj)
        except Exception:
            stored_new = False
        self.counters["fetched"] += 1
        self._event("sync_fetched", name=str(name))
        if stored_new and self.on_publication is not None:
            self.on_publication(obj)
        self._kick_queue()

    def _event(self, ev: str, **fields) -> None:
        if self._events is not None:
            self._events(self.label, ev, **fields)


def _parse_seq(comp: bytes) -> Optional[int]:
    if not comp.startswith(b"seq="):
        return None
    try:
        return int(comp[4:].decode("ascii"))
    except ValueError:
        return None

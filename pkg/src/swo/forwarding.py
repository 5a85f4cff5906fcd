"""Name-based forwarding: FIB longest-prefix match, PIT aggregation with
nonce loop suppression, and an LRU content store.

A forwarder is a single-threaded state machine driven by its scheduler;
faces hand it packets via handle_packet and receive packets through their
send callbacks. Forwarders are transport-agnostic: the same code runs over
in-memory links, TCP, and WebSocket.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import security, wire
from .names import Name
from .wire import Request, SigType, SwoObject

SEEN_NONCE_CAP = 64


class UnknownFace(Exception):
    pass


@dataclass
class Face:
    face_id: int
    send_fn: Callable[[bytes], None]
    label: str = ""
    up: bool = True


@dataclass
class FibEntry:
    prefix: Name
    next_hops: set[int] = field(default_factory=set)


class PitEntry:
    __slots__ = ("name", "can_be_prefix", "downstream", "seen_nonces", "timer")

    def __init__(self, name: Name, can_be_prefix: bool):
        self.name = name
        self.can_be_prefix = can_be_prefix
        self.downstream: list[tuple[int, bytes]] = []
        self.seen_nonces: OrderedDict[bytes, None] = OrderedDict()
        self.timer = None

    def saw(self, nonce: bytes) -> bool:
        return nonce in self.seen_nonces

    def note(self, nonce: bytes) -> None:
        self.seen_nonces[nonce] = None
        while len(self.seen_nonces) > SEEN_NONCE_CAP:
            self.seen_nonces.popitem(last=False)


class ContentStore:
    """LRU cache of objects. Only objects that are plausibly intact get in:
    DIGEST objects must hash correctly; signed objects are kept on
    well-formedness alone, since trust validation is the consumer's job."""

    def __init__(self, capacity: int = 1024):
        self.capacity = capacity
        self._entries: OrderedDict[Name, SwoObject] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def insert(self, obj: SwoObject) -> bool:
        if self.capacity <= 0:
            return False
        if obj.sig_type == SigType.DIGEST and not security.digest_ok(obj):
            return False
        if obj.name in self._entries:
            self._entries.move_to_end(obj.name)
            return True
        self._entries[obj.name] = obj
        while len(self._entries) > self.capacity:
            self._entries.popitem(last=False)
        return True

    def lookup(self, req: Request) -> Optional[SwoObject]:
        """Exact match, or the canonical-order maximum under a prefix."""
        if not req.can_be_prefix:
            obj = self._entries.get(req.name)
            if obj is not None:
                self._entries.move_to_end(req.name)
            return obj
        best: Optional[Name] = None
        for name in self._entries:
            if req.name.is_prefix_of(name) and (best is None or name > best):
                best = name
        if best is None:
            return None
        self._entries.move_to_end(best)
        return self._entries[best]

    def names(self) -> list[Name]:
        return list(self._entries.keys())


class Forwarder:
    """One forwarding node; all state confined to its scheduler's loop."""

    def __init__(
        self,
        scheduler,
        cs_capacity: int = 1024,
        label: str = "fwd",
        events: Optional[Callable[..., None]] = None,
    ):
        self.scheduler = scheduler
        self.label = label
        self.faces: dict[int, Face] = {}
        self.fib: dict[Name, FibEntry] = {}
        self.pit: dict[tuple[Name, bool], PitEntry] = {}
        self.cs = ContentStore(cs_capacity)
        self._next_face = 1
        self._events = events
        self.counters = {
            "sent_requests": 0,
            "sent_objects": 0,
            "recv_requests": 0,
            "recv_objects": 0,
            "cache_hits": 0,
            "no_route": 0,
            "unsolicited": 0,
            "dropped_loop": 0,
            "dropped_down": 0,
            "dropped_malformed": 0,
            "pit_expired": 0,
        }

    # -- faces and routes --------------------------------------------------

    def add_face(self, send_fn: Callable[[bytes], None], label: str = "") -> int:
        fid = self._next_face
        self._next_face += 1
        self.faces[fid] = Face(fid, send_fn, label or f"face{fid}")
        return fid

    def remove_face(self, face_id: int) -> None:
        self.faces.pop(face_id, None)
        for entry in self.fib.values():
            entry.next_hops.discard(face_id)
        for pe in list(self.pit.values()):
            pe.downstream = [(f, n) for f, n in pe.downstream if f != face_id]

    def set_face_up(self, face_id: int, up: bool) -> None:
        face = self.faces.get(face_id)
        if face is None:
            raise UnknownFace(f"face {face_id}")
        face.up = up

    def face_label(self, face_id: int) -> str:
        face = self.faces.get(face_id)
        return face.label if face else f"face{face_id}?"

    def register_prefix(self, face_id: int, prefix: Name) -> None:
        face = self.faces.get(face_id)
        if face is None or not face.up:
            raise UnknownFace(f"face {face_id} unknown or down")
        self.fib.setdefault(prefix, FibEntry(prefix)).next_hops.add(face_id)

    def unregister_prefix(self, face_id: int, prefix: Name) -> None:
        entry = self.fib.get(prefix)
        if entry:
            entry.next_hops.discard(face_id)
            if not entry.next_hops:
                del self.fib[prefix]

    def longest_prefix_match(self, name: Name) -> Optional[FibEntry]:
        best: Optional[FibEntry] = None
        for prefix, entry in self.fib.items():
            if prefix.is_prefix_of(name) and entry.next_hops:
                if best is None or len(prefix) > len(best.prefix):
                    best = entry
        return best

    # -- packet handling -----------------------------------------------------

    def handle_packet(self, in_face: int, data: bytes) -> None:
        face = self.faces.get(in_face)
        if face is None or not face.up:
            self.counters["dropped_down"] += 1
            return
        try:
            packet = wire.decode_packet(data)
        except wire.WireError:
            self.counters["dropped_malformed"] += 1
            return
        if isinstance(packet, Request):
            self.counters["recv_requests"] += 1
            self._event("recv", face=face.label, kind="request", name=str(packet.name))
            self.on_request(in_face, packet)
        else:
            self.counters["recv_objects"] += 1
            self._event("recv", face=face.label, kind="object", name=str(packet.name))
            self.on_object(in_face, packet)

    def on_request(self, in_face: int, req: Request) -> None:
        cached = self.cs.lookup(req)
        if cached is not None:
            self.counters["cache_hits"] += 1
            self._event("cache_hit", name=str(req.name))
            self._send(in_face, cached.wire(), "object", cached.name)
            return

        key = (req.name, req.can_be_prefix)
        entry = self.pit.get(key)
        if entry is not None:
            if entry.saw(req.nonce):
                self.counters["dropped_loop"] += 1
                self._event("loop_drop", name=str(req.name))
                return
            entry.note(req.nonce)
            if all(f != in_face for f, _ in entry.downstream):
                entry.downstream.append((in_face, req.nonce))
            return

        fib_entry = self.longest_prefix_match(req.name)
        hops = (
            sorted(h for h in fib_entry.next_hops if h != in_face)
            if fib_entry
            else []
        )
        hops = [h for h in hops if self.faces.get(h) and self.faces[h].up]
        if not hops:
            self.counters["no_route"] += 1
            self._event("no_route", name=str(req.name))
            return

        entry = PitEntry(req.name, req.can_be_prefix)
        entry.note(req.nonce)
        entry.downstream.append((in_face, req.nonce))
        self.pit[key] = entry
        entry.timer = self.scheduler.call_later(
            req.lifetime_ms, lambda: self._expire_pit(key)
        )
        data = wire.encode_request(req)
        for hop in hops:
            self._send(hop, data, "request", req.name)

    def on_object(self, in_face: int, obj: SwoObject) -> None:
        matches = []
        exact = self.pit.get((obj.name, False))
        if exact is not None:
            matches.append(((obj.name, False), exact))
        for key, entry in self.pit.items():
            if entry.can_be_prefix and entry.name.is_prefix_of(obj.name):
                matches.append((key, entry))
        if not matches:
            self.counters["unsolicited"] += 1
            self._event("unsolicited", name=str(obj.name))
            return

        self.cs.insert(obj)
        data = obj.wire()
        # consume the entries before sending: a send can re-enter this
        # forwarder through an app face and recreate state under these keys
        for key, _entry in matches:
            self._drop_pit(key)
        sent_to: set[int] = set()
        for _key, entry in matches:
            for face_id, _nonce in entry.downstream:
                if face_id not in sent_to:
                    sent_to.add(face_id)
                    self._send(face_id, data, "object", obj.name)

    def cs_lookup(self, req: Request) -> Optional[SwoObject]:
        return self.cs.lookup(req)

    # -- internals -----------------------------------------------------------

    def _drop_pit(self, key) -> None:
        entry = self.pit.pop(key, None)
        if entry is not None and entry.timer is not None:
            entry.timer.cancel()

    def _expire_pit(self, key) -> None:
        if key in self.pit:
            self.counters["pit_expired"] += 1
            self._event("pit_expired", name=str(key[0]))
            del self.pit[key]

    def _send(self, face_id: int, data: bytes, kind: str, name: Name) -> None:
        face = self.faces.get(face_id)
        if face is None or not face.up:
            self.counters["dropped_down"] += 1
            return
        self.counters["sent_requests" if kind == "request" else "sent_objects"] += 1
        self._event("send", face=face.label, kind=kind, name=str(name))
        face.send_fn(data)

    def _event(self, ev: str, **fields) -> None:
        if self._events is not None:
            self._events(self.label, ev, **fields)

    def dump_tables(self) -> str:
        lines = ["faces:"]
        for fid, face in sorted(self.faces.items()):
            lines.append(f"  {fid} {face.label} {'up' if face.up else 'down'}")
        lines.append("fib:")
        for prefix in sorted(self.fib, key=lambda p: p.sort_key()):
            hops = ",".join(str(h) for h in sorted(self.fib[prefix].next_hops))
            lines.append(f"  {prefix} -> {hops}")
        lines.append(f"pit: {len(self.pit)} pending")
        lines.append(f"cs: {len(self.cs)}/{self.cs.capacity}")
        return "\n".join(lines)


RETX_GRACE_MS = 25


class Consumer:
    """Fetch helper attached to a forwarder as an app face.

    Retries with a fresh nonce and doubled lifetime, three retransmissions
    by default. The retry fires a grace period after the lifetime so PIT
    state along the path has expired; a retransmission that lands in a
    still-live entry would be aggregated, not re-forwarded.
    """

    def __init__(self, forwarder: Forwarder, scheduler, rng, label: str = "consumer"):
        self.forwarder = forwarder
        self.scheduler = scheduler
        self.rng = rng
        self.face_id = forwarder.add_face(self._on_packet, label)
        self._pending: list[dict] = []

    def fetch(
        self,
        name: Name,
        on_done: Callable[[Optional[SwoObject]], None],
        prefix: bool = False,
        lifetime_ms: int = wire.DEFAULT_LIFETIME_MS,
        retries: int = 3,
    ) -> None:
        state = {
            "name": name,
            "prefix": prefix,
            "cb": on_done,
            "lifetime": lifetime_ms,
            "left": retries,
            "timer": None,
        }
        self._pending.append(state)
        self._transmit(state)

    def _transmit(self, state: dict) -> None:
        req = Request(
            name=state["name"],
            can_be_prefix=state["prefix"],
            nonce=self.rng.randbytes(4),
            lifetime_ms=state["lifetime"],
        )
        state["timer"] = self.scheduler.call_later(
            state["lifetime"] + RETX_GRACE_MS, lambda: self._timeout(state)
        )
        self.forwarder.handle_packet(self.face_id, wire.encode_request(req))

    def _timeout(self, state: dict) -> None:
        if state not in self._pending:
            return
        if state["left"] > 0:
            state["left"] -= 1
            state["lifetime"] *= 2
            self._transmit(state)
            return
        self._pending.remove(state)
        state["cb"](None)

    def _on_packet(self, data: bytes) -> None:
        try:
            packet = wire.decode_packet(data)
        except wire.WireError:
            return
        if not isinstance(packet, SwoObject):
            return  # flooded requests also land here; nothing to serve
        for state in list(self._pending):
            hit = (
                state["name"].is_prefix_of(packet.name)
                if state["prefix"]
                else packet.name == state["name"]
            )
            if hit:
                self._pending.remove(state)
                if state["timer"] is not None:
                    state["timer"].cancel()
                state["cb"](packet)

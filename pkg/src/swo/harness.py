"""Deterministic in-process multi-node simulator and canned scenarios.

Everything runs on one virtual clock; per-node randomness (nonces, keys,
suppression delays) derives from the scenario seed, so a (script, seed) pair
always produces a byte-identical transcript. Links are lossless FIFO pipes
with a fixed 1 ms delay.

Scenario files are plain text, one timed event per line::

    t=<ms> <verb> <args...>

Verbs: app, rule, spawn, spawnfwd, link, unlink, endorse, anchor, join,
edit, delete, publish, fetch, online, offline, mark, expect. Quoting
follows shell rules; ``#`` starts a comment.
"""

from __future__ import annotations

import hashlib
import random
import shlex
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import security
from .names import parse_uri
from .node import Node
from .repo import Repo
from .runtime import VirtualScheduler
from .forwarding import Forwarder

LINK_DELAY_MS = 1
SIM_HEARTBEAT_MS = 30_000


class ScriptError(Exception):
    def __init__(self, index: int, message: str):
        super().__init__(f"event {index}: {message}")
        self.index = index


@dataclass
class Scenario:
    name: str
    events: list[tuple[int, str, list[str]]]
    seed: int = 1

    @classmethod
    def parse(cls, text: str, name: str = "scenario", seed: int = 1) -> "Scenario":
        events = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                parts = shlex.split(line, comments=True)
            except ValueError as exc:
                raise ScriptError(line_no, f"bad quoting: {exc}") from None
            if not parts or not parts[0].startswith("t="):
                raise ScriptError(line_no, "line must start with t=<ms>")
            try:
                t = int(parts[0][2:])
            except ValueError:
                raise ScriptError(line_no, "bad timestamp") from None
            if len(parts) < 2:
                raise ScriptError(line_no, "missing verb")
            events.append((t, parts[1], parts[2:]))
        events.sort(key=lambda e: e[0])
        return cls(name=name, events=events, seed=seed)


@dataclass
class Transcript:
    scenario: str
    seed: int
    lines: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _node_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class _Link:
    def __init__(self, world: "SimWorld", a: "SimNode", b: "SimNode"):
        self.world = world
        self.a, self.b = a, b
        self.fid_at_a = a.forwarder.add_face(self._send_to(b, a), f"link:{b.label}")
        self.fid_at_b = b.forwarder.add_face(self._send_to(a, b), f"link:{a.label}")
        for node, fid in ((a, self.fid_at_a), (b, self.fid_at_b)):
            node.register_link(fid)
        self.up = True

    def _send_to(self, dest: "SimNode", src: "SimNode"):
        def send(data: bytes) -> None:
            if not self.up:
                return
            fid = self.fid_at_b if dest is self.b else self.fid_at_a
            self.world.scheduler.call_later(
                LINK_DELAY_MS, lambda: dest.forwarder.handle_packet(fid, data)
            )

        return send

    def tear_down(self) -> None:
        self.up = False
        self.a.drop_link(self.fid_at_a)
        self.b.drop_link(self.fid_at_b)


class SimNode:
    """A spawned participant: either a full node or a bare forwarder."""

    def __init__(self, label: str, node: Optional[Node], forwarder: Forwarder):
        self.label = label
        self.node = node
        self.forwarder = forwarder
        self.fetches: dict[str, bool] = {}
        self.marks: dict[str, int] = {}

    def register_link(self, fid: int) -> None:
        if self.node is not None:
            self.node.forwarder.register_prefix(fid, self.node.app_prefix)
            self.node.link_faces.append(fid)
            if not self.node.online:
                self.forwarder.set_face_up(fid, False)
        else:
            self.forwarder.register_prefix(fid, self._world_prefix)

    def drop_link(self, fid: int) -> None:
        if self.node is not None:
            self.node.remove_link_face(fid)
        else:
            self.forwarder.remove_face(fid)

    def counters(self) -> dict[str, int]:
        out = dict(self.forwarder.counters)
        out["sent"] = out["sent_requests"] + out["sent_objects"]
        out["received"] = out["recv_requests"] + out["recv_objects"]
        if self.node is not None:
            for session in self.node.sessions.values():
                out["validated_accepted"] = out.get("validated_accepted", 0) + session.counters["applied_batches"]
                out["validated_rejected"] = out.get("validated_rejected", 0) + session.counters["rejected_batches"]
                out["sync_broadcasts"] = out.get("sync_broadcasts", 0) + session.group.counters["broadcasts"]
        return out


class SimWorld:
    def __init__(self, seed: int, workdir: Path, record):
        self.seed = seed
        self.workdir = workdir
        self.scheduler = VirtualScheduler()
        self.app_prefix = parse_uri("/3DEditor")
        self.schema_lines: list[str] = []
        self.nodes: dict[str, SimNode] = {}
        self.links: dict[frozenset, _Link] = {}
        self.record = record
        self.applied_chains: dict[tuple[str, str], str] = {}

    # recorder wrapper capturing validation events for expects
    def events(self, label: str, ev: str, **fields) -> None:
        if ev == "batch_applied":
            self.applied_chains[(label, fields.get("name", ""))] = fields.get(
                "chain", ""
            )
        self.record(self.scheduler.now_ms(), label, ev, fields)

    def spawn_full(self, label: str, identifier: str, cs_capacity: int = 1024) -> SimNode:
        rng = random.Random(_node_seed(self.seed, label))
        repo = Repo(self.workdir / label, clock_ms=self.scheduler.now_ms)
        schema = security.compile_schema("\n".join(self.schema_lines))
        node = Node.bootstrap(
            label,
            identifier,
            self.scheduler,
            self.app_prefix,
            repo,
            schema=schema,
            rng=rng,
            cs_capacity=cs_capacity,
            heartbeat_ms=SIM_HEARTBEAT_MS,
            events=self.events,
        )
        sim = SimNode(label, node, node.forwarder)
        self.nodes[label] = sim
        self.record(
            self.scheduler.now_ms(),
            label,
            "spawn",
            {"identity": str(node.identity), "cert": str(node.cert.name)},
        )
        return sim

    def spawn_fwd(self, label: str) -> SimNode:
        fwd = Forwarder(self.scheduler, label=label, events=self.events)
        sim = SimNode(label, None, fwd)
        sim._world_prefix = self.app_prefix
        self.nodes[label] = sim
        self.record(self.scheduler.now_ms(), label, "spawn", {"kind": "forwarder"})
        return sim

    def get(self, label: str, index: int) -> SimNode:
        sim = self.nodes.get(label)
        if sim is None:
            raise ScriptError(index, f"unknown node {label}")
        return sim

    def full(self, label: str, index: int) -> Node:
        sim = self.get(label, index)
        if sim.node is None:
            raise ScriptError(index, f"{label} is a bare forwarder")
        return sim.node

    def close(self) -> None:
        for sim in self.nodes.values():
            if sim.node is not None:
                sim.node.close()


def run_scenario(
    scenario: Scenario, workdir: Optional[Path] = None, seed: Optional[int] = None
) -> Transcript:
    seed = scenario.seed if seed is None else seed
    transcript = Transcript(scenario=scenario.name, seed=seed)
    transcript.lines.append(f"scenario={scenario.name} seed={seed}")

    def record(t: int, label: str, ev: str, fields: dict) -> None:
        extras = " ".join(f"{k}={v}" for k, v in fields.items())
        transcript.lines.append(f"t={t:07d} {label} {ev}" + (f" {extras}" if extras else ""))

    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="swo-sim-")
        workdir = Path(tmp.name)
    world = SimWorld(seed, Path(workdir), record)
    try:
        for index, (t, verb, args) in enumerate(scenario.events):
            world.scheduler.run_until(t)
            _execute(world, transcript, index, t, verb, args)
        if scenario.events:
            world.scheduler.run_until(scenario.events[-1][0])
    finally:
        world.close()
        if tmp is not None:
            tmp.cleanup()
    return transcript


def _execute(world: SimWorld, transcript: Transcript, index: int, t: int, verb: str, args: list[str]) -> None:
    sched = world.scheduler

    def fail(msg: str) -> None:
        transcript.failures.append(f"t={t} {msg}")
        transcript.lines.append(f"t={t:07d} expect FAIL {msg}")

    if verb == "app":
        world.app_prefix = parse_uri(args[0])
    elif verb == "rule":
        world.schema_lines.append(" ".join(args))
    elif verb == "spawn":
        if len(args) < 2:
            raise ScriptError(index, "spawn <label> <identifier> [cs=<n>]")
        cs_capacity = 1024
        for extra in args[2:]:
            if extra.startswith("cs="):
                cs_capacity = int(extra[3:])
            else:
                raise ScriptError(index, f"unknown spawn option {extra!r}")
        world.spawn_full(args[0], args[1], cs_capacity=cs_capacity)
    elif verb == "spawnfwd":
        world.spawn_fwd(args[0])
    elif verb == "link":
        a, b = world.get(args[0], index), world.get(args[1], index)
        key = frozenset((args[0], args[1]))
        if key in world.links:
            raise ScriptError(index, f"already linked: {args}")
        world.links[key] = _Link(world, a, b)
        world.record(t, args[0], "link", {"peer": args[1]})
    elif verb == "unlink":
        key = frozenset((args[0], args[1]))
        link = world.links.pop(key, None)
        if link is None:
            raise ScriptError(index, f"not linked: {args}")
        link.tear_down()
        world.record(t, args[0], "unlink", {"peer": args[1]})
    elif verb == "endorse":
        endorser = world.full(args[0], index)
        peer = world.full(args[1], index)
        endorsement = endorser.endorse_peer(peer.cert)
        # the fingerprint-confirmed exchange hands both sides the certs
        peer.install_certificate(endorser.cert)
        peer.install_certificate(endorsement)
        world.record(
            t,
            args[0],
            "endorse",
            {
                "peer": args[1],
                "cert": str(endorsement.name),
                "fingerprint": security.fingerprint(peer.cert),
            },
        )
    elif verb == "anchor":
        owner = world.full(args[0], index)
        peer = world.full(args[1], index)
        owner.install_certificate(peer.cert, anchor=True)
        world.record(t, args[0], "anchor", {"cert": str(peer.cert.name)})
    elif verb == "join":
        node = world.full(args[0], index)
        group = parse_uri(args[1]) if args[1].startswith("/") else world.app_prefix + [args[1]]
        node.join(group)
        world.record(t, args[0], "join", {"group": str(group)})
    elif verb == "edit":
        node = world.full(args[0], index)
        session = _only_session(node, index)
        session.insert(int(args[1]), args[2])
        world.record(t, args[0], "edit", {"pos": args[1], "len": len(args[2])})
    elif verb == "delete":
        node = world.full(args[0], index)
        _only_session(node, index).delete(int(args[1]), int(args[2]))
        world.record(t, args[0], "delete", {"pos": args[1], "len": args[2]})
    elif verb == "publish":
        node = world.full(args[0], index)
        obj = node.publish_object(parse_uri(args[1]), bytes.fromhex(args[2]))
        world.record(t, args[0], "publish_object", {"name": str(obj.name)})
    elif verb == "fetch":
        sim = world.get(args[0], index)
        node = world.full(args[0], index)
        uri = args[1]
        prefix = len(args) > 2 and args[2] == "prefix"

        def done(obj, sim=sim, uri=uri, label=args[0]) -> None:
            sim.fetches[uri] = obj is not None
            world.record(
                sched.now_ms(),
                label,
                "fetch_done",
                {"name": uri, "ok": int(obj is not None)},
            )

        node.fetch(parse_uri(uri), done, prefix=prefix)
    elif verb == "online":
        world.full(args[0], index).set_online(True)
    elif verb == "offline":
        world.full(args[0], index).set_online(False)
    elif verb == "mark":
        sim = world.get(args[0], index)
        sim.marks = dict(sim.counters())
        world.record(t, args[0], "mark", {})
    elif verb == "expect":
        _expect(world, transcript, index, t, args, fail)
    else:
        raise ScriptError(index, f"unknown verb {verb}")


def _only_session(node: Node, index: int):
    if not node.sessions:
        raise ScriptError(index, f"{node.label} has not joined a group")
    return next(iter(node.sessions.values()))


def _expect(world: SimWorld, transcript: Transcript, index: int, t: int, args: list[str], fail) -> None:
    kind = args[0]
    ok = False
    desc = " ".join(args)
    if kind == "text":
        node = world.full(args[1], index)
        actual = _only_session(node, index).doc.text()
        ok = actual == args[2]
        if not ok:
            desc += f" (got {actual!r})"
    elif kind == "converged":
        snaps = []
        for label in args[1:]:
            node = world.full(label, index)
            session = _only_session(node, index)
            text, runs = session.doc.snapshot()
            snaps.append((text, tuple((s, e, str(o)) for s, e, o in runs)))
        ok = all(s == snaps[0] for s in snaps)
        if not ok:
            desc += f" (got {[s[0] for s in snaps]!r})"
    elif kind == "holds":
        node = world.full(args[1], index)
        ok = node.repo.has(parse_uri(args[2]))
    elif kind == "validated":
        chain = world.applied_chains.get((args[1], args[2]), "")
        ok = bool(chain)
        if ok:
            desc += f" chain={chain}"
    elif kind == "fetched":
        sim = world.get(args[1], index)
        ok = sim.fetches.get(args[2], False)
    elif kind == "unfetched":
        sim = world.get(args[1], index)
        ok = sim.fetches.get(args[2]) is not True
    elif kind == "metric":
        sim = world.get(args[1], index)
        counter, op, value = args[2], args[3], int(args[4])
        actual = sim.counters().get(counter, 0)
        ok = (
            actual == value
            if op == "=="
            else actual <= value
            if op == "<="
            else actual >= value
        )
        if not ok:
            desc += f" (got {actual})"
    elif kind == "metric_delta":
        sim = world.get(args[1], index)
        counter, op, value = args[2], args[3], int(args[4])
        actual = sim.counters().get(counter, 0) - sim.marks.get(counter, 0)
        ok = (
            actual == value
            if op == "=="
            else actual <= value
            if op == "<="
            else actual >= value
        )
        if not ok:
            desc += f" (got {actual})"
    else:
        raise ScriptError(index, f"unknown expect {kind}")
    if ok:
        transcript.lines.append(f"t={t:07d} expect PASS {desc}")
    else:
        fail(desc)


def metrics(transcript: Transcript) -> dict:
    """Per-node packet/cache/validation counts plus convergence timings,
    recomputed purely from the transcript."""
    per_node: dict[str, dict[str, int]] = {}
    publishes: dict[str, int] = {}
    fetched_at: dict[str, int] = {}

    def bump(node: str, key: str, by: int = 1) -> None:
        per_node.setdefault(node, {})[key] = per_node.setdefault(node, {}).get(key, 0) + by

    for line in transcript.lines:
        parts = line.split()
        if not parts or not parts[0].startswith("t="):
            continue
        t = int(parts[0][2:])
        if len(parts) < 3 or parts[1] == "expect":
            continue
        node, ev = parts[1], parts[2]
        fields = dict(p.split("=", 1) for p in parts[3:] if "=" in p)
        if ev == "send":
            bump(node, "sent")
            bump(node, f"sent_{fields.get('kind', '?')}s")
        elif ev == "recv":
            bump(node, "received")
        elif ev == "cache_hit":
            bump(node, "cache_hits")
        elif ev == "batch_applied":
            bump(node, "validations_accepted")
        elif ev == "batch_rejected":
            bump(node, "validations_rejected")
        elif ev == "sync_broadcast":
            bump(node, "sync_broadcasts")
        elif ev == "publish":
            publishes[fields.get("name", "")] = t
        elif ev == "sync_fetched":
            name = fields.get("name", "")
            fetched_at[name] = max(fetched_at.get(name, 0), t)
    convergence = {
        name: fetched_at[name] - t0
        for name, t0 in publishes.items()
        if name in fetched_at
    }
    return {"nodes": per_node, "convergence_ms": convergence}


def render_metrics(summary: dict) -> str:
    lines = []
    for node in sorted(summary["nodes"]):
        counts = summary["nodes"][node]
        inner = " ".join(f"{k}={counts[k]}" for k in sorted(counts))
        lines.append(f"{node}: {inner}")
    for name in sorted(summary["convergence_ms"]):
        lines.append(f"convergence {name}: {summary['convergence_ms'][name]} ms")
    return "\n".join(lines) + "\n"


# -- built-in scenarios --------------------------------------------------------

_WORKSPACE_RULE = (
    "rule updates: /3DEditor/*/<user>/** <= /3DEditor/<user>/KEY/**"
)

ALICE_BOB_JANE = f"""
# Offline relay: with alice gone, jane gets alice's update from bob's store
t=0 app /3DEditor
t=0 rule {_WORKSPACE_RULE}
t=0 spawn alice alice@example.com
t=0 spawn bob bob@example.com
t=0 spawn jane jane@example.com
t=10 link alice bob
t=20 endorse bob alice
t=30 endorse alice bob
t=40 join alice docA
t=50 join bob docA
t=100 edit alice 0 "hello from alice"
t=3000 expect text bob "hello from alice"
t=3000 expect validated bob /3DEditor/docA/alice@example.com/seq=1
t=3100 unlink alice bob
t=3100 mark alice
t=3200 link bob jane
t=3250 endorse jane bob
t=3300 endorse bob jane
t=3400 join jane docA
t=8000 expect holds jane /3DEditor/docA/alice@example.com/seq=1
t=8000 expect validated jane /3DEditor/docA/alice@example.com/seq=1
t=8000 expect text jane "hello from alice"
t=8000 expect converged bob jane
t=8000 expect metric_delta alice sent == 0
"""

THREE_EDITORS = f"""
# Concurrent editing by three users; all replicas converge
t=0 app /3DEditor
t=0 rule {_WORKSPACE_RULE}
t=0 spawn alice alice@example.com
t=0 spawn bob bob@example.com
t=0 spawn jane jane@example.com
t=10 link alice bob
t=10 link bob jane
t=10 link alice jane
t=20 endorse bob alice
t=25 endorse alice bob
t=30 endorse bob jane
t=35 endorse jane bob
t=50 join alice docA
t=55 join bob docA
t=60 join jane docA
t=1000 edit alice 0 "alice was here. "
t=1000 edit bob 0 "bob was here. "
t=1000 edit jane 0 "jane was here. "
t=9000 expect converged alice bob jane
t=9100 edit bob 0 "merged: "
t=15000 expect converged alice bob jane
t=15000 expect validated alice /3DEditor/docA/bob@example.com/seq=1
t=15000 expect validated jane /3DEditor/docA/alice@example.com/seq=1
"""

CACHE_LINE = """
# Two fetches of one name over a middle forwarder: one producer send, one hit
t=0 app /3DEditor
t=0 spawn producer producer@example.com
t=0 spawn consumer consumer@example.com cs=0
t=0 spawnfwd relay
t=10 link consumer relay
t=10 link relay producer
t=100 publish producer /3DEditor/producer@example.com/data/v=1 00112233445566778899aabbccddeeff
t=1000 fetch consumer /3DEditor/producer@example.com/data/v=1
t=2000 fetch consumer /3DEditor/producer@example.com/data/v=1
t=3000 expect fetched consumer /3DEditor/producer@example.com/data/v=1
t=3000 expect metric producer sent_objects == 1
t=3000 expect metric relay cache_hits == 1
"""

BUILTINS = {
    "alice-bob-jane": ALICE_BOB_JANE,
    "three-editors": THREE_EDITORS,
    "cache-line": CACHE_LINE,
}


def builtin_scenario(name: str, seed: int = 1) -> Scenario:
    try:
        return Scenario.parse(BUILTINS[name], name=name, seed=seed)
    except KeyError:
        raise ScriptError(0, f"unknown builtin scenario {name}") from None

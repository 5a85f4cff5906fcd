"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. Tolerances and counts are pinned here, not configurable.
"""

import random
import time
from itertools import permutations
from pathlib import Path

import pytest

from swo import security, wire
from swo.harness import builtin_scenario, metrics, run_scenario
from swo.names import Name, parse_uri
from swo.security import compile_schema, endorse, generate_identity, sign_object, validate
from swo.wire import ContentType, decode_packet, encode_object, encode_request

from conftest import random_object, random_packet_bytes, random_request
from test_crdt import generate_op_set, replay

APP = parse_uri("/3DEditor")


def _pass(name: str) -> None:
    print(f"ACCEPTANCE {name}: PASS")


# -- 1. wire canonicality ------------------------------------------------------


def test_acceptance_wire_canonicality():
    started = time.monotonic()
    rng = random.Random(20_240_001)

    for _ in range(10_000):
        if rng.random() < 0.5:
            req = random_request(rng)
            data = encode_request(req)
            decoded = wire.decode_request(data)
            assert decoded == req and encode_request(decoded) == data
        else:
            obj = random_object(rng)
            data = encode_object(obj)
            decoded = wire.decode_object(data)
            assert decoded == obj and encode_object(decoded) == data

    root = Path(__file__).resolve().parents[1] / "testdata" / "wire"
    import json

    for vec in json.loads((root / "vectors.json").read_text()):
        packet = decode_packet((root / vec["file"]).read_bytes())
        assert str(packet.name) == vec["name"]

    fuzz = random.Random(20_240_002)
    count = 0
    for _ in range(60_000):
        blob = fuzz.randbytes(fuzz.randint(0, 100))
        try:
            decode_packet(blob)
        except wire.WireError:
            pass
        count += 1
    for _ in range(40_000):
        data = bytearray(random_packet_bytes(fuzz))
        for _ in range(fuzz.randint(1, 3)):
            data[fuzz.randrange(len(data))] = fuzz.randrange(256)
        try:
            decode_packet(bytes(data))
        except wire.WireError:
            pass
        count += 1
    assert count >= 100_000

    elapsed = time.monotonic() - started
    assert elapsed < 60, f"wire canonicality took {elapsed:.1f}s"
    _pass(f"wire-canonicality ({elapsed:.1f}s)")


# -- 2. security soundness ---------------------------------------------------


def test_acceptance_security_soundness():
    rng = random.Random(20_240_003)
    keys, cert = generate_identity("alice@example.com", APP, entropy=rng.randbytes)

    objs = []
    for i in range(1_000):
        obj = sign_object(
            parse_uri(f"/3DEditor/alice@example.com/doc/seq={i}"),
            ContentType.BLOB,
            rng.randbytes(rng.randint(1, 64)),
            keys,
            cert.name,
            i,
        )
        assert security.verify_signature(obj, keys.public)
        objs.append(obj)

    for i in range(1_000):
        obj = objs[i]
        tamper_sig = rng.random() < 0.5
        if tamper_sig:
            sig = bytearray(obj.sig_value)
            sig[rng.randrange(64)] ^= 1 << rng.randrange(8)
            mutated = wire.SwoObject(
                name=obj.name,
                content_type=obj.content_type,
                timestamp_ms=obj.timestamp_ms,
                content=obj.content,
                sig_type=obj.sig_type,
                key_locator=obj.key_locator,
                sig_value=bytes(sig),
            )
        else:
            body = bytearray(obj.content)
            body[rng.randrange(len(body))] ^= 1 << rng.randrange(8)
            mutated = wire.SwoObject(
                name=obj.name,
                content_type=obj.content_type,
                timestamp_ms=obj.timestamp_ms,
                content=bytes(body),
                sig_type=obj.sig_type,
                key_locator=obj.key_locator,
                sig_value=obj.sig_value,
            )
        assert not security.verify_signature(mutated, keys.public)

    # schema corpus: the application rule accepts the owner, rejects impostors
    bob_keys, bob_cert = generate_identity(
        "bob@example.com", APP, entropy=random.Random(20_240_004).randbytes
    )
    schema = compile_schema(
        "rule u: /3DEditor/<user>/** <= /3DEditor/<user>/KEY/**",
        anchors=[cert, bob_cert],
    )
    store = {cert.name: cert, bob_cert.name: bob_cert}
    honest = validate(objs[0], schema, store)
    assert honest.accepted and honest.chain

    forged = sign_object(
        parse_uri("/3DEditor/alice@example.com/doc/seq=0"),
        ContentType.BLOB,
        b"impostor",
        bob_keys,
        bob_cert.name,
        0,
    )
    verdict = validate(forged, schema, store)
    assert not verdict.accepted and verdict.reason == "KeyMismatch"
    _pass("security-soundness")


# -- 3. trust chains ------------------------------------------------------------


def test_acceptance_trust_chains():
    rng = random.Random(20_240_005)
    users = [
        generate_identity(f"user{i}@example.com", APP, entropy=rng.randbytes)
        for i in range(5)
    ]
    store = {cert.name: cert for _, cert in users}
    for i in range(4):
        e = endorse(users[i][1], users[i + 1][0], users[i + 1][1].name, i)
        store[e.name] = e

    obj = sign_object(
        parse_uri("/3DEditor/user0@example.com/doc/seq=1"),
        ContentType.BLOB,
        b"x",
        users[0][0],
        users[0][1].name,
        0,
    )
    rule = "rule u: /3DEditor/<user>/** <= /3DEditor/<user>/KEY/**"

    for depth in (1, 2, 3, 4):
        anchor = users[depth - 1][1]
        at_depth = validate(
            obj, compile_schema(rule, anchors=[anchor], max_chain_depth=depth), store
        )
        assert at_depth.accepted, f"depth {depth} must be accepted"
        assert len(at_depth.chain) == depth
        assert len(set(at_depth.chain)) == len(at_depth.chain), "chain must be acyclic"

        too_shallow = validate(
            obj,
            compile_schema(rule, anchors=[anchor], max_chain_depth=depth - 1),
            store,
        )
        if depth > 1:
            assert not too_shallow.accepted, f"depth {depth} must fail at limit {depth-1}"
    _pass("trust-chains")


# -- 4. offline relay scenario ---------------------------------------------------


def test_acceptance_alice_bob_jane():
    started = time.monotonic()
    first = run_scenario(builtin_scenario("alice-bob-jane", seed=11))
    second = run_scenario(builtin_scenario("alice-bob-jane", seed=11))
    assert first.ok, first.failures
    assert first.text() == second.text(), "transcripts must be byte-identical"
    chain_lines = [
        line
        for line in first.lines
        if "expect PASS validated jane" in line and "chain=" in line
    ]
    assert chain_lines and "KEY" in chain_lines[0]
    elapsed = time.monotonic() - started
    assert elapsed < 5, f"scenario pair took {elapsed:.1f}s"
    _pass(f"alice-bob-jane offline relay ({elapsed:.2f}s for two runs)")


# -- 5. CRDT convergence oracle ---------------------------------------------------


def test_acceptance_crdt_convergence():
    started = time.monotonic()
    rng = random.Random(20_240_006)
    nodes = [
        Name([b"alice@example.com"]),
        Name([b"bob@example.com"]),
        Name([b"jane@example.com"]),
    ]
    op_sets = 0
    permutations_checked = 0
    while op_sets < 500:
        ops = generate_op_set(rng, nodes, max_ops=6)
        reference = replay(ops)
        for perm in permutations(ops):
            assert replay(perm) == reference
            permutations_checked += 1
        op_sets += 1
    elapsed = time.monotonic() - started
    assert elapsed < 300, f"convergence oracle took {elapsed:.1f}s"
    _pass(
        f"crdt-convergence ({op_sets} op sets, "
        f"{permutations_checked} permutations, {elapsed:.1f}s)"
    )


# -- 6. sync liveness on rings and stars ---------------------------------------


def _bare_sync_cluster(tmp_path, n: int, edges):
    """n bare sync nodes joined per the edge list; returns world handles."""
    from swo.forwarding import Consumer, Forwarder
    from swo.repo import Repo
    from swo.runtime import VirtualScheduler
    from swo.sync import Signer, SyncGroup

    sched = VirtualScheduler()
    group_prefix = parse_uri("/3DEditor/docA")
    nodes = []
    for i in range(n):
        rng = random.Random(1000 + i)
        keys, cert = generate_identity(
            f"n{i}@example.com", APP, entropy=rng.randbytes
        )
        fwd = Forwarder(sched, label=f"n{i}")
        repo = Repo(tmp_path / f"n{i}", clock_ms=sched.now_ms)
        repo.attach(fwd, [APP])
        consumer = Consumer(fwd, sched, rng)
        group = SyncGroup(
            group_prefix,
            Name([f"n{i}@example.com"]),
            repo=repo,
            forwarder=fwd,
            scheduler=sched,
            rng=rng,
            signer=Signer(keys, cert.name),
            fetcher=lambda name, cb, prefix=False, c=consumer: c.fetch(
                name, cb, prefix=prefix
            ),
        )
        fwd.register_prefix(group.face_id, APP)
        nodes.append({"fwd": fwd, "repo": repo, "group": group})
    def link(a: int, b: int) -> None:
        fa, fb = nodes[a]["fwd"], nodes[b]["fwd"]
        box = {}

        def mk(dst, key):
            def send(data):
                sched.call_later(1, lambda: dst.handle_packet(box[key], data))

            return send

        box["a"] = fa.add_face(mk(fb, "b"), f"to{b}")
        box["b"] = fb.add_face(mk(fa, "a"), f"to{a}")
        fa.register_prefix(box["a"], APP)
        fb.register_prefix(box["b"], APP)

    for a, b in edges:
        link(a, b)
    for node in nodes:
        node["group"].start()
    return sched, nodes


@pytest.mark.parametrize(
    "topology,edges",
    [
        ("ring", [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]),
        ("star", [(0, 1), (0, 2), (0, 3), (0, 4)]),
    ],
)
def test_acceptance_sync_liveness(tmp_path, topology, edges):
    from swo.sync import DEFAULT_HEARTBEAT_MS

    sched, nodes = _bare_sync_cluster(tmp_path / topology, 5, edges)
    try:
        sched.run_for(1_000)
        publisher = nodes[2]["group"]
        obj = publisher.publish(ContentType.BLOB, b"liveness probe")
        publish_time = sched.now_ms()
        deadline = publish_time + 3 * DEFAULT_HEARTBEAT_MS

        prev_vectors = [dict(n["group"].local_vector.entries) for n in nodes]
        converged_at = None
        while sched.now_ms() < deadline:
            sched.run_for(50)
            for node, prev in zip(nodes, prev_vectors):
                current = node["group"].local_vector.entries
                for key, value in prev.items():
                    assert current.get(key, 0) >= value, "vectors must be monotone"
                prev_vectors[nodes.index(node)] = dict(current)
            if all(n["repo"].has(obj.name) for n in nodes):
                converged_at = sched.now_ms()
                break
        assert converged_at is not None, f"{topology}: publish did not reach all nodes"
        rounds = (converged_at - publish_time) / DEFAULT_HEARTBEAT_MS
        assert rounds <= 3, f"{topology}: took {rounds:.2f} sync rounds"
        for node in nodes:
            assert node["group"].local_vector.get(Name([b"n2@example.com"])) == 1
        _pass(
            f"sync-liveness {topology} (converged in {converged_at - publish_time} ms"
            f" = {rounds:.3f} rounds)"
        )
    finally:
        for node in nodes:
            node["group"].stop()
            node["repo"].close()


# -- 7. cache offload -----------------------------------------------------------


def test_acceptance_cache_offload():
    transcript = run_scenario(builtin_scenario("cache-line", seed=7))
    assert transcript.ok, transcript.failures
    summary = metrics(transcript)
    assert summary["nodes"]["producer"]["sent_objects"] == 1
    assert summary["nodes"]["relay"]["cache_hits"] == 1
    _pass("cache-offload (1 producer tx, 1 cache hit for 2 fetches)")


# -- 8. manifest integrity ---------------------------------------------------------


def test_acceptance_manifest_integrity():
    from swo import manifests

    rng = random.Random(20_240_007)
    keys, cert = generate_identity("alice@example.com", APP, entropy=rng.randbytes)
    payload = rng.randbytes(150_000)
    manifest, segments = manifests.blob_collection(
        payload, parse_uri("/3DEditor/alice@example.com/blob/v=1"), keys, cert.name
    )
    assert len(segments) == 3
    store = {o.name: o for o in segments + [manifest]}
    assert manifests.fetch_collection(manifest.name, store.get) == payload

    for victim in segments:
        corrupted = dict(store)
        corrupted[victim.name] = security.digest_object(
            victim.name, ContentType.BLOB, b"corrupted", victim.timestamp_ms
        )
        with pytest.raises(manifests.IntegrityFailure) as err:
            manifests.fetch_collection(manifest.name, corrupted.get)
        assert err.value.child == victim.name
    _pass("manifest-integrity (150000-byte round trip, corruption localized)")

"""Shared deterministic generators for property-style tests."""

from __future__ import annotations

import random

import pytest

from swo.names import MAX_COMPONENT_LEN, Name
from swo.wire import ContentType, Request, SigType, SwoObject


def random_name(rng: random.Random, max_comps: int = 6, max_len: int = 24) -> Name:
    n = rng.randint(0, max_comps)
    comps = []
    for _ in range(n):
        ln = rng.randint(1, min(max_len, MAX_COMPONENT_LEN))
        comps.append(rng.randbytes(ln))
    return Name(comps)


def random_nonempty_name(rng: random.Random, **kw) -> Name:
    while True:
        name = random_name(rng, **kw)
        if len(name) > 0:
            return name


def random_request(rng: random.Random) -> Request:
    name = random_name(rng)
    can_be_prefix = rng.random() < 0.3 or len(name) == 0
    return Request(
        name=name,
        can_be_prefix=can_be_prefix,
        nonce=rng.randbytes(4),
        lifetime_ms=rng.choice([0, 1, 4000, 65535, 2**20]),
        app_params=rng.randbytes(rng.randint(0, 40)) if rng.random() < 0.4 else None,
    )


def random_object(rng: random.Random) -> SwoObject:
    name = random_nonempty_name(rng)
    sig_type = rng.choice([SigType.DIGEST, SigType.ED25519])
    if sig_type == SigType.DIGEST:
        key_locator = None
        sig_value = rng.randbytes(32)
    else:
        key_locator = random_nonempty_name(rng)
        sig_value = rng.randbytes(64)
    return SwoObject(
        name=name,
        content_type=rng.choice(list(ContentType)),
        timestamp_ms=rng.choice([0, 1, 255, 256, 2**31, 2**40]),
        content=rng.randbytes(rng.randint(0, 200)),
        sig_type=sig_type,
        key_locator=key_locator,
        sig_value=sig_value,
    )


def random_packet_bytes(rng: random.Random) -> bytes:
    from swo.wire import encode_object, encode_request

    if rng.random() < 0.5:
        return encode_request(random_request(rng))
    return encode_object(random_object(rng))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)


# -- multi-node virtual networks for integration tests -------------------------

WORKSPACE_RULE = "rule updates: /3DEditor/*/<user>/** <= /3DEditor/<user>/KEY/**"


class VirtualNet:
    """Full nodes over 1 ms in-memory links on one virtual scheduler."""

    def __init__(self, tmp_path, labels, schema_rule=WORKSPACE_RULE, heartbeat_ms=30_000):
        from swo.names import parse_uri
        from swo.node import Node
        from swo.repo import Repo
        from swo.runtime import VirtualScheduler
        from swo.security import compile_schema

        self.scheduler = VirtualScheduler()
        self.app = parse_uri("/3DEditor")
        self.nodes: dict[str, Node] = {}
        self.links: dict[frozenset, dict] = {}
        for label in labels:
            rng = random.Random(sum(label.encode()) * 7919 + 13)
            node = Node.bootstrap(
                label,
                f"{label}@example.com",
                self.scheduler,
                self.app,
                Repo(tmp_path / label, clock_ms=self.scheduler.now_ms),
                schema=compile_schema(schema_rule),
                rng=rng,
                heartbeat_ms=heartbeat_ms,
            )
            self.nodes[label] = node

    def mutual_endorse(self, a: str, b: str) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        ea = na.endorse_peer(nb.cert)
        nb.install_certificate(na.cert)
        nb.install_certificate(ea)
        eb = nb.endorse_peer(na.cert)
        na.install_certificate(nb.cert)
        na.install_certificate(eb)

    def link(self, a: str, b: str) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        fids = {}

        def mk(dst, key):
            def send(data):
                self.scheduler.call_later(
                    1, lambda: dst.forwarder.handle_packet(fids[key], data)
                )

            return send

        fids["b"] = nb.add_link_face(mk(na, "a"), f"link:{a}")
        fids["a"] = na.add_link_face(mk(nb, "b"), f"link:{b}")
        self.links[frozenset((a, b))] = fids

    def unlink(self, a: str, b: str) -> None:
        fids = self.links.pop(frozenset((a, b)))
        self.nodes[a].remove_link_face(fids["a"])
        self.nodes[b].remove_link_face(fids["b"])

    def run(self, ms: int) -> None:
        self.scheduler.run_for(ms)

    def close(self) -> None:
        for node in self.nodes.values():
            node.close()

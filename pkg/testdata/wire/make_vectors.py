#!/usr/bin/env python3
"""Regenerate the golden wire vectors. Run from the repo root:

    python3 testdata/wire/make_vectors.py
"""

import hashlib
import json
from pathlib import Path

from swo.names import parse_uri
from swo.security import KeyPair, sign_object
from swo.wire import (
    ContentType,
    Request,
    SigType,
    SwoObject,
    encode_object,
    encode_request,
)

OUT = Path(__file__).parent


def digest_obj(name, content_type, timestamp, content):
    from swo.wire import signed_portion_fields

    portion = signed_portion_fields(
        parse_uri(name), content_type, timestamp, content, SigType.DIGEST, None
    )
    return SwoObject(
        name=parse_uri(name),
        content_type=content_type,
        timestamp_ms=timestamp,
        content=content,
        sig_type=SigType.DIGEST,
        key_locator=None,
        sig_value=hashlib.sha256(portion).digest(),
    )


def main() -> None:
    vectors = []

    obj = digest_obj("/A", ContentType.BLOB, 0, b"")
    vectors.append(
        {
            "file": "object_minimal_digest.bin",
            "kind": "object",
            "name": "/A",
            "content_type": 0,
            "timestamp_ms": 0,
            "content_hex": "",
            "sig_type": 0,
            "key_locator": None,
        }
    )
    (OUT / "object_minimal_digest.bin").write_bytes(encode_object(obj))

    seed = bytes(range(32))
    keys = KeyPair(
        public=__import__(
            "cryptography.hazmat.primitives.asymmetric.ed25519",
            fromlist=["Ed25519PrivateKey"],
        )
        .Ed25519PrivateKey.from_private_bytes(seed)
        .public_key()
        .public_bytes_raw(),
        secret=seed,
        key_name=parse_uri("/3DEditor/alice@example.com") + [b"KEY", b"0011223344556677"],
    )
    locator = keys.key_name + [b"self", b"v=1"]
    signed = sign_object(
        parse_uri("/3DEditor/alice@example.com/doc/seq=1"),
        ContentType.CRDT_UPDATE,
        b"hello",
        keys,
        locator,
        1_700_000_000_000,
    )
    vectors.append(
        {
            "file": "object_ed25519.bin",
            "kind": "object",
            "name": "/3DEditor/alice@example.com/doc/seq=1",
            "content_type": 7,
            "timestamp_ms": 1_700_000_000_000,
            "content_hex": b"hello".hex(),
            "sig_type": 4,
            "key_locator": str(locator),
        }
    )
    (OUT / "object_ed25519.bin").write_bytes(encode_object(signed))

    req = Request(
        name=parse_uri("/a"), nonce=bytes.fromhex("00000001"), lifetime_ms=4000
    )
    vectors.append(
        {
            "file": "request_basic.bin",
            "kind": "request",
            "name": "/a",
            "can_be_prefix": False,
            "nonce_hex": "00000001",
            "lifetime_ms": 4000,
            "app_params_hex": None,
        }
    )
    (OUT / "request_basic.bin").write_bytes(encode_request(req))

    req2 = Request(
        name=parse_uri("/3DEditor/docA/sync/p=0011aabb00000000"),
        can_be_prefix=False,
        nonce=bytes.fromhex("cafebabe"),
        lifetime_ms=65535,
        app_params=bytes.fromhex("710041"),
    )
    vectors.append(
        {
            "file": "request_params.bin",
            "kind": "request",
            "name": "/3DEditor/docA/sync/p=0011aabb00000000",
            "can_be_prefix": False,
            "nonce_hex": "cafebabe",
            "lifetime_ms": 65535,
            "app_params_hex": "710041",
        }
    )
    (OUT / "request_params.bin").write_bytes(encode_request(req2))

    req3 = Request(
        name=parse_uri("/b%2Fc/seq=10"),
        can_be_prefix=True,
        nonce=bytes.fromhex("00000000"),
        lifetime_ms=0,
    )
    vectors.append(
        {
            "file": "request_prefix.bin",
            "kind": "request",
            "name": "/b%2Fc/seq=10",
            "can_be_prefix": True,
            "nonce_hex": "00000000",
            "lifetime_ms": 0,
            "app_params_hex": None,
        }
    )
    (OUT / "request_prefix.bin").write_bytes(encode_request(req3))

    (OUT / "vectors.json").write_text(json.dumps(vectors, indent=2) + "\n")
    print(f"wrote {len(vectors)} vectors to {OUT}")


if __name__ == "__main__":
    main()

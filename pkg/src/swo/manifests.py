"""Signed collections: manifests listing (child name, digest) pairs.

A manifest makes a composite or oversized payload fetchable as a tree of
individually named objects. Children may themselves be manifests. Blobs
larger than the segment cap are split into DIGEST-integrity segments named
``<base>/seg=<i>``; the signed manifest over their digests carries the
authenticity of the whole.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Optional

from . import security, wire
from .names import Name
from .security import KeyPair
from .wire import ContentType, SwoObject

SEGMENT_CONTENT_CAP = 60_000
MAX_MANIFEST_DEPTH = 8

TLV_MANIFEST_ENTRY = 0x90
TLV_CHILD_DIGEST = 0x91


class ManifestError(Exception):
    pass


class IntegrityFailure(ManifestError):
    def __init__(self, child: Name):
        super().__init__(f"digest mismatch for {child}")
        self.child = child


class MissingChild(ManifestError):
    def __init__(self, child: Name):
        super().__init__(f"missing child {child}")
        self.child = child


class DepthExceeded(ManifestError):
    pass


def child_digest(obj: SwoObject) -> bytes:
    return hashlib.sha256(obj.wire()).digest()


def encode_entries(entries: list[tuple[Name, bytes]]) -> bytes:
    out = bytearray()
    for name, digest in entries:
        body = wire.encode_name(name) + wire._tlv(TLV_CHILD_DIGEST, digest)
        out += wire._tlv(TLV_MANIFEST_ENTRY, body)
    return bytes(out)


def decode_entries(raw: bytes) -> list[tuple[Name, bytes]]:
    entries = []
    off = 0
    while off < len(raw):
        t, value, off = wire._read_tlv(raw, off)
        if t != TLV_MANIFEST_ENTRY:
            raise wire.UnknownTlv(f"0x{t:02X} inside manifest")
        nt, nvalue, end = wire._read_tlv(value, 0)
        if nt != wire.TLV_NAME:
            raise wire.UnknownTlv("manifest entry must start with a name")
        name = wire.decode_name_value(nvalue)
        dt, digest, end = wire._read_tlv(value, end)
        if dt != TLV_CHILD_DIGEST or end != len(value):
            raise wire.BadValue("malformed manifest entry")
        if len(digest) != 32:
            raise wire.BadValue("child digest must be 32 bytes")
        entries.append((name, digest))
    return entries


def segment_blob(
    payload: bytes, base_name: Name, timestamp_ms: int = 0
) -> list[SwoObject]:
    """Split payload into DIGEST-integrity segments under base_name."""
    segments = []
    for i in range(0, max(1, -(-len(payload) // SEGMENT_CONTENT_CAP))):
        chunk = payload[i * SEGMENT_CONTENT_CAP : (i + 1) * SEGMENT_CONTENT_CAP]
        segments.append(
            security.digest_object(
                base_name + [b"seg=%d" % i], ContentType.BLOB, chunk, timestamp_ms
            )
        )
    return segments


def build_manifest(
    children: list[SwoObject],
    name: Name,
    key: KeyPair,
    key_locator: Name,
    timestamp_ms: int = 0,
) -> SwoObject:
    """Sign a manifest listing the children in the given order.

    Raises Oversize when the entry list exceeds one object's capacity; the
    caller then nests manifests.
    """
    if not children:
        raise ManifestError("manifest needs at least one child")
    entries = [(child.name, child_digest(child)) for child in children]
    return security.sign_object(
        name,
        ContentType.MANIFEST,
        encode_entries(entries),
        key,
        key_locator,
        timestamp_ms,
    )


def blob_collection(
    payload: bytes,
    name: Name,
    key: KeyPair,
    key_locator: Name,
    timestamp_ms: int = 0,
) -> tuple[SwoObject, list[SwoObject]]:
    """Segment an oversized payload and sign its manifest; returns
    (manifest, segments)."""
    segments = segment_blob(payload, name, timestamp_ms)
    manifest = build_manifest(segments, name, key, key_locator, timestamp_ms)
    return manifest, segments


def fetch_collection(
    manifest_name: Name,
    fetch: Callable[[Name], Optional[SwoObject]],
    max_depth: int = MAX_MANIFEST_DEPTH,
    _root: Optional[SwoObject] = None,
) -> bytes:
    """Fetch a manifest tree by name, digest-checking every child, and
    return the leaf contents concatenated in manifest order."""
    manifest = _root if _root is not None else fetch(manifest_name)
    if manifest is None:
        raise MissingChild(manifest_name)
    if manifest.content_type != ContentType.MANIFEST:
        raise ManifestError(f"{manifest_name} is not a manifest")
    if max_depth <= 0:
        raise DepthExceeded(str(manifest_name))
    out = bytearray()
    for child_name, digest in decode_entries(manifest.content):
        child = fetch(child_name)
        if child is None:
            raise MissingChild(child_name)
        if child_digest(child) != digest:
            raise IntegrityFailure(child_name)
        if child.content_type == ContentType.MANIFEST:
            out += fetch_collection(child_name, fetch, max_depth - 1, _root=child)
        else:
            out += child.content
    return bytes(out)

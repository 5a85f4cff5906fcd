"""The collaborative workspace: CRDT edits batched into signed update
objects, published through sync, validated against the trust schema, and
applied with per-character provenance.

Batch payload encoding (content of a CRDT_UPDATE object):

    OP_INSERT 0x80 { COUNTER 0x82, NAME 0x07 (node suffix),
                     REF 0x83 { COUNTER, NAME } (absent = HEAD),
                     TEXT 0x85 (one UTF-8 character) }
    OP_DELETE 0x81 { COUNTER 0x82, NAME 0x07,
                     TARGET 0x84 { COUNTER, NAME } }

Ops in a batch belong to the publishing node, ascending and contiguous.
"""

from __future__ import annotations

from typing import Callable, Optional

from . import manifests, security, wire
from .crdt import CrdtDoc, DeleteOp, InsertOp, OpId
from .names import Name
from .security import TrustSchema, ValidationResult
from .sync import SyncGroup, _parse_seq
from .wire import ContentType, SwoObject

OP_INSERT = 0x80
OP_DELETE = 0x81
TLV_COUNTER = 0x82
TLV_REF = 0x83
TLV_TARGET = 0x84
TLV_TEXT = 0x85

DEFAULT_BATCH_MS = 250
MAX_CERT_FETCHES = 8


class RejectedUpdate(Exception):
    """Schema validation failed; the update is discarded and counted."""

    def __init__(self, result: ValidationResult):
        super().__init__(str(result))
        self.result = result


# -- batch codec --------------------------------------------------------------


def _encode_opid(tlv_type: int, opid: OpId) -> bytes:
    body = wire._tlv(TLV_COUNTER, wire.enc_uint(opid.counter)) + wire.encode_name(
        opid.node
    )
    return wire._tlv(tlv_type, body)


def _decode_opid(raw: bytes, what: str) -> OpId:
    ct, cvalue, off = wire._read_tlv(raw, 0)
    if ct != TLV_COUNTER:
        raise wire.BadValue(f"{what} must start with a counter")
    nt, nvalue, off = wire._read_tlv(raw, off)
    if nt != wire.TLV_NAME or off != len(raw):
        raise wire.BadValue(f"malformed {what}")
    counter = wire.dec_uint(cvalue)
    if counter < 1:
        raise wire.BadValue("counter must be >= 1")
    return OpId(counter, wire.decode_name_value(nvalue))


def encode_ops(ops: list) -> bytes:
    out = bytearray()
    for op in ops:
        if isinstance(op, InsertOp):
            body = bytearray()
            body += wire._tlv(TLV_COUNTER, wire.enc_uint(op.id.counter))
            body += wire.encode_name(op.id.node)
            if op.ref is not None:
                body += _encode_opid(TLV_REF, op.ref)
            body += wire._tlv(TLV_TEXT, op.ch.encode("utf-8"))
            out += wire._tlv(OP_INSERT, bytes(body))
        elif isinstance(op, DeleteOp):
            body = bytearray()
            body += wire._tlv(TLV_COUNTER, wire.enc_uint(op.id.counter))
            body += wire.encode_name(op.id.node)
            body += _encode_opid(TLV_TARGET, op.target)
            out += wire._tlv(OP_DELETE, bytes(body))
        else:
            raise TypeError(f"not a CRDT op: {op!r}")
    return bytes(out)


def decode_ops(raw: bytes) -> list:
    ops = []
    off = 0
    while off < len(raw):
        t, value, off = wire._read_tlv(raw, off)
        ct, cvalue, pos = wire._read_tlv(value, 0)
        if ct != TLV_COUNTER:
            raise wire.BadValue("op must start with a counter")
        counter = wire.dec_uint(cvalue)
        nt, nvalue, pos = wire._read_tlv(value, pos)
        if nt != wire.TLV_NAME:
            raise wire.BadValue("op missing node name")
        opid = OpId(counter, wire.decode_name_value(nvalue))
        if t == OP_INSERT:
            ref = None
            ft, fvalue, end = wire._read_tlv(value, pos)
            if ft == TLV_REF:
                ref = _decode_opid(fvalue, "ref")
                ft, fvalue, end = wire._read_tlv(value, end)
            if ft != TLV_TEXT or end != len(value):
                raise wire.BadValue("malformed insert op")
            text = fvalue.decode("utf-8", errors="strict")
            try:
                ops.append(InsertOp(opid, ref, text))
            except ValueError as exc:
                raise wire.BadValue(str(exc)) from None
        elif t == OP_DELETE:
            ft, fvalue, end = wire._read_tlv(value, pos)
            if ft != TLV_TARGET or end != len(value):
                raise wire.BadValue("malformed delete op")
            try:
                ops.append(DeleteOp(opid, _decode_opid(fvalue, "target")))
            except ValueError as exc:
                raise wire.BadValue(str(exc)) from None
        else:
            raise wire.UnknownTlv(f"0x{t:02X} is not a CRDT op")
    return ops


def batch_publisher(batch_name: Name, group_prefix: Name) -> Optional[Name]:
    """Node suffix from ``<group>/<suffix...>/seq=<n>``."""
    plen = len(group_prefix)
    comps = batch_name.components
    if len(comps) < plen + 2 or not group_prefix.is_prefix_of(batch_name):
        return None
    if _parse_seq(comps[-1]) is None:
        return None
    return Name(comps[plen:-1])


# -- module-level operations ---------------------------------------------------


def local_insert(doc: CrdtDoc, position: int, text: str, origin=None) -> list:
    return doc.local_insert(position, text, origin)


def local_delete(doc: CrdtDoc, position: int, length: int, origin=None) -> list:
    return doc.local_delete(position, length, origin)


def snapshot(doc: CrdtDoc):
    return doc.snapshot()


def apply_remote(
    doc: CrdtDoc,
    batch: SwoObject,
    schema: TrustSchema,
    cert_store,
    group_prefix: Optional[Name] = None,
) -> int:
    """Validate a batch and integrate its ops; returns how many applied now.

    Ops with unmet dependencies buffer inside the doc and apply when the
    missing updates arrive. Raises RejectedUpdate when validation fails or
    the batch is malformed.
    """
    if batch.content_type != ContentType.CRDT_UPDATE:
        raise RejectedUpdate(
            security._rejected(security.REASON_NO_RULE, "not a CRDT update")
        )
    result = security.validate(batch, schema, cert_store)
    if not result.accepted:
        raise RejectedUpdate(result)
    try:
        ops = decode_ops(batch.content)
    except wire.WireError as exc:
        raise RejectedUpdate(
            security._rejected(security.REASON_NO_RULE, f"bad batch: {exc}")
        ) from None
    if group_prefix is not None:
        publisher = batch_publisher(batch.name, group_prefix)
        bad = publisher is None or any(op.id.node != publisher for op in ops)
        if bad:
            raise RejectedUpdate(
                security._rejected(
                    security.REASON_KEY_MISMATCH, "op author differs from publisher"
                )
            )
    for prev, op in zip(ops, ops[1:]):
        if op.id.counter != prev.id.counter + 1:
            raise RejectedUpdate(
                security._rejected(security.REASON_NO_RULE, "non-contiguous batch")
            )
    applied = 0
    origin = batch.key_locator
    for op in ops:
        applied += doc.integrate(op, origin)
    return applied


# -- the live session ----------------------------------------------------------


class WorkspaceSession:
    """Glue between a CRDT doc, a sync group, and the trust machinery.

    Local edits batch for batch_ms before publishing. Remote batches
    validate before applying; when validation wants a certificate we do not
    hold, it is fetched by name over the network and the batch retries on
    arrival.
    """

    def __init__(
        self,
        doc: CrdtDoc,
        group: SyncGroup,
        schema: TrustSchema,
        cert_store: dict[Name, security.Certificate],
        scheduler,
        fetcher: Optional[Callable] = None,
        repo=None,
        batch_ms: int = DEFAULT_BATCH_MS,
        own_cert_name: Optional[Name] = None,
        events: Optional[Callable[..., None]] = None,
        on_change: Optional[Callable[[], None]] = None,
        online_fn: Optional[Callable[[], bool]] = None,
        label: str = "ws",
    ):
        self.doc = doc
        self.group = group
        self.schema = schema
        self.cert_store = cert_store
        self.scheduler = scheduler
        self.fetcher = fetcher
        self.repo = repo
        self.batch_ms = batch_ms
        self.own_cert_name = own_cert_name
        self._events = events
        self.on_change = on_change
        self.online_fn = online_fn or (lambda: True)
        self.label = label
        self._staged: list = []
        self._flush_timer = None
        self.counters = {"applied_batches": 0, "rejected_batches": 0}
        group.on_publication = self._on_publication

    # -- editing -------------------------------------------------------------

    def insert(self, position: int, text: str) -> None:
        ops = self.doc.local_insert(position, text, origin=self.own_cert_name)
        self._stage(ops)

    def delete(self, position: int, length: int) -> None:
        ops = self.doc.local_delete(position, length, origin=self.own_cert_name)
        self._stage(ops)

    def _stage(self, ops: list) -> None:
        if not ops:
            return
        self._staged.extend(ops)
        if self._flush_timer is None:
            self._flush_timer = self.scheduler.call_later(self.batch_ms, self.flush)
        if self.on_change is not None:
            self.on_change()

    def flush(self) -> list[SwoObject]:
        """Publish staged ops, split so every update object stays under the
        segment cap (a large paste would otherwise force a manifest, which
        peers do not accept as an update)."""
        if self._flush_timer is not None:
            self._flush_timer.cancel()
            self._flush_timer = None
        if not self._staged:
            return []
        ops, self._staged = self._staged, []
        published = []
        chunk: list[bytes] = []
        size = 0
        for op in ops:
            encoded = encode_ops([op])
            if chunk and size + len(encoded) > manifests.SEGMENT_CONTENT_CAP:
                published.append(self._publish_chunk(chunk, size))
                chunk, size = [], 0
            chunk.append(encoded)
            size += len(encoded)
        if chunk:
            published.append(self._publish_chunk(chunk, size))
        return published

    def _publish_chunk(self, chunk: list[bytes], size: int) -> SwoObject:
        obj = self.group.publish(ContentType.CRDT_UPDATE, b"".join(chunk))
        self._event("batch_published", name=str(obj.name), ops=len(chunk), size=size)
        return obj

    # -- remote application ----------------------------------------------------

    def _on_publication(self, obj: SwoObject) -> None:
        self._consider(obj, tries=0)

    def _consider(self, obj: SwoObject, tries: int) -> None:
        try:
            applied = apply_remote(
                self.doc, obj, self.schema, self.cert_store, self.group.group_prefix
            )
        except RejectedUpdate as rej:
            self._handle_rejection(obj, rej.result, tries)
            return
        self.counters["applied_batches"] += 1
        if self.repo is not None:
            self.repo.mark_verified(obj.name)
        if self._events is not None:
            result = security.validate(obj, self.schema, self.cert_store)
            self._event(
                "batch_applied",
                name=str(obj.name),
                applied=applied,
                chain="|".join(str(n) for n in result.chain),
            )
        if self.on_change is not None:
            self.on_change()

    def _handle_rejection(
        self, obj: SwoObject, result: ValidationResult, tries: int
    ) -> None:
        want_name = _discovery_name(result)
        if (
            want_name is not None
            and self.fetcher is not None
            and tries < MAX_CERT_FETCHES
        ):
            self._event("cert_fetch", wanted=str(want_name), reason=result.reason)
            self.fetcher(
                want_name,
                lambda cert_obj, o=obj, t=tries: self._cert_arrived(o, t, cert_obj),
                True,
            )
            return
        self.counters["rejected_batches"] += 1
        self._event("batch_rejected", name=str(obj.name), result=str(result))

    def _cert_arrived(self, obj: SwoObject, tries: int, cert_obj) -> None:
        if cert_obj is None:
            self.counters["rejected_batches"] += 1
            self._event("batch_rejected", name=str(obj.name), result="cert fetch failed")
            return
        self.import_certificate(cert_obj)
        self._consider(obj, tries + 1)

    def import_certificate(self, obj: SwoObject) -> bool:
        try:
            cert = security.Certificate(obj)
        except security.NotACertificate:
            return False
        if cert.name in self.cert_store:
            return False
        self.cert_store[cert.name] = cert
        if self.repo is not None:
            try:
                self.repo.put(obj)
            except Exception:
                pass
        self._event("cert_imported", name=str(cert.name))
        return True

    # -- views -----------------------------------------------------------------

    def snapshot(self) -> dict:
        text, runs = self.doc.snapshot()
        peers = []
        for node in sorted(
            self.group.local_vector.entries, key=lambda n: n.sort_key()
        ):
            if node == self.group.node_suffix:
                continue
            peers.append(
                {
                    "id": str(node),
                    "seq": self.group.local_vector.get(node),
                    "last_seen_ms": self.group.last_seen.get(node, 0),
                }
            )
        return {
            "text": text,
            "provenance": [
                [start, end, str(origin) if origin is not None else ""]
                for start, end, origin in runs
            ],
            "peers": peers,
            "online": bool(self.online_fn()),
        }

    def _event(self, ev: str, **fields) -> None:
        if self._events is not None:
            self._events(self.label, ev, **fields)


def _discovery_name(result: ValidationResult) -> Optional[Name]:
    """Name to prefix-fetch when validation stalled on certificates: the
    signing key's prefix, whose canonical-order maximum is the newest
    certificate for that key (endorsements sort after self-signed)."""
    if result.reason not in (security.REASON_MISSING_CERT, security.REASON_NO_CHAIN):
        return None
    try:
        from .names import parse_uri

        name = parse_uri(result.detail)
    except Exception:
        return None
    key_name = security.cert_key_name(name)
    return key_name if key_name is not None else name

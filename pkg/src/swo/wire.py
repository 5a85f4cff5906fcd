"""TLV wire format for the two packet kinds.

Encoding is canonical: fixed child order, duplicate and unknown children
rejected, variable-size integers minimal. decode(encode(x)) == x and
re-encoding a decoded packet is byte-identical, so signatures over the
encoded form are well-defined.

Layout (type codes are project-local constants; this table is normative):

    REQUEST  0x05
        NAME          0x07   sequence of COMPONENT 0x08
        CAN_BE_PREFIX 0x21   zero length, present iff true
        NONCE         0x0A   4 bytes
        LIFETIME      0x0C   non-negative integer, milliseconds
        APP_PARAMS    0x24   optional, raw bytes

    OBJECT   0x06
        NAME          0x07
        META          0x14
            CONTENT_TYPE 0x18   non-negative integer
            TIMESTAMP    0x1A   non-negative integer, ms
        CONTENT       0x15   raw bytes, possibly empty
        SIG_INFO      0x16
            SIG_TYPE     0x1B   non-negative integer
            KEY_LOCATOR  0x1C   contains NAME; absent iff SIG_TYPE is DIGEST
        SIG_VALUE     0x17   64 bytes (ED25519) or 32 bytes (DIGEST)

Type and length use a variable-size encoding: values below 253 occupy one
byte; values 253..65535 are a 0xFD marker followed by 2 bytes big-endian.
Larger values are unsupported, which caps any TLV at 64 KiB.

Non-negative integers are minimal big-endian in 1, 2, 4, or 8 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

from .names import MAX_COMPONENT_LEN, MAX_COMPONENTS, Name

TLV_REQUEST = 0x05
TLV_OBJECT = 0x06
TLV_NAME = 0x07
TLV_COMPONENT = 0x08
TLV_NONCE = 0x0A
TLV_LIFETIME = 0x0C
TLV_META = 0x14
TLV_CONTENT = 0x15
TLV_SIG_INFO = 0x16
TLV_SIG_VALUE = 0x17
TLV_CONTENT_TYPE = 0x18
TLV_TIMESTAMP = 0x1A
TLV_SIG_TYPE = 0x1B
TLV_KEY_LOCATOR = 0x1C
TLV_CAN_BE_PREFIX = 0x21
TLV_APP_PARAMS = 0x24

MAX_TLV_LEN = 0xFFFF
VAR_MARKER = 0xFD

DEFAULT_LIFETIME_MS = 4000


class ContentType(IntEnum):
    BLOB = 0
    KEY = 2
    MANIFEST = 6
    CRDT_UPDATE = 7
    SYNC = 8


class SigType(IntEnum):
    DIGEST = 0
    ED25519 = 4


class WireError(Exception):
    """Base for all encode/decode failures."""


class Truncated(WireError):
    pass


class UnknownTlv(WireError):
    pass


class DuplicateField(WireError):
    pass


class BadOrder(WireError):
    pass


class MissingField(WireError):
    pass


class BadValue(WireError):
    pass


class Oversize(WireError):
    pass


# -- varint and integer primitives ----------------------------------------


def write_var(value: int, out: bytearray) -> None:
    if value < 0:
        raise BadValue("negative varint")
    if value < VAR_MARKER:
        out.append(value)
    elif value <= MAX_TLV_LEN:
        out.append(VAR_MARKER)
        out += value.to_bytes(2, "big")
    else:
        raise Oversize(f"varint {value} exceeds {MAX_TLV_LEN}")


def read_var(buf: bytes, off: int) -> tuple[int, int]:
    if off >= len(buf):
        raise Truncated("varint at end of input")
    first = buf[off]
    if first < VAR_MARKER:
        return first, off + 1
    if first != VAR_MARKER:
        raise Oversize(f"unsupported varint marker 0x{first:02X}")
    if off + 3 > len(buf):
        raise Truncated("short 2-byte varint")
    value = int.from_bytes(buf[off + 1 : off + 3], "big")
    if value < VAR_MARKER:
        raise BadValue("non-minimal varint")
    return value, off + 3


def enc_uint(value: int) -> bytes:
    if value < 0:
        raise BadValue("negative integer field")
    for size in (1, 2, 4, 8):
        if value < 1 << (8 * size):
            return value.to_bytes(size, "big")
    raise Oversize(f"integer {value} exceeds 8 bytes")


def dec_uint(raw: bytes) -> int:
    size = len(raw)
    if size not in (1, 2, 4, 8):
        raise BadValue(f"integer field of {size} bytes")
    value = int.from_bytes(raw, "big")
    if size > 1:
        smaller = {2: 1, 4: 2, 8: 4}[size]
        if value < 1 << (8 * smaller):
            raise BadValue("non-minimal integer field")
    return value


def _tlv(tlv_type: int, value: bytes) -> bytes:
    if len(value) > MAX_TLV_LEN:
        raise Oversize(f"TLV 0x{tlv_type:02X} value of {len(value)} bytes")
    out = bytearray()
    write_var(tlv_type, out)
    write_var(len(value), out)
    out += value
    return bytes(out)


# -- name ------------------------------------------------------------------


def encode_name(name: Name) -> bytes:
    out = bytearray()
    for comp in name.components:
        out += _tlv(TLV_COMPONENT, comp)
    return _tlv(TLV_NAME, bytes(out))


def decode_name_value(raw: bytes) -> Name:
    """Decode the value of a NAME TLV (the concatenated components)."""
    comps = []
    off = 0
    while off < len(raw):
        t, off = read_var(raw, off)
        if t != TLV_COMPONENT:
            raise UnknownTlv(f"0x{t:02X} inside name")
        ln, off = read_var(raw, off)
        if off + ln > len(raw):
            raise Truncated("name component overruns")
        comp = raw[off : off + ln]
        off += ln
        if not comp:
            raise BadValue("empty name component")
        if len(comp) > MAX_COMPONENT_LEN:
            raise BadValue("name component too long")
        comps.append(comp)
    if len(comps) > MAX_COMPONENTS:
        raise BadValue("too many name components")
    return Name(comps)


# -- packet types ------------------------------------------------------------


@dataclass(frozen=True)
class Request:
    """Name-addressed fetch message."""

    name: Name
    can_be_prefix: bool = False
    nonce: bytes = b"\x00\x00\x00\x00"
    lifetime_ms: int = DEFAULT_LIFETIME_MS
    app_params: Optional[bytes] = None

    def __post_init__(self):
        if len(self.nonce) != 4:
            raise BadValue("nonce must be 4 bytes")
        if len(self.name) == 0 and not self.can_be_prefix:
            raise BadValue("empty request name requires can_be_prefix")
        if self.lifetime_ms < 0:
            raise BadValue("negative lifetime")


@dataclass(frozen=True)
class SwoObject:
    """Immutable signed data object.

    sig_value covers exactly the signed portion: NAME, META, CONTENT, and
    SIG_INFO TLVs, excluding the outer header and SIG_VALUE.
    """

    name: Name
    content_type: ContentType
    timestamp_ms: int
    content: bytes
    sig_type: SigType
    key_locator: Optional[Name]
    sig_value: bytes
    _wire: Optional[bytes] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.name) == 0:
            raise BadValue("object name must be non-empty")
        if self.sig_type == SigType.DIGEST:
            if self.key_locator is not None:
                raise BadValue("DIGEST object carries no key locator")
            if len(self.sig_value) != 32:
                raise BadValue("DIGEST sig_value must be 32 bytes")
        elif self.sig_type == SigType.ED25519:
            if self.key_locator is None:
                raise BadValue("ED25519 object requires a key locator")
            if len(self.sig_value) != 64:
                raise BadValue("ED25519 sig_value must be 64 bytes")
        else:
            raise BadValue(f"unknown sig_type {self.sig_type}")

    def wire(self) -> bytes:
        w = self._wire
        if w is None:
            w = encode_object(self)
            object.__setattr__(self, "_wire", w)
        return w


# -- encoding ----------------------------------------------------------------


def signed_portion_fields(
    name: Name,
    content_type: int,
    timestamp_ms: int,
    content: bytes,
    sig_type: int,
    key_locator: Optional[Name],
) -> bytes:
    meta = _tlv(TLV_CONTENT_TYPE, enc_uint(int(content_type))) + _tlv(
        TLV_TIMESTAMP, enc_uint(timestamp_ms)
    )
    sig_info = _tlv(TLV_SIG_TYPE, enc_uint(int(sig_type)))
    if key_locator is not None:
        sig_info += _tlv(TLV_KEY_LOCATOR, encode_name(key_locator))
    return (
        encode_name(name)
        + _tlv(TLV_META, meta)
        + _tlv(TLV_CONTENT, content)
        + _tlv(TLV_SIG_INFO, sig_info)
    )


def signed_portion(obj: SwoObject) -> bytes:
    return signed_portion_fields(
        obj.name,
        obj.content_type,
        obj.timestamp_ms,
        obj.content,
        obj.sig_type,
        obj.key_locator,
    )


def encode_object(obj: SwoObject) -> bytes:
    body = signed_portion(obj) + _tlv(TLV_SIG_VALUE, obj.sig_value)
    return _tlv(TLV_OBJECT, body)


def encode_request(req: Request) -> bytes:
    body = encode_name(req.name)
    if req.can_be_prefix:
        body += _tlv(TLV_CAN_BE_PREFIX, b"")
    body += _tlv(TLV_NONCE, req.nonce)
    body += _tlv(TLV_LIFETIME, enc_uint(req.lifetime_ms))
    if req.app_params is not None:
        body += _tlv(TLV_APP_PARAMS, req.app_params)
    return _tlv(TLV_REQUEST, body)


# -- decoding ----------------------------------------------------------------


def _read_tlv(buf: bytes, off: int) -> tuple[int, bytes, int]:
    t, off = read_var(buf, off)
    ln, off = read_var(buf, off)
    if off + ln > len(buf):
        raise Truncated(f"TLV 0x{t:02X} value overruns input")
    return t, buf[off : off + ln], off + ln


def _children(raw: bytes, order: dict[int, int], context: str) -> dict[int, bytes]:
    """Split raw into child TLVs, enforcing the fixed order table."""
    out: dict[int, bytes] = {}
    off = 0
    last_idx = -1
    while off < len(raw):
        t, value, off = _read_tlv(raw, off)
        idx = order.get(t)
        if idx is None:
            raise UnknownTlv(f"0x{t:02X} inside {context}")
        if t in out:
            raise DuplicateField(f"0x{t:02X} inside {context}")
        if idx < last_idx:
            raise BadOrder(f"0x{t:02X} out of order inside {context}")
        last_idx = idx
        out[t] = value
    return out


_OBJECT_ORDER = {
    TLV_NAME: 0,
    TLV_META: 1,
    TLV_CONTENT: 2,
    TLV_SIG_INFO: 3,
    TLV_SIG_VALUE: 4,
}
_META_ORDER = {TLV_CONTENT_TYPE: 0, TLV_TIMESTAMP: 1}
_SIG_INFO_ORDER = {TLV_SIG_TYPE: 0, TLV_KEY_LOCATOR: 1}
_REQUEST_ORDER = {
    TLV_NAME: 0,
    TLV_CAN_BE_PREFIX: 1,
    TLV_NONCE: 2,
    TLV_LIFETIME: 3,
    TLV_APP_PARAMS: 4,
}


def _require(children: dict[int, bytes], tlv_type: int, context: str) -> bytes:
    try:
        return children[tlv_type]
    except KeyError:
        raise MissingField(f"0x{tlv_type:02X} missing from {context}") from None


def _outer(data: bytes, expected_type: int, what: str) -> bytes:
    if not data:
        raise Truncated(f"empty input for {what}")
    t, body, end = _read_tlv(data, 0)
    if t != expected_type:
        raise UnknownTlv(f"outer type 0x{t:02X}, wanted 0x{expected_type:02X}")
    if end != len(data):
        raise BadValue(f"{len(data) - end} trailing bytes after {what}")
    return body


def decode_object(data: bytes) -> SwoObject:
    body = _outer(data, TLV_OBJECT, "object")
    ch = _children(body, _OBJECT_ORDER, "object")
    name = decode_name_value(_require(ch, TLV_NAME, "object"))

    meta = _children(_require(ch, TLV_META, "object"), _META_ORDER, "meta")
    raw_ct = dec_uint(_require(meta, TLV_CONTENT_TYPE, "meta"))
    try:
        content_type = ContentType(raw_ct)
    except ValueError:
        raise BadValue(f"unknown content type {raw_ct}") from None
    timestamp_ms = dec_uint(_require(meta, TLV_TIMESTAMP, "meta"))

    content = _require(ch, TLV_CONTENT, "object")

    sig_info = _children(
        _require(ch, TLV_SIG_INFO, "object"), _SIG_INFO_ORDER, "sig info"
    )
    raw_st = dec_uint(_require(sig_info, TLV_SIG_TYPE, "sig info"))
    try:
        sig_type = SigType(raw_st)
    except ValueError:
        raise BadValue(f"unknown sig type {raw_st}") from None
    key_locator = None
    if TLV_KEY_LOCATOR in sig_info:
        key_locator = decode_name_value(
            _outer_name(sig_info[TLV_KEY_LOCATOR], "key locator")
        )
        if sig_type == SigType.DIGEST:
            raise BadValue("key locator on DIGEST object")
    elif sig_type != SigType.DIGEST:
        raise MissingField("key locator missing for signed object")

    sig_value = _require(ch, TLV_SIG_VALUE, "object")
    return SwoObject(
        name=name,
        content_type=content_type,
        timestamp_ms=timestamp_ms,
        content=content,
        sig_type=sig_type,
        key_locator=key_locator,
        sig_value=sig_value,
        _wire=bytes(data),
    )


def _outer_name(raw: bytes, context: str) -> bytes:
    """Unwrap a NAME TLV nested inside another value; returns its value."""
    t, value, end = _read_tlv(raw, 0)
    if t != TLV_NAME:
        raise UnknownTlv(f"0x{t:02X} inside {context}")
    if end != len(raw):
        raise BadValue(f"trailing bytes inside {context}")
    return value


def decode_request(data: bytes) -> Request:
    body = _outer(data, TLV_REQUEST, "request")
    ch = _children(body, _REQUEST_ORDER, "request")
    name = decode_name_value(_require(ch, TLV_NAME, "request"))
    can_be_prefix = TLV_CAN_BE_PREFIX in ch
    if can_be_prefix and ch[TLV_CAN_BE_PREFIX] != b"":
        raise BadValue("can_be_prefix must be zero length")
    nonce = _require(ch, TLV_NONCE, "request")
    if len(nonce) != 4:
        raise BadValue("nonce must be 4 bytes")
    lifetime = dec_uint(_require(ch, TLV_LIFETIME, "request"))
    app_params = ch.get(TLV_APP_PARAMS)
    return Request(
        name=name,
        can_be_prefix=can_be_prefix,
        nonce=nonce,
        lifetime_ms=lifetime,
        app_params=app_params,
    )


def decode_packet(data: bytes) -> Union[Request, SwoObject]:
    """Decode either packet kind by peeking at the outer type."""
    if not data:
        raise Truncated("empty packet")
    t, _ = read_var(data, 0)
    if t == TLV_REQUEST:
        return decode_request(data)
    if t == TLV_OBJECT:
        return decode_object(data)
    raise UnknownTlv(f"outer type 0x{t:02X}")

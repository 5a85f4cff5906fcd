"""Hierarchical names: URI codec, prefix algebra, canonical ordering.

A name is an ordered list of opaque byte components. Names identify data
objects, keys, and routing prefixes alike; every other module keys on them.

Canonical order compares component-wise, and each component by
(length, then bytes). The shorter name wins when one is a prefix of the
other. Because length precedes byte content, unpadded decimal counters
such as ``seq=9`` / ``seq=10`` sort numerically.
"""

from __future__ import annotations

from typing import Iterable, Union

MAX_COMPONENTS = 32
MAX_COMPONENT_LEN = 255

# Printable ASCII renders literally except the two structural characters;
# everything else is percent-encoded.
_UNRESERVED = frozenset(
    b for b in range(0x21, 0x7F) if b not in (0x2F, 0x25)  # '/' and '%'
)
_HEX_DIGITS = b"0123456789abcdefABCDEF"

# byte value -> canonical URI text for that byte
_ESCAPES = [
    chr(b) if b in _UNRESERVED else "%%%02X" % b for b in range(256)
]


class MalformedUri(ValueError):
    """Input text does not denote a valid name."""


class Name:
    """Immutable hierarchical identifier."""

    __slots__ = ("components", "_key", "_hash")

    components: tuple[bytes, ...]

    def __init__(self, components: Iterable[Union[bytes, str]] = ()):
        comps = tuple(
            c.encode("utf-8") if isinstance(c, str) else bytes(c)
            for c in components
        )
        if len(comps) > MAX_COMPONENTS:
            raise ValueError(f"too many components ({len(comps)} > {MAX_COMPONENTS})")
        for c in comps:
            if not c:
                raise ValueError("empty name component")
            if len(c) > MAX_COMPONENT_LEN:
                raise ValueError(f"component exceeds {MAX_COMPONENT_LEN} bytes")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_key", tuple((len(c), c) for c in comps))
        object.__setattr__(self, "_hash", hash(comps))

    def __setattr__(self, name, value):
        raise AttributeError("Name is immutable")

    # -- sequence-ish access -------------------------------------------------

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Name(self.components[idx])
        return self.components[idx]

    def __iter__(self):
        return iter(self.components)

    def __add__(self, other: Union["Name", Iterable[Union[bytes, str]]]) -> "Name":
        tail = other.components if isinstance(other, Name) else tuple(other)
        return Name(self.components + tuple(
            c.encode("utf-8") if isinstance(c, str) else bytes(c) for c in tail
        ))

    def append(self, component: Union[bytes, str]) -> "Name":
        return self + (component,)

    # -- ordering ------------------------------------------------------------

    def __eq__(self, other) -> bool:
        return isinstance(other, Name) and self.components == other.components

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: "Name") -> bool:
        return self._key < other._key

    def __le__(self, other: "Name") -> bool:
        return self._key <= other._key

    def __gt__(self, other: "Name") -> bool:
        return self._key > other._key

    def __ge__(self, other: "Name") -> bool:
        return self._key >= other._key

    def sort_key(self):
        """Key implementing canonical order, usable with sorted()."""
        return self._key

    def is_prefix_of(self, other: "Name") -> bool:
        n = len(self.components)
        return other.components[:n] == self.components

    # -- text form -------------------------------------------------------------

    def uri(self) -> str:
        return to_uri(self)

    def __str__(self) -> str:
        return to_uri(self)

    def __repr__(self) -> str:
        return f"Name({to_uri(self)!r})"


def parse_uri(uri: str) -> Name:
    """Parse "/"-separated, percent-encoded text into a Name.

    "/" alone yields the empty name, which is valid only as a routing
    prefix, never as an object name.
    """
    if not isinstance(uri, str) or not uri.startswith("/"):
        raise MalformedUri(f"name URI must start with '/': {uri!r}")
    if uri == "/":
        return Name()
    comps = []
    for seg in uri[1:].split("/"):
        if seg == "":
            raise MalformedUri(f"empty component in {uri!r}")
        comps.append(_decode_segment(seg, uri))
    try:
        return Name(comps)
    except ValueError as exc:
        raise MalformedUri(f"{exc} in {uri!r}") from None


def _decode_segment(seg: str, uri: str) -> bytes:
    raw = seg.encode("utf-8")
    if b"%" not in raw:
        return raw
    out = bytearray()
    i = 0
    n = len(raw)
    while i < n:
        b = raw[i]
        if b != 0x25:  # '%'
            out.append(b)
            i += 1
            continue
        if i + 2 >= n or raw[i + 1] not in _HEX_DIGITS or raw[i + 2] not in _HEX_DIGITS:
            raise MalformedUri(f"bad percent escape in {uri!r}")
        out.append(int(raw[i + 1 : i + 3].decode("ascii"), 16))
        i += 3
    return bytes(out)


def to_uri(name: Name) -> str:
    """Render the canonical URI form: minimal escaping, uppercase hex."""
    if not name.components:
        return "/"
    esc = _ESCAPES
    return "/" + "/".join(
        "".join(esc[b] for b in comp) for comp in name.components
    )


def is_prefix_of(prefix: Name, name: Name) -> bool:
    return prefix.is_prefix_of(name)


def compare(a: Name, b: Name) -> int:
    """Canonical total order: -1, 0, or 1."""
    ka, kb = a.sort_key(), b.sort_key()
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0

"""Keys and certificates as data objects, signing, and trust-schema validation.

Keys are Ed25519. A key is named ``<identity>/KEY/<key-id>`` where key-id is
the first 8 bytes of SHA-256 over the raw public key, hex encoded. A
certificate is an object of content type KEY whose content is the raw public
key and whose name extends the key name with ``<issuer-id>/v=<version>``;
issuer-id is the literal ``self`` for self-signed certificates, otherwise the
endorser's key-id.

Trust schemas pair data-name patterns with permitted signer-key-name
patterns. Validation matches the object name against the rules in order
(first match wins), checks the key locator against the rule's key pattern
under the same variable bindings, then searches the certificate store
breadth-first for a chain from the signing key to a trust anchor.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from . import wire
from .names import Name
from .wire import ContentType, SigType, SwoObject

KEY_MARKER = b"KEY"
SELF_ISSUER = b"self"


class SecurityError(Exception):
    pass


class WrongSigType(SecurityError):
    pass


class SelfEndorse(SecurityError):
    pass


class NotACertificate(SecurityError):
    pass


class SchemaParseError(SecurityError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnboundVariable(SecurityError):
    pass


# -- keys and certificates ---------------------------------------------------


def key_id(public: bytes) -> bytes:
    """Key-id component: 8 bytes of SHA-256 over the public key, hex."""
    return hashlib.sha256(public).digest()[:8].hex().encode("ascii")


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    secret: bytes
    key_name: Name

    @classmethod
    def generate(cls, identity: Name, entropy: Optional[Callable[[int], bytes]] = None) -> "KeyPair":
        seed = (entropy or os.urandom)(32)
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        public = priv.public_key().public_bytes_raw()
        return cls(
            public=public,
            secret=seed,
            key_name=identity + [KEY_MARKER, key_id(public)],
        )

    def sign(self, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.secret).sign(message)


class Certificate:
    """A public key wrapped as a signed object.

    Name layout: ``<identity>/KEY/<key-id>/<issuer-id>/v=<version>``.
    """

    __slots__ = ("obj", "key_name", "issuer_id", "version")

    def __init__(self, obj: SwoObject):
        if obj.content_type != ContentType.KEY:
            raise NotACertificate(f"content type {obj.content_type} is not KEY")
        if len(obj.content) != 32:
            raise NotACertificate("certificate content is not a 32-byte key")
        comps = obj.name.components
        if len(comps) < 5 or comps[-4] != KEY_MARKER:
            raise NotACertificate(f"bad certificate name {obj.name}")
        if comps[-3] != key_id(obj.content):
            raise NotACertificate("key-id does not match public key")
        if not comps[-1].startswith(b"v="):
            raise NotACertificate("missing version component")
        try:
            version = int(comps[-1][2:].decode("ascii"))
        except ValueError:
            raise NotACertificate("bad version component") from None
        self.obj = obj
        self.key_name = obj.name[:-2]
        self.issuer_id = comps[-2]
        self.version = version

    @property
    def name(self) -> Name:
        return self.obj.name

    @property
    def public_key(self) -> bytes:
        return self.obj.content

    @property
    def is_self_signed(self) -> bool:
        return self.issuer_id == SELF_ISSUER

    def __eq__(self, other) -> bool:
        return isinstance(other, Certificate) and self.obj.wire() == other.obj.wire()

    def __hash__(self) -> int:
        return hash(self.obj.wire())

    def __repr__(self) -> str:
        return f"Certificate({self.name})"


def sign_object(
    name: Name,
    content_type: ContentType,
    content: bytes,
    key: KeyPair,
    key_locator: Name,
    timestamp_ms: int,
) -> SwoObject:
    """Build an ED25519-signed object; key_locator names the signer's certificate."""
    portion = wire.signed_portion_fields(
        name, content_type, timestamp_ms, content, SigType.ED25519, key_locator
    )
    return SwoObject(
        name=name,
        content_type=content_type,
        timestamp_ms=timestamp_ms,
        content=content,
        sig_type=SigType.ED25519,
        key_locator=key_locator,
        sig_value=key.sign(portion),
    )


def digest_object(
    name: Name, content_type: ContentType, content: bytes, timestamp_ms: int
) -> SwoObject:
    """Build a DIGEST-integrity object (no signature, SHA-256 only)."""
    portion = wire.signed_portion_fields(
        name, content_type, timestamp_ms, content, SigType.DIGEST, None
    )
    return SwoObject(
        name=name,
        content_type=content_type,
        timestamp_ms=timestamp_ms,
        content=content,
        sig_type=SigType.DIGEST,
        key_locator=None,
        sig_value=hashlib.sha256(portion).digest(),
    )


def digest_ok(obj: SwoObject) -> bool:
    if obj.sig_type != SigType.DIGEST:
        return False
    return hashlib.sha256(wire.signed_portion(obj)).digest() == obj.sig_value


def verify_signature(obj: SwoObject, public_key: bytes) -> bool:
    if obj.sig_type != SigType.ED25519:
        raise WrongSigType(f"sig_type {obj.sig_type} is not ED25519")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(
            obj.sig_value, wire.signed_portion(obj)
        )
        return True
    except (InvalidSignature, ValueError):
        return False


def generate_identity(
    identifier: str,
    app_prefix: Name,
    entropy: Optional[Callable[[int], bytes]] = None,
    timestamp_ms: int = 0,
) -> tuple[KeyPair, Certificate]:
    """Fresh keypair plus self-signed certificate for app_prefix/<identifier>."""
    if not identifier:
        raise SecurityError("empty identifier")
    identity = app_prefix + [identifier]
    pair = KeyPair.generate(identity, entropy)
    cert_name = pair.key_name + [SELF_ISSUER, b"v=1"]
    obj = sign_object(
        cert_name, ContentType.KEY, pair.public, pair, cert_name, timestamp_ms
    )
    return pair, Certificate(obj)


def fingerprint(cert: Certificate) -> str:
    """Operator-comparable stand-in for a QR exchange."""
    digest = hashlib.sha256(cert.obj.wire()).hexdigest()[:32]
    return "-".join(digest[i : i + 4] for i in range(0, 32, 4))


def endorse(
    peer_cert: Certificate,
    endorser: KeyPair,
    endorser_cert_name: Name,
    timestamp_ms: int = 0,
) -> Certificate:
    """Certify a peer's key after out-of-band fingerprint confirmation."""
    if peer_cert.key_name == endorser.key_name:
        raise SelfEndorse("cannot endorse own key")
    endorser_id = endorser.key_name.components[-1]
    cert_name = peer_cert.key_name + [
        endorser_id,
        b"v=%d" % (peer_cert.version + 1),
    ]
    obj = sign_object(
        cert_name,
        ContentType.KEY,
        peer_cert.public_key,
        endorser,
        endorser_cert_name,
        timestamp_ms,
    )
    return Certificate(obj)


# -- optional payload confidentiality ---------------------------------------


def encrypt_content(group_key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """AEAD-encrypt under a 32-byte shared group key; output nonce||ciphertext."""
    nonce = os.urandom(12)
    return nonce + ChaCha20Poly1305(group_key).encrypt(nonce, plaintext, aad)


def decrypt_content(group_key: bytes, blob: bytes, aad: bytes = b"") -> bytes:
    if len(blob) < 12 + 16:
        raise SecurityError("ciphertext too short")
    return ChaCha20Poly1305(group_key).decrypt(blob[:12], blob[12:], aad)


# -- name patterns -----------------------------------------------------------

_LITERAL, _VAR, _ANY_ONE, _ANY_TAIL = 0, 1, 2, 3


class Pattern:
    """Compiled name pattern: literals, <var>, * (one component), ** (tail)."""

    __slots__ = ("tokens", "text")

    def __init__(self, tokens: list[tuple[int, object]], text: str):
        self.tokens = tokens
        self.text = text

    @classmethod
    def parse(cls, text: str) -> "Pattern":
        if not text.startswith("/"):
            raise ValueError(f"pattern must start with '/': {text!r}")
        tokens: list[tuple[int, object]] = []
        if text != "/":
            for seg in text[1:].split("/"):
                if seg == "":
                    raise ValueError(f"empty component in pattern {text!r}")
                if seg == "**":
                    tokens.append((_ANY_TAIL, None))
                elif seg == "*":
                    tokens.append((_ANY_ONE, None))
                elif seg.startswith("<") and seg.endswith(">") and len(seg) > 2:
                    tokens.append((_VAR, seg[1:-1]))
                else:
                    tokens.append((_LITERAL, _decode_literal(seg)))
        for i, (kind, _) in enumerate(tokens):
            if kind == _ANY_TAIL and i != len(tokens) - 1:
                raise ValueError(f"** only allowed in final position: {text!r}")
        return cls(tokens, text)

    def variables(self) -> set[str]:
        return {arg for kind, arg in self.tokens if kind == _VAR}

    def match(
        self, name: Name, bindings: Optional[dict[str, bytes]] = None
    ) -> Optional[dict[str, bytes]]:
        """Return extended bindings if name matches, else None."""
        tokens = self.tokens
        comps = name.components
        has_tail = bool(tokens) and tokens[-1][0] == _ANY_TAIL
        fixed = tokens[:-1] if has_tail else tokens
        if has_tail:
            if len(comps) < len(fixed):
                return None
        elif len(comps) != len(fixed):
            return None
        out = dict(bindings) if bindings else {}
        for (kind, arg), comp in zip(fixed, comps):
            if kind == _LITERAL:
                if comp != arg:
                    return None
            elif kind == _VAR:
                bound = out.get(arg)
                if bound is None:
                    out[arg] = comp
                elif bound != comp:
                    return None
        return out

    def __repr__(self) -> str:
        return f"Pattern({self.text!r})"


def _decode_literal(seg: str) -> bytes:
    from .names import parse_uri

    return parse_uri("/" + seg).components[0]


# -- trust schema ------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    rule_id: str
    data_pattern: Pattern
    key_pattern: Pattern


@dataclass
class TrustSchema:
    rules: list[Rule] = field(default_factory=list)
    anchors: dict[Name, Certificate] = field(default_factory=dict)
    max_chain_depth: int = 3

    def add_anchor(self, cert: Certificate) -> None:
        self.anchors[cert.name] = cert


def compile_schema(
    rules_text: str,
    anchors: Sequence[Certificate] = (),
    max_chain_depth: int = 3,
) -> TrustSchema:
    """Compile one rule per line: ``rule <id>: <data_pattern> <= <key_pattern>``.

    Blank lines and ``#`` comments are ignored. Rule order is preserved and
    the first matching rule wins. Variables on the key side must be bound on
    the data side.
    """
    schema = TrustSchema(max_chain_depth=max_chain_depth)
    for cert in anchors:
        schema.add_anchor(cert)
    for line_no, raw_line in enumerate(rules_text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if not line.startswith("rule "):
            raise SchemaParseError(line_no, "expected 'rule <id>: ...'")
        head, _, rest = line[5:].partition(":")
        rule_id = head.strip()
        if not rule_id or not rest:
            raise SchemaParseError(line_no, "expected 'rule <id>: ...'")
        parts = rest.split("<=")
        if len(parts) != 2:
            raise SchemaParseError(line_no, "expected '<data> <= <key>'")
        try:
            data_pat = Pattern.parse(parts[0].strip())
            key_pat = Pattern.parse(parts[1].strip())
        except ValueError as exc:
            raise SchemaParseError(line_no, str(exc)) from None
        unbound = key_pat.variables() - data_pat.variables()
        if unbound:
            raise UnboundVariable(
                f"line {line_no}: {sorted(unbound)} not bound by data pattern"
            )
        schema.rules.append(Rule(rule_id, data_pat, key_pat))
    return schema


# -- validation --------------------------------------------------------------

REASON_NO_RULE = "NoRuleMatch"
REASON_KEY_MISMATCH = "KeyMismatch"
REASON_NO_CHAIN = "NoChain"
REASON_BAD_SIGNATURE = "BadSignature"
REASON_MISSING_CERT = "MissingCert"


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    reason: Optional[str] = None
    detail: Optional[str] = None
    chain: tuple[Name, ...] = ()
    rule_id: Optional[str] = None

    def __str__(self) -> str:
        if self.accepted:
            return f"Accepted(chain={[str(n) for n in self.chain]})"
        return f"Rejected({self.reason}: {self.detail})"


def _rejected(reason: str, detail: str = "") -> ValidationResult:
    return ValidationResult(accepted=False, reason=reason, detail=detail)


def cert_key_name(cert_name: Name) -> Optional[Name]:
    """Extract ``<identity>/KEY/<key-id>`` from a certificate name."""
    comps = cert_name.components
    if len(comps) >= 5 and comps[-4] == KEY_MARKER:
        return cert_name[:-2]
    return None


def validate(
    obj: SwoObject,
    schema: TrustSchema,
    cert_store: Mapping[Name, Certificate],
) -> ValidationResult:
    """Check obj against the schema and the certificate store.

    Accepted iff a rule's data pattern matches the object name, the key
    locator matches the rule's key pattern under the same bindings, a
    certificate chain of length <= max_chain_depth connects the signing key
    to an anchor, and every signature along the way verifies. All failures
    are Rejected with a reason; missing certificates are reported by name in
    ``detail`` so callers can fetch them and retry.
    """
    matched_rule = None
    bindings: Optional[dict[str, bytes]] = None
    for rule in schema.rules:
        bindings = rule.data_pattern.match(obj.name)
        if bindings is not None:
            matched_rule = rule
            break
    if matched_rule is None:
        return _rejected(REASON_NO_RULE, str(obj.name))

    if obj.sig_type != SigType.ED25519 or obj.key_locator is None:
        return _rejected(REASON_KEY_MISMATCH, "object carries no signing key")
    if matched_rule.key_pattern.match(obj.key_locator, bindings) is None:
        return _rejected(
            REASON_KEY_MISMATCH,
            f"{obj.key_locator} does not satisfy rule {matched_rule.rule_id}",
        )

    target_key = cert_key_name(obj.key_locator)
    if target_key is None:
        return _rejected(REASON_KEY_MISMATCH, f"{obj.key_locator} is not a key name")

    # Group the store (and anchors) by key name for the chain search.
    by_key: dict[Name, list[Certificate]] = {}
    for cert in list(cert_store.values()) + list(schema.anchors.values()):
        kn = cert.key_name
        bucket = by_key.setdefault(kn, [])
        if all(c.name != cert.name for c in bucket):
            bucket.append(cert)
    for bucket in by_key.values():
        bucket.sort(key=lambda c: c.name.sort_key())

    starts = by_key.get(target_key, [])
    if not starts:
        return _rejected(REASON_MISSING_CERT, str(obj.key_locator))

    # Signing-key check: at least one start certificate's key must verify obj.
    good_starts = [c for c in starts if verify_signature(obj, c.public_key)]
    if not good_starts:
        return _rejected(REASON_BAD_SIGNATURE, str(obj.name))

    anchor_names = set(schema.anchors.keys())
    missing_detail: Optional[str] = None

    # Breadth-first over certificates; a chain ends at an anchor. Self-signed
    # certificates terminate only if they are anchors themselves.
    queue: list[tuple[Certificate, tuple[Name, ...]]] = [
        (c, (c.name,)) for c in good_starts
    ]
    while queue:
        cert, chain = queue.pop(0)
        anchored = cert.name in anchor_names and schema.anchors[
            cert.name
        ].obj.wire() == cert.obj.wire()
        if anchored:
            return ValidationResult(
                accepted=True,
                chain=chain,
                rule_id=matched_rule.rule_id,
            )
        if cert.is_self_signed:
            continue  # dead end unless anchored above
        if len(chain) >= schema.max_chain_depth:
            continue
        issuer_locator = cert.obj.key_locator
        issuer_key = cert_key_name(issuer_locator) if issuer_locator else None
        if issuer_key is None:
            continue
        parents = by_key.get(issuer_key, [])
        if not parents and missing_detail is None:
            missing_detail = str(issuer_locator)
        for parent in parents:
            if any(parent.name == seen for seen in chain):
                continue
            if not verify_signature(cert.obj, parent.public_key):
                continue
            queue.append((parent, chain + (parent.name,)))

    if missing_detail is not None:
        return _rejected(REASON_MISSING_CERT, missing_detail)
    return _rejected(REASON_NO_CHAIN, str(target_key))

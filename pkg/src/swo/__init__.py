"""Secure web objects: named, signed, immutable data exchanged by name.

The stack, bottom up: hierarchical names, a canonical TLV wire format,
Ed25519 keys and trust-schema validation, a name-based forwarder with
caching, state-vector dataset sync, a persistent repo, and a CRDT text
workspace, plus a deterministic multi-node simulator.
"""

from .names import MalformedUri, Name, compare, is_prefix_of, parse_uri, to_uri
from .wire import (
    ContentType,
    Request,
    SigType,
    SwoObject,
    decode_object,
    decode_request,
    encode_object,
    encode_request,
    signed_portion,
)
from .security import (
    Certificate,
    KeyPair,
    TrustSchema,
    ValidationResult,
    compile_schema,
    endorse,
    fingerprint,
    generate_identity,
    sign_object,
    validate,
    verify_signature,
)
from .sync import StateVector, SyncGroup, merge_vectors
from .crdt import CrdtDoc, DeleteOp, InsertOp, OpId
from .forwarding import Consumer, ContentStore, Forwarder
from .repo import Repo
from .node import Node
from .harness import Scenario, Transcript, builtin_scenario, metrics, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Name",
    "parse_uri",
    "to_uri",
    "compare",
    "is_prefix_of",
    "MalformedUri",
    "Request",
    "SwoObject",
    "ContentType",
    "SigType",
    "encode_object",
    "decode_object",
    "encode_request",
    "decode_request",
    "signed_portion",
    "KeyPair",
    "Certificate",
    "TrustSchema",
    "ValidationResult",
    "generate_identity",
    "sign_object",
    "verify_signature",
    "fingerprint",
    "endorse",
    "compile_schema",
    "validate",
    "StateVector",
    "SyncGroup",
    "merge_vectors",
    "CrdtDoc",
    "OpId",
    "InsertOp",
    "DeleteOp",
    "Forwarder",
    "Consumer",
    "ContentStore",
    "Repo",
    "Node",
    "Scenario",
    "Transcript",
    "run_scenario",
    "builtin_scenario",
    "metrics",
    "__version__",
]

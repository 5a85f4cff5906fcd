"""On-disk identity material: secret seed, own certificate, peer
certificates, and trust anchors.

Layout under the keystore directory:

    identity        key=value: identity, app_prefix, cert
    key.secret      32-byte Ed25519 seed, hex, mode 0600
    certs/*.swo     raw TLV certificates (own and imported)
    anchors/*.swo   certificates trusted axiomatically
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from . import security, wire
from .names import Name, parse_uri
from .security import Certificate, KeyPair


class KeyStoreError(Exception):
    pass


def _cert_filename(cert: Certificate) -> str:
    return hashlib.sha256(wire.encode_name(cert.name)).hexdigest()[:16] + ".swo"


class KeyStore:
    def __init__(self, directory):
        self.dir = Path(directory)

    def exists(self) -> bool:
        return (self.dir / "identity").exists()

    def create(
        self,
        identifier: str,
        app_prefix: Name,
        force: bool = False,
        timestamp_ms: int = 0,
    ) -> tuple[KeyPair, Certificate]:
        if self.exists() and not force:
            raise KeyStoreError(
                f"{self.dir} already holds an identity (use --force to replace)"
            )
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "certs").mkdir(exist_ok=True)
        (self.dir / "anchors").mkdir(exist_ok=True)
        keys, cert = security.generate_identity(
            identifier, app_prefix, timestamp_ms=timestamp_ms
        )
        secret_path = self.dir / "key.secret"
        secret_path.write_text(keys.secret.hex() + "\n")
        os.chmod(secret_path, 0o600)
        identity = app_prefix + [identifier]
        (self.dir / "identity").write_text(
            f"identity={identity}\napp_prefix={app_prefix}\ncert={cert.name}\n"
        )
        self.add_cert(cert)
        return keys, cert

    def load(self) -> tuple[KeyPair, Certificate, Name]:
        if not self.exists():
            raise KeyStoreError(f"no identity in {self.dir}; run bootstrap first")
        fields = {}
        for line in (self.dir / "identity").read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                fields[k.strip()] = v.strip()
        identity = parse_uri(fields["identity"])
        app_prefix = parse_uri(fields["app_prefix"])
        cert_name = parse_uri(fields["cert"])
        seed = bytes.fromhex((self.dir / "key.secret").read_text().strip())
        certs = self.certs()
        cert = certs.get(cert_name)
        if cert is None:
            raise KeyStoreError(f"own certificate {cert_name} missing from {self.dir}")
        keys = KeyPair(public=cert.public_key, secret=seed, key_name=cert.key_name)
        if keys.key_name[:-2] != identity:
            raise KeyStoreError("identity file disagrees with certificate")
        return keys, cert, app_prefix

    def add_cert(self, cert: Certificate, anchor: bool = False) -> Path:
        sub = "anchors" if anchor else "certs"
        (self.dir / sub).mkdir(parents=True, exist_ok=True)
        path = self.dir / sub / _cert_filename(cert)
        path.write_bytes(cert.obj.wire())
        return path

    def _load_dir(self, sub: str) -> dict[Name, Certificate]:
        out: dict[Name, Certificate] = {}
        folder = self.dir / sub
        if not folder.is_dir():
            return out
        for path in sorted(folder.glob("*.swo")):
            try:
                cert = Certificate(wire.decode_object(path.read_bytes()))
            except (wire.WireError, security.NotACertificate):
                continue
            out[cert.name] = cert
        return out

    def certs(self) -> dict[Name, Certificate]:
        out = self._load_dir("anchors")
        out.update(self._load_dir("certs"))
        return out

    def anchors(self) -> list[Certificate]:
        return list(self._load_dir("anchors").values())


def load_certificate(path) -> Certificate:
    try:
        return Certificate(wire.decode_object(Path(path).read_bytes()))
    except (OSError, wire.WireError, security.NotACertificate) as exc:
        raise KeyStoreError(f"cannot load certificate from {path}: {exc}") from exc

"""Persistent, name-keyed object store that can also answer network requests.

Layout: one flat directory of ``<sha256(name-tlv)>.swo`` files written
atomically (temp + rename), plus a line-delimited ``index.txt`` kept for
inspectability. The files are the source of truth; the index is reconciled
against the directory on open, so a crash between the two leaves no
inconsistency. A lock file confines a store directory to one process.
"""

from __future__ import annotations

import hashlib
import os
import time
from pathlib import Path
from typing import Iterable, Optional

from . import wire
from .names import Name
from .wire import Request, SwoObject

INDEX_FILE = "index.txt"
LOCK_FILE = ".lock"


class RepoError(Exception):
    pass


class ConflictingObject(RepoError):
    """A different object already persists under this name."""


class IoFailure(RepoError):
    pass


class RepoLocked(RepoError):
    pass


class _Entry:
    __slots__ = ("path", "inserted_ms", "size", "verified")

    def __init__(self, path: str, inserted_ms: int, size: int, verified: bool):
        self.path = path
        self.inserted_ms = inserted_ms
        self.size = size
        self.verified = verified


def _name_file(name: Name) -> str:
    return hashlib.sha256(wire.encode_name(name)).hexdigest() + ".swo"


class Repo:
    def __init__(self, directory, clock_ms=None):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        self._lock_path = self.dir / LOCK_FILE
        self._acquire_lock()
        self._index: dict[Name, _Entry] = {}
        self._load()

    # -- lifecycle -----------------------------------------------------------

    def _acquire_lock(self) -> None:
        try:
            fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            pid = self._lock_path.read_text(errors="replace").strip()
            raise RepoLocked(f"{self.dir} locked by pid {pid or '?'}") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))

    def close(self) -> None:
        try:
            self._lock_path.unlink()
        except FileNotFoundError:
            pass

    def __enter__(self) -> "Repo":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _load(self) -> None:
        recorded: dict[str, tuple[int, bool]] = {}
        index_path = self.dir / INDEX_FILE
        if index_path.exists():
            for line in index_path.read_text().splitlines():
                parts = line.split()
                if len(parts) == 5:
                    fname, itime, _size, flag, _uri = parts
                    try:
                        recorded[fname] = (int(itime), flag == "v")
                    except ValueError:
                        continue
        dirty = False
        for path in sorted(self.dir.glob("*.swo")):
            try:
                obj = wire.decode_object(path.read_bytes())
            except wire.WireError:
                continue
            itime, verified = recorded.get(path.name, (self._clock_ms(), False))
            if path.name not in recorded:
                dirty = True
            self._index[obj.name] = _Entry(
                path.name, itime, path.stat().st_size, verified
            )
        known = {e.path for e in self._index.values()}
        if set(recorded) - known:
            dirty = True
        if dirty:
            self._write_index()

    def _write_index(self) -> None:
        lines = []
        for name in sorted(self._index, key=lambda n: n.sort_key()):
            e = self._index[name]
            flag = "v" if e.verified else "u"
            lines.append(f"{e.path} {e.inserted_ms} {e.size} {flag} {name}")
        tmp = self.dir / (INDEX_FILE + ".tmp")
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""))
        os.replace(tmp, self.dir / INDEX_FILE)

    # -- storage -------------------------------------------------------------

    def put(self, obj: SwoObject, verified: bool = False) -> bool:
        """Persist obj; returns False if the same bytes are already stored."""
        data = obj.wire()
        existing = self._index.get(obj.name)
        if existing is not None:
            stored = (self.dir / existing.path).read_bytes()
            if stored == data:
                if verified and not existing.verified:
                    existing.verified = True
                    self._write_index()
                return False
            raise ConflictingObject(str(obj.name))
        fname = _name_file(obj.name)
        tmp = self.dir / (fname + ".tmp")
        try:
            tmp.write_bytes(data)
            os.replace(tmp, self.dir / fname)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        self._index[obj.name] = _Entry(fname, self._clock_ms(), len(data), verified)
        self._write_index()
        return True

    def mark_verified(self, name: Name) -> None:
        entry = self._index.get(name)
        if entry is not None and not entry.verified:
            entry.verified = True
            self._write_index()

    def get(self, name: Name, prefix: bool = False) -> Optional[SwoObject]:
        target: Optional[Name] = None
        if not prefix:
            if name in self._index:
                target = name
        else:
            for candidate in self._index:
                if name.is_prefix_of(candidate) and (
                    target is None or candidate > target
                ):
                    target = candidate
        if target is None:
            return None
        entry = self._index[target]
        try:
            return wire.decode_object((self.dir / entry.path).read_bytes())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def has(self, name: Name) -> bool:
        return name in self._index

    def is_verified(self, name: Name) -> bool:
        entry = self._index.get(name)
        return bool(entry and entry.verified)

    def names(self) -> list[Name]:
        return sorted(self._index, key=lambda n: n.sort_key())

    def names_under(self, prefix: Name) -> list[Name]:
        return [n for n in self.names() if prefix.is_prefix_of(n)]

    def __len__(self) -> int:
        return len(self._index)

    # -- network serving -----------------------------------------------------

    def attach(self, forwarder, prefixes: Iterable[Name]) -> Optional[int]:
        """Register as a producer-surrogate face answering from the store."""
        prefixes = list(prefixes)
        if not prefixes:
            return None
        face_holder: dict = {}

        def on_packet(data: bytes) -> None:
            try:
                packet = wire.decode_packet(data)
            except wire.WireError:
                return
            if not isinstance(packet, Request):
                return
            obj = self.get(packet.name, prefix=packet.can_be_prefix)
            if obj is not None:
                forwarder.handle_packet(face_holder["id"], obj.wire())

        face_id = forwarder.add_face(on_packet, "repo")
        face_holder["id"] = face_id
        for prefix in prefixes:
            forwarder.register_prefix(face_id, prefix)
        return face_id

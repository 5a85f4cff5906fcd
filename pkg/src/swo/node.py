"""One participant: identity, forwarder, repo, fetch helper, and any number
of workspace sessions, wired together over an injected scheduler.

Routing convention: everything a node serves or floods lives under the
application prefix. Each inter-node face is registered under that prefix, as
are the repo face and every sync app face, so one FIB entry fans a request
out to local producers and to the network alike, with the pending-request
table suppressing duplicates and loops.
"""

from __future__ import annotations

import random
from typing import Callable, Optional

from . import security
from .crdt import CrdtDoc
from .forwarding import Consumer, Forwarder
from .names import Name
from .repo import Repo
from .security import Certificate, KeyPair, TrustSchema
from .sync import Signer, SyncGroup
from .wire import ContentType, SwoObject
from .workspace import WorkspaceSession


class Node:
    def __init__(
        self,
        label: str,
        scheduler,
        app_prefix: Name,
        repo: Repo,
        keys: Optional[KeyPair] = None,
        cert: Optional[Certificate] = None,
        schema: Optional[TrustSchema] = None,
        rng: Optional[random.Random] = None,
        cs_capacity: int = 1024,
        heartbeat_ms: Optional[int] = None,
        events: Optional[Callable[..., None]] = None,
    ):
        self.label = label
        self.scheduler = scheduler
        self.app_prefix = app_prefix
        self.repo = repo
        self.keys = keys
        self.cert = cert
        self.schema = schema or TrustSchema()
        self.rng = rng or random.Random()
        self.heartbeat_ms = heartbeat_ms
        self._events = events
        self.online = True

        self.forwarder = Forwarder(
            scheduler, cs_capacity=cs_capacity, label=label, events=events
        )
        self.consumer = Consumer(self.forwarder, scheduler, self.rng, "consumer")
        self.cert_store: dict[Name, Certificate] = {}
        self.sessions: dict[Name, WorkspaceSession] = {}
        self.link_faces: list[int] = []
        self.repo_face = self.repo.attach(self.forwarder, [app_prefix])

        self.load_certs_from_repo()
        if cert is not None:
            self.install_certificate(cert)

    # -- identity -----------------------------------------------------------

    @classmethod
    def bootstrap(
        cls,
        label: str,
        identifier: str,
        scheduler,
        app_prefix: Name,
        repo: Repo,
        schema: Optional[TrustSchema] = None,
        rng: Optional[random.Random] = None,
        anchor_own_cert: bool = True,
        **kw,
    ) -> "Node":
        rng = rng or random.Random()
        keys, cert = security.generate_identity(
            identifier, app_prefix, entropy=rng.randbytes, timestamp_ms=scheduler.now_ms()
        )
        node = cls(
            label,
            scheduler,
            app_prefix,
            repo,
            keys=keys,
            cert=cert,
            schema=schema,
            rng=rng,
            **kw,
        )
        if anchor_own_cert:
            node.schema.add_anchor(cert)
        return node

    @property
    def identity(self) -> Optional[Name]:
        return self.keys.key_name[:-2] if self.keys else None

    @property
    def node_suffix(self) -> Name:
        """Producer id within groups: identity components after the app prefix."""
        ident = self.identity
        assert ident is not None, "node has no identity"
        return ident[len(self.app_prefix) :]

    def load_certs_from_repo(self) -> int:
        loaded = 0
        for name in self.repo.names():
            obj = self.repo.get(name)
            if obj is None or obj.content_type != ContentType.KEY:
                continue
            try:
                cert = Certificate(obj)
            except security.NotACertificate:
                continue
            if cert.name not in self.cert_store:
                self.cert_store[cert.name] = cert
                loaded += 1
        return loaded

    def install_certificate(self, cert: Certificate, anchor: bool = False) -> None:
        self.cert_store[cert.name] = cert
        try:
            self.repo.put(cert.obj)
        except Exception:
            pass
        if anchor:
            self.schema.add_anchor(cert)

    def endorse_peer(self, peer_cert: Certificate) -> Certificate:
        """Endorse after an out-of-band fingerprint check; stores both the
        peer's certificate and the endorsement."""
        assert self.keys is not None and self.cert is not None
        endorsement = security.endorse(
            peer_cert, self.keys, self.cert.name, self.scheduler.now_ms()
        )
        self.install_certificate(peer_cert)
        self.install_certificate(endorsement)
        return endorsement

    # -- topology ----------------------------------------------------------

    def add_link_face(self, send_fn: Callable[[bytes], None], label: str = "") -> int:
        fid = self.forwarder.add_face(send_fn, label)
        self.forwarder.register_prefix(fid, self.app_prefix)
        self.link_faces.append(fid)
        if not self.online:
            self.forwarder.set_face_up(fid, False)
        return fid

    def remove_link_face(self, face_id: int) -> None:
        if face_id in self.link_faces:
            self.link_faces.remove(face_id)
        self.forwarder.remove_face(face_id)

    def set_online(self, online: bool) -> None:
        """Offline nodes neither send nor receive; local edits keep working
        and merge when connectivity returns."""
        if self.online == online:
            return
        self.online = online
        for fid in self.link_faces:
            self.forwarder.set_face_up(fid, online)
        self._event("online" if online else "offline")
        if online:
            for session in self.sessions.values():
                session.group._broadcast()

    # -- fetching --------------------------------------------------------------

    def fetch(
        self,
        name: Name,
        on_done: Callable[[Optional[SwoObject]], None],
        prefix: bool = False,
        lifetime_ms: int = 4000,
        store: bool = False,
    ) -> None:
        def done(obj: Optional[SwoObject]) -> None:
            if obj is not None and store:
                try:
                    self.repo.put(obj)
                except Exception:
                    pass
            on_done(obj)

        self.consumer.fetch(name, done, prefix=prefix, lifetime_ms=lifetime_ms)

    # -- workspace ------------------------------------------------------------

    def join(self, group_prefix: Name, batch_ms: int = 250) -> WorkspaceSession:
        assert self.keys is not None and self.cert is not None, "bootstrap first"
        if group_prefix in self.sessions:
            return self.sessions[group_prefix]
        group = SyncGroup(
            group_prefix,
            self.node_suffix,
            repo=self.repo,
            forwarder=self.forwarder,
            scheduler=self.scheduler,
            rng=self.rng,
            signer=Signer(self.keys, self.cert.name),
            fetcher=self.fetch,
            events=self._wrap_events(),
            label=self.label,
            **({"heartbeat_ms": self.heartbeat_ms} if self.heartbeat_ms else {}),
        )
        self.forwarder.register_prefix(group.face_id, self.app_prefix)
        doc = CrdtDoc(self.node_suffix)
        session = WorkspaceSession(
            doc,
            group,
            self.schema,
            self.cert_store,
            self.scheduler,
            fetcher=self.fetch,
            repo=self.repo,
            batch_ms=batch_ms,
            own_cert_name=self.cert.name,
            events=self._wrap_events(),
            online_fn=lambda: self.online,
            label=self.label,
        )
        self.sessions[group_prefix] = session
        self._replay_stored(session)
        group.start()
        return session

    def _replay_stored(self, session: WorkspaceSession) -> None:
        """Apply update batches already in the repo (e.g. after a restart)."""
        group = session.group
        for name in self.repo.names_under(group.group_prefix):
            obj = self.repo.get(name)
            if (
                obj is not None
                and obj.content_type == ContentType.CRDT_UPDATE
                and name.components[-1].startswith(b"seq=")
            ):
                session._on_publication(obj)

    # -- publishing without a workspace -----------------------------------------

    def publish_object(self, name: Name, content: bytes, content_type=ContentType.BLOB) -> SwoObject:
        assert self.keys is not None and self.cert is not None
        obj = security.sign_object(
            name, content_type, content, self.keys, self.cert.name, self.scheduler.now_ms()
        )
        self.repo.put(obj, verified=True)
        return obj

    def _event(self, ev: str, **fields) -> None:
        if self._events is not None:
            self._events(self.label, ev, **fields)

    def _wrap_events(self):
        return self._events

    def close(self) -> None:
        for session in self.sessions.values():
            session.group.stop()
        self.repo.close()

"""Workspace gateway: a local WebSocket endpoint speaking line-delimited
JSON messages, the UI's only door into the node.

Client to gateway:
    {"kind": "snapshot"}                     -> full snapshot reply
    {"kind": "insert", "pos": N, "text": S}
    {"kind": "delete", "pos": N, "len": N}
    {"kind": "set_online", "value": bool}

Gateway to client:
    {"kind": "snapshot", "text": ..., "provenance": [[start, end, key], ...],
     "peers": [...], "online": bool}
    {"kind": "changed"}       pushed when remote updates apply
    {"kind": "error", "message": ...}

The gateway is authoritative: the UI echoes edits optimistically but
reconciles against the next snapshot.
"""

from __future__ import annotations

import json
import threading
from typing import Optional

from websockets.sync.server import serve as ws_serve

from .node import Node


class Gateway:
    def __init__(self, node: Node, session, scheduler, host: str = "127.0.0.1", port: int = 9802):
        self.node = node
        self.session = session
        self.scheduler = scheduler
        self._clients: list = []
        self._clients_lock = threading.Lock()
        session.on_change = self._notify_changed
        self._server = ws_serve(self._handler, host, port)
        self.port = self._server.socket.getsockname()[1]
        threading.Thread(target=self._server.serve_forever, daemon=True).start()

    def _notify_changed(self) -> None:
        payload = json.dumps({"kind": "changed"})
        with self._clients_lock:
            clients = list(self._clients)
        for conn in clients:
            try:
                conn.send(payload)
            except Exception:
                pass

    def _snapshot(self) -> dict:
        snap = self.scheduler.run_sync(self.session.snapshot)
        snap["kind"] = "snapshot"
        return snap

    def _handler(self, conn) -> None:
        with self._clients_lock:
            self._clients.append(conn)
        try:
            conn.send(json.dumps(self._snapshot()))
            for message in conn:
                if isinstance(message, bytes):
                    message = message.decode("utf-8", "replace")
                for line in message.splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    reply = self._dispatch(line)
                    if reply is not None:
                        conn.send(json.dumps(reply))
        except Exception:
            pass
        finally:
            with self._clients_lock:
                if conn in self._clients:
                    self._clients.remove(conn)

    def _dispatch(self, line: str) -> Optional[dict]:
        try:
            msg = json.loads(line)
            kind = msg.get("kind")
            if kind == "snapshot":
                return self._snapshot()
            if kind == "insert":
                pos, text = int(msg["pos"]), str(msg["text"])
                self.scheduler.run_sync(lambda: self.session.insert(pos, text))
                return None
            if kind == "delete":
                pos, length = int(msg["pos"]), int(msg["len"])
                self.scheduler.run_sync(lambda: self.session.delete(pos, length))
                return None
            if kind == "set_online":
                value = bool(msg["value"])
                self.scheduler.run_sync(lambda: self.node.set_online(value))
                return {"kind": "online", "value": value}
            return {"kind": "error", "message": f"unknown kind {kind!r}"}
        except Exception as exc:
            return {"kind": "error", "message": str(exc)}

    def close(self) -> None:
        self._server.shutdown()

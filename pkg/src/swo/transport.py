"""Real transports for forwarder faces and the workspace gateway.

Framing: a TCP face carries a 4-byte big-endian length prefix per packet; a
WebSocket face carries exactly one packet per binary message. Reader threads
hand packets to the node's event loop; all forwarder state stays on that
loop.
"""

from __future__ import annotations

import socket
import struct
import threading
from typing import Callable, Optional
from urllib.parse import urlparse

from websockets.sync.client import connect as ws_connect
from websockets.sync.server import serve as ws_serve

FRAME_MAX = 1 << 20


class TransportError(Exception):
    pass


def parse_endpoint(url: str) -> tuple[str, str, int]:
    """Split tcp://host:port or ws://host:port."""
    parsed = urlparse(url)
    if parsed.scheme not in ("tcp", "ws"):
        raise TransportError(f"unsupported scheme in {url!r}")
    if parsed.hostname is None or parsed.port is None:
        raise TransportError(f"missing host or port in {url!r}")
    return parsed.scheme, parsed.hostname, parsed.port


# -- TCP ---------------------------------------------------------------------


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _tcp_reader(sock, scheduler, forwarder, face_id):
    try:
        while True:
            header = _read_exact(sock, 4)
            if header is None:
                break
            (length,) = struct.unpack(">I", header)
            if length > FRAME_MAX:
                break
            payload = _read_exact(sock, length)
            if payload is None:
                break
            scheduler.post(lambda p=payload: forwarder.handle_packet(face_id, p))
    except OSError:
        pass
    finally:
        scheduler.post(lambda: forwarder.remove_face(face_id))
        try:
            sock.close()
        except OSError:
            pass


def _add_tcp_face(sock, scheduler, forwarder, label: str) -> int:
    lock = threading.Lock()

    def send(data: bytes) -> None:
        try:
            with lock:
                sock.sendall(struct.pack(">I", len(data)) + data)
        except OSError:
            pass

    face_id = forwarder.add_face(send, label)
    threading.Thread(
        target=_tcp_reader, args=(sock, scheduler, forwarder, face_id), daemon=True
    ).start()
    return face_id


def tcp_connect(url: str, scheduler, forwarder) -> int:
    _, host, port = parse_endpoint(url)
    sock = socket.create_connection((host, port), timeout=10)
    sock.settimeout(None)
    return _add_tcp_face(sock, scheduler, forwarder, f"tcp:{host}:{port}")


class TcpListener:
    def __init__(self, url: str, scheduler, forwarder, on_face=None):
        _, host, port = parse_endpoint(url)
        self._server = socket.create_server((host, port))
        self.port = self._server.getsockname()[1]
        self._scheduler = scheduler
        self._forwarder = forwarder
        self._on_face = on_face
        self._closing = False
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, addr = self._server.accept()
            except OSError:
                return

            def attach(sock=sock, addr=addr):
                fid = _add_tcp_face(
                    sock, self._scheduler, self._forwarder, f"tcp:{addr[0]}:{addr[1]}"
                )
                if self._on_face is not None:
                    self._on_face(fid)

            self._scheduler.post(attach)

    def close(self) -> None:
        self._closing = True
        try:
            self._server.close()
        except OSError:
            pass


# -- WebSocket ------------------------------------------------------------------


def _add_ws_face(conn, scheduler, forwarder, label: str) -> int:
    lock = threading.Lock()

    def send(data: bytes) -> None:
        try:
            with lock:
                conn.send(data)
        except Exception:
            pass

    face_id = forwarder.add_face(send, label)

    def reader():
        try:
            for message in conn:
                if isinstance(message, bytes):
                    scheduler.post(
                        lambda p=message: forwarder.handle_packet(face_id, p)
                    )
        except Exception:
            pass
        finally:
            scheduler.post(lambda: forwarder.remove_face(face_id))

    threading.Thread(target=reader, daemon=True).start()
    return face_id


def websocket_connect(url: str, scheduler, forwarder) -> int:
    conn = ws_connect(url, open_timeout=10)
    return _add_ws_face(conn, scheduler, forwarder, f"ws:{url}")


class WsListener:
    def __init__(self, url: str, scheduler, forwarder, on_face=None):
        _, host, port = parse_endpoint(url)
        self._scheduler = scheduler
        self._forwarder = forwarder
        self._on_face = on_face
        self._server = ws_serve(self._handler, host, port)
        self.port = self._server.socket.getsockname()[1]
        threading.Thread(target=self._server.serve_forever, daemon=True).start()

    def _handler(self, conn) -> None:
        # The server closes the socket when this returns, so the handler
        # thread doubles as the face's reader.
        done = threading.Event()
        holder: dict = {}
        lock = threading.Lock()

        def send(data: bytes) -> None:
            try:
                with lock:
                    conn.send(data)
            except Exception:
                pass

        def attach():
            holder["fid"] = self._forwarder.add_face(send, "ws:peer")
            if self._on_face is not None:
                self._on_face(holder["fid"])
            done.set()

        self._scheduler.post(attach)
        if not done.wait(10):
            return
        fid = holder["fid"]
        try:
            for message in conn:
                if isinstance(message, bytes):
                    self._scheduler.post(
                        lambda p=message: self._forwarder.handle_packet(fid, p)
                    )
        except Exception:
            pass
        finally:
            self._scheduler.post(lambda: self._forwarder.remove_face(fid))

    def close(self) -> None:
        self._server.shutdown()


def connect_face(url: str, scheduler, forwarder) -> int:
    scheme, _, _ = parse_endpoint(url)
    if scheme == "tcp":
        return tcp_connect(url, scheduler, forwarder)
    return websocket_connect(url, scheduler, forwarder)


# -- local control socket ----------------------------------------------------


class ControlServer:
    """Line-oriented local command socket (unix domain)."""

    def __init__(self, path: str, handle: Callable[[str], str]):
        self.path = path
        self._handle = handle
        self._server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._server.bind(path)
        self._server.listen(4)
        self._closing = False
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(sock,), daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        try:
            buf = b""
            while True:
                chunk = sock.recv(4096)
                if not chunk:
                    return
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    reply = self._handle(line.decode("utf-8", "replace").strip())
                    sock.sendall(reply.encode("utf-8") + b"\n.\n")
        except OSError:
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def close(self) -> None:
        self._closing = True
        try:
            self._server.close()
        except OSError:
            pass


def control_request(path: str, command: str, timeout: float = 5.0) -> str:
    sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    sock.settimeout(timeout)
    sock.connect(path)
    sock.sendall(command.encode("utf-8") + b"\n")
    buf = b""
    while not buf.endswith(b"\n.\n"):
        chunk = sock.recv(4096)
        if not chunk:
            break
        buf += chunk
    sock.close()
    return buf[:-3].decode("utf-8", "replace") if buf.endswith(b"\n.\n") else buf.decode("utf-8", "replace")

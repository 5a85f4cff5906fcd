import random
import socket
import time

import pytest

from swo import security, transport, wire
from swo.forwarding import Consumer, Forwarder
from swo.names import parse_uri
from swo.runtime import ThreadedScheduler
from swo.transport import ControlServer, TcpListener, WsListener, control_request
from swo.wire import ContentType


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_until(predicate, timeout=5.0, interval=0.01) -> bool:
    deadline = time.time() + timeout
    while time.time() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


def serve_object(uri: str, payload: bytes):
    """A producer node answering one name via a real listener."""
    sched = ThreadedScheduler()
    fwd = Forwarder(sched, label="producer")
    obj = security.digest_object(parse_uri(uri), ContentType.BLOB, payload, 0)

    def on_packet(data: bytes) -> None:
        try:
            packet = wire.decode_packet(data)
        except wire.WireError:
            return
        if isinstance(packet, wire.Request) and (
            packet.name == obj.name
            or (packet.can_be_prefix and packet.name.is_prefix_of(obj.name))
        ):
            fwd.handle_packet(app_face, obj.wire())

    app_face = fwd.add_face(on_packet, "app")

    def register(fid):
        fwd.register_prefix(fid, parse_uri("/"))
        # producers answer from the app face registered under everything
        fwd.register_prefix(app_face, parse_uri(uri))

    return sched, fwd, register


@pytest.mark.parametrize("scheme", ["tcp", "ws"])
def test_fetch_over_real_transport(scheme):
    port = free_port()
    sched_p, fwd_p, register = serve_object("/app/data/seq=1", b"over the wire")
    listener_cls = TcpListener if scheme == "tcp" else WsListener
    listener = listener_cls(f"{scheme}://127.0.0.1:{port}", sched_p, fwd_p, on_face=register)
    try:
        sched_c = ThreadedScheduler()
        fwd_c = Forwarder(sched_c, label="consumer")
        consumer = Consumer(fwd_c, sched_c, random.Random(1))
        fid = transport.connect_face(f"{scheme}://127.0.0.1:{port}", sched_c, fwd_c)
        sched_c.run_sync(lambda: fwd_c.register_prefix(fid, parse_uri("/app")))
        results = []
        sched_c.run_sync(
            lambda: consumer.fetch(parse_uri("/app/data/seq=1"), results.append)
        )
        assert wait_until(lambda: results)
        assert results[0] is not None and results[0].content == b"over the wire"
        sched_c.stop()
    finally:
        listener.close()
        sched_p.stop()


def test_tcp_framing_multiple_packets_one_stream():
    port = free_port()
    sched_p, fwd_p, register = serve_object("/app/x", b"payload")
    listener = TcpListener(f"tcp://127.0.0.1:{port}", sched_p, fwd_p, on_face=register)
    try:
        sched_c = ThreadedScheduler()
        fwd_c = Forwarder(sched_c, label="c")
        consumer = Consumer(fwd_c, sched_c, random.Random(2))
        fid = transport.connect_face(f"tcp://127.0.0.1:{port}", sched_c, fwd_c)
        sched_c.run_sync(lambda: fwd_c.register_prefix(fid, parse_uri("/app")))
        results = []
        for _ in range(5):
            sched_c.run_sync(
                lambda: consumer.fetch(parse_uri("/app/x"), results.append)
            )
            assert wait_until(lambda: results)
            assert results.pop().content == b"payload"
        sched_c.stop()
    finally:
        listener.close()
        sched_p.stop()


def test_face_removed_on_disconnect():
    port = free_port()
    sched = ThreadedScheduler()
    fwd = Forwarder(sched, label="srv")
    listener = TcpListener(f"tcp://127.0.0.1:{port}", sched, fwd)
    try:
        conn = socket.create_connection(("127.0.0.1", port))
        assert wait_until(lambda: sched.run_sync(lambda: len(fwd.faces)) == 1)
        conn.close()
        assert wait_until(lambda: sched.run_sync(lambda: len(fwd.faces)) == 0)
    finally:
        listener.close()
        sched.stop()


def test_control_socket_round_trip(tmp_path):
    sched = ThreadedScheduler()
    fwd = Forwarder(sched, label="ctl")

    def handle(cmd: str) -> str:
        if cmd == "dump-tables":
            return sched.run_sync(fwd.dump_tables)
        return f"echo {cmd}"

    path = str(tmp_path / "ctl.sock")
    server = ControlServer(path, handle)
    try:
        assert control_request(path, "hello") == "echo hello"
        tables = control_request(path, "dump-tables")
        assert "faces:" in tables and "cs:" in tables
    finally:
        server.close()
        sched.stop()


def test_parse_endpoint_errors():
    with pytest.raises(transport.TransportError):
        transport.parse_endpoint("http://x:1")
    with pytest.raises(transport.TransportError):
        transport.parse_endpoint("tcp://nohost")
    assert transport.parse_endpoint("tcp://0.0.0.0:6363") == ("tcp", "0.0.0.0", 6363)

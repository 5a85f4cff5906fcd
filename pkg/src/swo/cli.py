"""The ``swo`` command line.

Exit codes are stable API: 0 success, 1 operational failure, 2 user abort,
3 validation reject.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import signal
import sys
import threading
import time
from pathlib import Path

from . import harness, manifests, security, transport, wire
from .forwarding import Consumer, Forwarder
from .gateway import Gateway
from .keystore import KeyStore, KeyStoreError, load_certificate
from .names import Name, parse_uri
from .node import Node
from .repo import Repo, RepoError
from .runtime import ThreadedScheduler
from .security import compile_schema, fingerprint, validate
from .wire import ContentType

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ABORT = 2
EXIT_REJECTED = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def load_config(path) -> dict:
    """Plain key=value file; later CLI flags override these values."""
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _cfg(args, key: str, default=None):
    value = getattr(args, key, None)
    if value not in (None, [], False):
        return value
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        if key in cfg:
            value = cfg[key]
            if key == "connect":
                return [v for v in value.split(",") if v]
            return value
    return default


def _keystore(args) -> KeyStore:
    return KeyStore(_cfg(args, "keystore", "keystore"))


# -- subcommands -----------------------------------------------------------


def cmd_bootstrap(args) -> int:
    app_prefix = parse_uri(_cfg(args, "app_prefix", "/3DEditor"))
    identity = _cfg(args, "identity")
    if not identity:
        raise CliError("--identity is required")
    store = _keystore(args)
    keys, cert = store.create(
        identity, app_prefix, force=args.force, timestamp_ms=int(time.time() * 1000)
    )
    if args.anchor:
        anchor = load_certificate(args.anchor)
        store.add_cert(anchor, anchor=True)
        print(f"anchor installed: {anchor.name}")
    print(f"identity: {app_prefix + [identity]}")
    print(f"certificate: {cert.name}")
    print(f"fingerprint: {fingerprint(cert)}")
    return EXIT_OK


def cmd_endorse(args) -> int:
    store = _keystore(args)
    keys, own_cert, _ = store.load()
    peer_cert = load_certificate(args.peer_cert)
    print(f"peer certificate: {peer_cert.name}")
    print(f"fingerprint:      {fingerprint(peer_cert)}")
    if not args.assume_yes:
        answer = input("confirm fingerprint out of band; endorse? [yes/no] ")
        if answer.strip().lower() not in ("y", "yes"):
            print("aborted", file=sys.stderr)
            return EXIT_ABORT
    try:
        endorsement = security.endorse(
            peer_cert, keys, own_cert.name, int(time.time() * 1000)
        )
    except security.SelfEndorse as exc:
        raise CliError(str(exc)) from None
    store.add_cert(peer_cert)
    path = store.add_cert(endorsement)
    if args.out:
        Path(args.out).write_bytes(endorsement.obj.wire())
        path = Path(args.out)
    print(f"endorsement: {endorsement.name}")
    print(f"written: {path}")
    return EXIT_OK


def cmd_publish(args) -> int:
    store = _keystore(args)
    keys, cert, _ = store.load()
    name = parse_uri(args.name)
    payload = Path(args.file).read_bytes()
    group_key = _cfg(args, "group_key")
    if group_key:
        payload = security.encrypt_content(bytes.fromhex(group_key), payload)
    now = int(time.time() * 1000)
    with Repo(_cfg(args, "repo_dir", "repo")) as repo:
        if len(payload) > manifests.SEGMENT_CONTENT_CAP:
            manifest, segments = manifests.blob_collection(
                payload, name, keys, cert.name, now
            )
            for seg in segments:
                repo.put(seg, verified=True)
            repo.put(manifest, verified=True)
            print(f"published manifest {name} ({len(segments)} segments)")
        else:
            obj = security.sign_object(
                name, ContentType.BLOB, payload, keys, cert.name, now
            )
            repo.put(obj, verified=True)
            print(f"published {name} ({len(payload)} bytes)")
    return EXIT_OK


def _fetch_sync(consumer: Consumer, scheduler, name: Name, prefix: bool, timeout_s: float):
    done = threading.Event()
    box: list = [None]

    def cb(obj):
        box[0] = obj
        done.set()

    scheduler.run_sync(lambda: consumer.fetch(name, cb, prefix=prefix))
    done.wait(timeout_s)
    return box[0]


def cmd_fetch(args) -> int:
    scheduler = ThreadedScheduler()
    forwarder = Forwarder(scheduler, label="fetch")
    import random as _random

    consumer = Consumer(forwarder, scheduler, _random.Random())
    repo = None
    try:
        for url in _cfg(args, "connect", []) or []:
            fid = transport.connect_face(url, scheduler, forwarder)
            scheduler.run_sync(lambda f=fid: forwarder.register_prefix(f, Name()))
        repo_dir = _cfg(args, "repo_dir")
        if repo_dir:
            repo = Repo(repo_dir)
            scheduler.run_sync(lambda: repo.attach(forwarder, [Name()]))
        name = parse_uri(args.name)
        obj = _fetch_sync(consumer, scheduler, name, args.prefix, args.timeout)
        if obj is None:
            raise CliError(f"no object for {name}")

        result = {"name": str(obj.name), "validated": None}
        chain: tuple = ()
        schema_path = _cfg(args, "schema")
        if schema_path:
            store = _keystore(args)
            schema = compile_schema(
                Path(schema_path).read_text(), anchors=store.anchors()
            )
            cert_store = dict(store.certs())
            verdict = _validate_with_fetch(
                obj, schema, cert_store, consumer, scheduler, args.timeout
            )
            result["validated"] = verdict.accepted
            if not verdict.accepted:
                result["reason"] = f"{verdict.reason}"
                if args.json:
                    print(json.dumps(result))
                else:
                    print(f"Rejected({verdict.reason})", file=sys.stderr)
                return EXIT_REJECTED
            chain = verdict.chain
            result["chain"] = [str(n) for n in chain]

        payload = obj.content
        if obj.content_type == ContentType.MANIFEST:
            def net_fetch(child: Name):
                if repo is not None:
                    local = repo.get(child)
                    if local is not None:
                        return local
                return _fetch_sync(consumer, scheduler, child, False, args.timeout)

            payload = manifests.fetch_collection(obj.name, net_fetch, _root=obj)

        group_key = _cfg(args, "group_key")
        if group_key:
            payload = security.decrypt_content(bytes.fromhex(group_key), payload)

        result["size"] = len(payload)
        result["sha256"] = hashlib.sha256(payload).hexdigest()
        if args.out:
            Path(args.out).write_bytes(payload)
            result["out"] = args.out
        if args.json:
            print(json.dumps(result))
        else:
            print(f"fetched {obj.name} ({len(payload)} bytes)")
            if result["validated"]:
                print("validated; provenance chain:")
                for link in chain:
                    print(f"  {link}")
            if args.out:
                print(f"written: {args.out}")
            elif not sys.stdout.isatty() and args.raw:
                sys.stdout.buffer.write(payload)
        return EXIT_OK
    finally:
        if repo is not None:
            repo.close()
        scheduler.stop()


def _validate_with_fetch(obj, schema, cert_store, consumer, scheduler, timeout_s):
    from .workspace import _discovery_name

    for _ in range(8):
        verdict = validate(obj, schema, cert_store)
        if verdict.accepted:
            return verdict
        wanted = _discovery_name(verdict)
        if wanted is None:
            return verdict
        cert_obj = _fetch_sync(consumer, scheduler, wanted, True, timeout_s)
        if cert_obj is None:
            return verdict
        try:
            cert = security.Certificate(cert_obj)
        except security.NotACertificate:
            return verdict
        if cert.name in cert_store:
            return verdict
        cert_store[cert.name] = cert
    return validate(obj, schema, cert_store)


def cmd_fwd(args) -> int:
    scheduler = ThreadedScheduler()
    forwarder = Forwarder(scheduler, cs_capacity=args.cs_capacity, label="fwd")
    listeners = []
    control = None
    try:
        for url in args.listen or []:
            listeners.append(_listen(url, scheduler, forwarder))
            print(f"listening on {url}")
        if args.control:
            control = transport.ControlServer(
                args.control, lambda cmd: _control(scheduler, forwarder, cmd)
            )
            print(f"control socket at {args.control}")
        return _serve_forever()
    finally:
        for listener in listeners:
            listener.close()
        if control is not None:
            control.close()
        scheduler.stop()


def _listen(url: str, scheduler, forwarder, on_face=None):
    scheme, _, _ = transport.parse_endpoint(url)
    cls = transport.TcpListener if scheme == "tcp" else transport.WsListener
    return cls(url, scheduler, forwarder, on_face=on_face)


def _control(scheduler, forwarder, command: str) -> str:
    parts = command.split()
    try:
        if not parts:
            return "error: empty command"
        if parts[0] == "dump-tables":
            return scheduler.run_sync(forwarder.dump_tables)
        if parts[0] == "add-face" and len(parts) == 2:
            fid = transport.connect_face(parts[1], scheduler, forwarder)
            return f"face {fid}"
        if parts[0] == "register-prefix" and len(parts) == 3:
            fid = int(parts[1])
            prefix = parse_uri(parts[2])
            scheduler.run_sync(lambda: forwarder.register_prefix(fid, prefix))
            return "ok"
        return f"error: unknown command {parts[0]!r}"
    except Exception as exc:
        return f"error: {exc}"


def cmd_repo(args) -> int:
    scheduler = ThreadedScheduler()
    forwarder = Forwarder(scheduler, label="repo")
    listeners = []
    repo = None
    try:
        repo = Repo(args.dir)
        prefixes = [parse_uri(p) for p in (args.serve or ["/"])]
        scheduler.run_sync(lambda: repo.attach(forwarder, prefixes))
        for url in args.listen or []:
            listeners.append(_listen(url, scheduler, forwarder))
            print(f"listening on {url}")
        for url in args.connect or []:
            fid = transport.connect_face(url, scheduler, forwarder)
            print(f"connected face {fid} to {url}")
        served = ", ".join(str(p) for p in prefixes)
        print(f"repo {args.dir}: {len(repo)} objects, serving {served}")
        return _serve_forever()
    finally:
        for listener in listeners:
            listener.close()
        if repo is not None:
            repo.close()
        scheduler.stop()


def cmd_ws(args) -> int:
    scheduler = ThreadedScheduler()
    repo = None
    node = None
    gateway = None
    ui_server = None
    listeners = []
    try:
        store = _keystore(args)
        keys, cert, app_prefix = store.load()
        wanted = _cfg(args, "identity")
        if wanted and keys.key_name[:-2] != app_prefix + [wanted]:
            raise CliError(
                f"keystore identity {keys.key_name[:-2]} is not {wanted!r}"
            )
        schema_path = _cfg(args, "schema")
        if not schema_path:
            raise CliError("--schema is required")
        schema = compile_schema(Path(schema_path).read_text(), anchors=store.anchors())
        repo = Repo(_cfg(args, "repo_dir", "repo"))
        node = Node(
            label=str(keys.key_name[:-2]),
            scheduler=scheduler,
            app_prefix=app_prefix,
            repo=repo,
            keys=keys,
            cert=cert,
            schema=schema,
        )
        for cert_obj in store.certs().values():
            node.install_certificate(cert_obj)
        for url in _cfg(args, "connect", []) or []:
            fid = transport.connect_face(url, scheduler, node.forwarder)
            scheduler.run_sync(
                lambda f=fid: (
                    node.forwarder.register_prefix(f, app_prefix),
                    node.link_faces.append(f),
                )
            )
            print(f"connected to {url}")
        for url in args.listen or []:
            def register(fid):
                node.forwarder.register_prefix(fid, app_prefix)
                node.link_faces.append(fid)

            listeners.append(_listen(url, scheduler, node.forwarder, on_face=register))
            print(f"listening on {url}")
        group = parse_uri(args.group)
        session = scheduler.run_sync(lambda: node.join(group))
        gateway = Gateway(node, session, scheduler, port=args.gateway_port)
        print(f"gateway on ws://127.0.0.1:{gateway.port}")
        if args.ui_dir:
            ui_server = _serve_ui(args.ui_dir, args.ui_port, gateway.port)
            print(f"ui on http://127.0.0.1:{args.ui_port}/?gateway={gateway.port}")
        if str(_cfg(args, "online", "true")).lower() in ("false", "0", "no"):
            scheduler.run_sync(lambda: node.set_online(False))
        return _serve_forever()
    finally:
        if gateway is not None:
            gateway.close()
        if ui_server is not None:
            ui_server.shutdown()
        for listener in listeners:
            listener.close()
        if node is not None:
            scheduler.run_sync(node.close)
        elif repo is not None:
            repo.close()
        scheduler.stop()


def _serve_ui(ui_dir: str, port: int, gateway_port: int):
    import functools
    from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

    handler = functools.partial(SimpleHTTPRequestHandler, directory=ui_dir)
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def _serve_forever() -> int:
    stop = threading.Event()

    def on_signal(_sig, _frame):
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    stop.wait()
    print("shutting down")
    return EXIT_OK


def cmd_sim(args) -> int:
    if args.action != "run":
        raise CliError(f"unknown sim action {args.action!r}")
    if args.scenario in harness.BUILTINS:
        scenario = harness.builtin_scenario(args.scenario, seed=args.seed)
    else:
        path = Path(args.scenario)
        if not path.exists():
            raise CliError(f"no such scenario: {args.scenario}")
        scenario = harness.Scenario.parse(path.read_text(), name=path.stem, seed=args.seed)
    transcript = harness.run_scenario(scenario)
    if args.transcript:
        Path(args.transcript).write_text(transcript.text())
    if args.metrics:
        Path(args.metrics).write_text(harness.render_metrics(harness.metrics(transcript)))
    passed = sum(1 for line in transcript.lines if " expect PASS " in line)
    print(f"scenario {scenario.name}: {passed} expectations passed, "
          f"{len(transcript.failures)} failed")
    for failure in transcript.failures:
        print(f"FAIL {failure}", file=sys.stderr)
    return EXIT_OK if transcript.ok else EXIT_ERROR


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swo",
        description="Named, signed, immutable data objects over name-based forwarding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file; flags override")
        p.add_argument("--keystore", help="keystore directory (default: keystore)")

    p = sub.add_parser("bootstrap", help="create identity and self-signed certificate")
    common(p)
    p.add_argument("--identity", help="internet identifier, e.g. alice@example.com")
    p.add_argument("--app-prefix", dest="app_prefix", help="application prefix URI")
    p.add_argument("--anchor", help="trust anchor certificate (.swo) to install")
    p.add_argument("--force", action="store_true", help="replace an existing identity")
    p.set_defaults(fn=cmd_bootstrap)

    p = sub.add_parser("endorse", help="endorse a peer certificate after fingerprint check")
    common(p)
    p.add_argument("peer_cert", help="peer certificate file (.swo)")
    p.add_argument("--assume-yes", action="store_true", help="skip the interactive prompt")
    p.add_argument("--out", help="also write the endorsement here")
    p.set_defaults(fn=cmd_endorse)

    p = sub.add_parser("publish", help="sign a file into a repo under a name")
    common(p)
    p.add_argument("file")
    p.add_argument("name")
    p.add_argument("--repo-dir", dest="repo_dir")
    p.add_argument("--group-key", dest="group_key", help="hex AEAD key for payload encryption")
    p.set_defaults(fn=cmd_publish)

    p = sub.add_parser("fetch", help="fetch an object by name")
    common(p)
    p.add_argument("name")
    p.add_argument("--prefix", action="store_true", help="prefix fetch (latest under name)")
    p.add_argument("--connect", action="append", help="forwarder URL (tcp:// or ws://)")
    p.add_argument("--repo-dir", dest="repo_dir", help="also answer from this local repo")
    p.add_argument("--schema", help="validate against this trust schema")
    p.add_argument("--out", help="write payload to file")
    p.add_argument("--json", action="store_true")
    p.add_argument("--raw", action="store_true", help="stream payload to stdout")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--group-key", dest="group_key")
    p.set_defaults(fn=cmd_fetch)

    p = sub.add_parser("fwd", help="run a forwarder")
    p.add_argument("--listen", action="append", help="tcp://host:port or ws://host:port")
    p.add_argument("--cs-capacity", dest="cs_capacity", type=int, default=1024)
    p.add_argument("--control", help="unix socket path for runtime control")
    p.set_defaults(fn=cmd_fwd)

    p = sub.add_parser("repo", help="serve a repo directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--serve", action="append", help="prefix to serve (repeatable)")
    p.add_argument("--listen", action="append")
    p.add_argument("--connect", action="append")
    p.set_defaults(fn=cmd_repo)

    p = sub.add_parser("ws", help="run a workspace node with a UI gateway")
    common(p)
    p.add_argument("--group", required=True, help="group prefix URI")
    p.add_argument("--identity", help="expected identifier; must match the keystore")
    p.add_argument("--schema")
    p.add_argument("--repo-dir", dest="repo_dir")
    p.add_argument("--connect", action="append")
    p.add_argument("--listen", action="append")
    p.add_argument("--gateway-port", dest="gateway_port", type=int, default=0)
    p.add_argument("--ui-dir", dest="ui_dir")
    p.add_argument("--ui-port", dest="ui_port", type=int, default=8080)
    p.add_argument("--online", help="true/false initial connectivity")
    p.set_defaults(fn=cmd_ws)

    p = sub.add_parser("sim", help="run deterministic scenarios")
    p.add_argument("action", choices=["run"])
    p.add_argument("scenario", help="scenario file or builtin name "
                   f"({', '.join(sorted(harness.BUILTINS))})")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--transcript", help="write the transcript here")
    p.add_argument("--metrics", help="write the metrics summary here")
    p.set_defaults(fn=cmd_sim)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (
        KeyStoreError,
        RepoError,
        wire.WireError,
        security.SecurityError,
        transport.TransportError,
        manifests.ManifestError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())

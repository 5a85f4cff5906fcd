// Gateway session: one socket, optimistic local echo, reconciliation against
// authoritative snapshots, and an edit queue that survives disconnects.
//
// Reconciliation works by request ordering: the gateway handles messages from
// one socket in order, so a snapshot requested after an edit reflects it. We
// count sent edits; a snapshot answer only overwrites the local echo when no
// further edits were sent after the request it answers. At quiescence the two
// are equal.

import type { Command, GatewayMessage, Snapshot } from "./protocol.js";
import { parseGatewayMessage } from "./protocol.js";

// Structural subset of both the browser WebSocket and the ws package client.
/* eslint-disable @typescript-eslint/no-explicit-any */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev: any) => void) | null;
  onclose: ((ev: any) => void) | null;
  onerror: ((ev: any) => void) | null;
  onmessage: ((ev: any) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionOptions {
  backoffMs?: number;
  maxBackoffMs?: number;
  queueLimit?: number;
  setTimer?: (fn: () => void, ms: number) => unknown;
}

const EMPTY_SNAPSHOT: Snapshot = {
  kind: "snapshot",
  text: "",
  provenance: [],
  peers: [],
  online: true,
};

export class GatewaySession {
  readonly url: string;
  snapshot: Snapshot = EMPTY_SNAPSHOT;
  uiText = "";
  connected = false;
  closed = false;
  onUpdate: (() => void) | null = null;

  private factory: SocketFactory;
  private socket: SocketLike | null = null;
  private backoffMs: number;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly queueLimit: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private queue: Command[] = [];
  private sent = 0;
  // edits sent at the moment of each outstanding snapshot request; the
  // gateway answers per socket in order, so answers pop from the front
  private pendingRequests: number[] = [];

  constructor(url: string, factory: SocketFactory, opts: SessionOptions = {}) {
    this.url = url;
    this.factory = factory;
    this.initialBackoffMs = opts.backoffMs ?? 200;
    this.backoffMs = this.initialBackoffMs;
    this.maxBackoffMs = opts.maxBackoffMs ?? 5000;
    this.queueLimit = opts.queueLimit ?? 1000;
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
  }

  connect(): void {
    if (this.closed) {
      return;
    }
    let socket: SocketLike;
    try {
      socket = this.factory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = socket;
    socket.onopen = () => {
      this.connected = true;
      this.backoffMs = this.initialBackoffMs;
      this.pendingRequests = [];
      this.flushQueue();
      this.requestSnapshot();
      this.notify();
    };
    socket.onmessage = (ev) => {
      if (typeof ev.data === "string") {
        this.handleMessage(ev.data);
      } else if (ev.data instanceof Uint8Array) {
        this.handleMessage(new TextDecoder().decode(ev.data));
      }
    };
    const onDown = () => {
      if (this.socket === socket) {
        this.socket = null;
        const wasConnected = this.connected;
        this.connected = false;
        this.scheduleReconnect();
        if (wasConnected) {
          this.notify();
        }
      }
    };
    socket.onclose = onDown;
    socket.onerror = onDown;
  }

  close(): void {
    this.closed = true;
    if (this.socket) {
      this.socket.close();
      this.socket = null;
    }
    this.connected = false;
  }

  get queuedEdits(): number {
    return this.queue.length;
  }

  // -- editing -----------------------------------------------------------

  insert(pos: number, text: string): void {
    if (text.length === 0) {
      return;
    }
    this.uiText = this.uiText.slice(0, pos) + text + this.uiText.slice(pos);
    this.sendEdit({ kind: "insert", pos, text });
  }

  delete(pos: number, len: number): void {
    if (len <= 0) {
      return;
    }
    this.uiText = this.uiText.slice(0, pos) + this.uiText.slice(pos + len);
    this.sendEdit({ kind: "delete", pos, len });
  }

  setOnline(value: boolean): void {
    this.sendCommand({ kind: "set_online", value });
  }

  private sendEdit(cmd: Command): void {
    this.sent++;
    this.sendCommand(cmd);
    this.requestSnapshot();
    this.notify();
  }

  private sendCommand(cmd: Command): void {
    if (this.connected && this.socket) {
      try {
        this.socket.send(JSON.stringify(cmd));
        return;
      } catch {
        // treat as disconnected; fall through to the queue
      }
    }
    if (cmd.kind === "insert" || cmd.kind === "delete") {
      if (this.queue.length >= this.queueLimit) {
        this.queue.shift();
      }
      this.queue.push(cmd);
    }
  }

  private flushQueue(): void {
    if (!this.socket) {
      return;
    }
    const pending = this.queue;
    this.queue = [];
    for (const cmd of pending) {
      try {
        this.socket.send(JSON.stringify(cmd));
      } catch {
        this.queue = pending.slice(pending.indexOf(cmd));
        return;
      }
    }
  }

  requestSnapshot(): void {
    if (this.connected && this.socket) {
      try {
        this.socket.send(JSON.stringify({ kind: "snapshot" }));
        this.pendingRequests.push(this.sent);
      } catch {
        // reconnect flow will request again
      }
    }
  }

  // -- inbound ---------------------------------------------------------------

  private handleMessage(raw: string): void {
    for (const line of raw.split("\n")) {
      if (!line.trim()) {
        continue;
      }
      const msg = parseGatewayMessage(line);
      if (msg) {
        this.dispatch(msg);
      }
    }
  }

  private dispatch(msg: GatewayMessage): void {
    if (msg.kind === "snapshot") {
      this.snapshot = msg;
      // unsolicited pushes (the connect greeting) carry no request record;
      // they may only be adopted by a session that has never edited
      const sentAtRequest = this.pendingRequests.shift() ?? (this.sent === 0 ? 0 : -1);
      if (this.sent === sentAtRequest && this.queue.length === 0) {
        this.uiText = msg.text;
      } else if (this.pendingRequests.length === 0) {
        this.requestSnapshot();
      }
      this.notify();
    } else if (msg.kind === "changed") {
      this.requestSnapshot();
    } else if (msg.kind === "online") {
      this.snapshot = { ...this.snapshot, online: msg.value };
      this.notify();
    }
  }

  get reconciled(): boolean {
    return (
      this.connected &&
      this.queue.length === 0 &&
      this.uiText === this.snapshot.text
    );
  }

  private scheduleReconnect(): void {
    if (this.closed) {
      return;
    }
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    this.setTimer(() => this.connect(), delay);
  }

  private notify(): void {
    if (this.onUpdate) {
      this.onUpdate();
    }
  }
}

// Messages spoken with the workspace gateway. The gateway is authoritative:
// the UI edits only through commands and reconciles against snapshots.

export type ProvenanceRun = [start: number, end: number, keyLocator: string];

export interface Peer {
  id: string;
  seq: number;
  last_seen_ms: number;
}

export interface Snapshot {
  kind: "snapshot";
  text: string;
  provenance: ProvenanceRun[];
  peers: Peer[];
  online: boolean;
}

export interface ChangedPush {
  kind: "changed";
}

export interface OnlineReply {
  kind: "online";
  value: boolean;
}

export interface ErrorReply {
  kind: "error";
  message: string;
}

export type GatewayMessage = Snapshot | ChangedPush | OnlineReply | ErrorReply;

export type Command =
  | { kind: "snapshot" }
  | { kind: "insert"; pos: number; text: string }
  | { kind: "delete"; pos: number; len: number }
  | { kind: "set_online"; value: boolean };

export function parseGatewayMessage(raw: string): GatewayMessage | null {
  try {
    const msg = JSON.parse(raw);
    if (msg && typeof msg.kind === "string") {
      return msg as GatewayMessage;
    }
  } catch {
    // fall through
  }
  return null;
}

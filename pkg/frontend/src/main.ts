import { GatewaySession } from "./session.js";
import { bindEditor } from "./render.js";

function gatewayUrl(): string {
  const params = new URLSearchParams(window.location.search);
  const port = params.get("gateway") ?? "9802";
  const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
  return `ws://${host || "127.0.0.1"}:${port}`;
}

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) {
    throw new Error(`missing #${id}`);
  }
  return found as T;
}

const session = new GatewaySession(gatewayUrl(), (url) => new WebSocket(url));
bindEditor(session, {
  editor: el<HTMLTextAreaElement>("editor"),
  overlay: el("overlay"),
  peers: el("peers"),
  online: el<HTMLInputElement>("online"),
  banner: el("banner"),
});
session.connect();

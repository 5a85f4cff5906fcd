// DOM layer: a plain textarea with a color overlay, peer list, online
// toggle, and a disconnect banner. No editor framework; the overlay mirrors
// the authoritative snapshot while the textarea holds the local echo.

import { colorFor } from "./colors.js";
import { diffEdits } from "./diff.js";
import type { GatewaySession } from "./session.js";

export interface Elements {
  editor: HTMLTextAreaElement;
  overlay: HTMLElement;
  peers: HTMLElement;
  online: HTMLInputElement;
  banner: HTMLElement;
}

export function bindEditor(session: GatewaySession, els: Elements): void {
  let lastValue = els.editor.value;
  els.editor.addEventListener("input", () => {
    const next = els.editor.value;
    for (const cmd of diffEdits(lastValue, next)) {
      if (cmd.kind === "insert") {
        session.insert(cmd.pos, cmd.text);
      } else if (cmd.kind === "delete") {
        session.delete(cmd.pos, cmd.len);
      }
    }
    lastValue = next;
  });
  els.online.addEventListener("change", () => {
    session.setOnline(els.online.checked);
  });
  session.onUpdate = () => {
    // adopt reconciled text without clobbering an in-progress edit
    if (els.editor.value !== session.uiText) {
      const caret = els.editor.selectionStart;
      els.editor.value = session.uiText;
      els.editor.selectionStart = els.editor.selectionEnd = Math.min(
        caret,
        session.uiText.length,
      );
      lastValue = session.uiText;
    }
    render(session, els);
  };
  render(session, els);
}

export function render(session: GatewaySession, els: Elements): void {
  const snap = session.snapshot;

  els.overlay.textContent = "";
  for (const [start, end, key] of snap.provenance) {
    const span = document.createElement("span");
    span.textContent = snap.text.slice(start, end);
    span.style.color = colorFor(key);
    span.title = key;
    els.overlay.appendChild(span);
  }

  els.peers.textContent = "";
  for (const peer of snap.peers) {
    const li = document.createElement("li");
    const age = peer.last_seen_ms > 0 ? `seq ${peer.seq}` : "never heard";
    li.textContent = `${peer.id} (${age})`;
    els.peers.appendChild(li);
  }

  els.online.checked = snap.online;
  els.banner.style.display = session.connected ? "none" : "block";
  els.banner.textContent = session.connected
    ? ""
    : `gateway unreachable, retrying... (${session.queuedEdits} edits queued)`;
}

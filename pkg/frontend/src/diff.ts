// Turn a textarea value change into gateway commands by cursor bookkeeping:
// common prefix/suffix isolates the edited window, which becomes at most one
// delete followed by one insert.

import type { Command } from "./protocol.js";

export function diffEdits(before: string, after: string): Command[] {
  if (before === after) {
    return [];
  }
  let prefix = 0;
  const maxPrefix = Math.min(before.length, after.length);
  while (prefix < maxPrefix && before[prefix] === after[prefix]) {
    prefix++;
  }
  let suffix = 0;
  while (
    suffix < maxPrefix - prefix &&
    before[before.length - 1 - suffix] === after[after.length - 1 - suffix]
  ) {
    suffix++;
  }
  const removed = before.length - prefix - suffix;
  const inserted = after.slice(prefix, after.length - suffix);
  const out: Command[] = [];
  if (removed > 0) {
    out.push({ kind: "delete", pos: prefix, len: removed });
  }
  if (inserted.length > 0) {
    out.push({ kind: "insert", pos: prefix, text: inserted });
  }
  return out;
}

export function applyCommand(text: string, cmd: Command): string {
  if (cmd.kind === "insert") {
    return text.slice(0, cmd.pos) + cmd.text + text.slice(cmd.pos);
  }
  if (cmd.kind === "delete") {
    return text.slice(0, cmd.pos) + text.slice(cmd.pos + cmd.len);
  }
  return text;
}

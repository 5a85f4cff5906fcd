// Scripted sessions against two real gateway nodes wired over a WebSocket
// link. Drives the same session core the browser uses; WebSocket comes from
// the ws package because this Node build lacks the global.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync, readFileSync, readdirSync, mkdirSync, copyFileSync } from "node:fs";
import { createConnection } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { GatewaySession } from "../src/session.js";
import { colorFor } from "../src/colors.js";

const PYTHON = process.env.SWO_PYTHON ?? "python3";
const RULE = "rule updates: /3DEditor/*/<user>/** <= /3DEditor/<user>/KEY/**\n";

function swo(args: string[], cwd: string): void {
  const result = spawnSync(PYTHON, ["-m", "swo", ...args], {
    cwd,
    encoding: "utf-8",
  });
  if (result.status !== 0) {
    throw new Error(`swo ${args.join(" ")} failed: ${result.stderr}`);
  }
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    import("node:net").then(({ createServer }) => {
      const server = createServer();
      server.listen(0, "127.0.0.1", () => {
        const address = server.address();
        if (typeof address === "object" && address) {
          const port = address.port;
          server.close(() => resolve(port));
        } else {
          reject(new Error("no port"));
        }
      });
    });
  });
}

function waitPort(port: number, timeoutMs = 15000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const attempt = () => {
      const sock = createConnection({ host: "127.0.0.1", port }, () => {
        sock.end();
        resolve();
      });
      sock.on("error", () => {
        sock.destroy();
        if (Date.now() > deadline) {
          reject(new Error(`port ${port} never opened`));
        } else {
          setTimeout(attempt, 100);
        }
      });
    };
    attempt();
  });
}

function waitFor(
  predicate: () => boolean,
  timeoutMs: number,
  label: string,
): Promise<number> {
  const started = Date.now();
  return new Promise((resolve, reject) => {
    const poll = () => {
      if (predicate()) {
        resolve(Date.now() - started);
      } else if (Date.now() - started > timeoutMs) {
        reject(new Error(`timeout waiting for ${label}`));
      } else {
        setTimeout(poll, 40);
      }
    };
    poll();
  });
}

function ownCertFile(keystore: string): string {
  const identity = readFileSync(join(keystore, "identity"), "utf-8");
  const certName = identity
    .split("\n")
    .find((l) => l.startsWith("cert="))!
    .slice(5);
  const certsDir = join(keystore, "certs");
  for (const file of readdirSync(certsDir)) {
    // names are hashed; identify by asking python to decode would be heavy.
    // The bootstrap wrote exactly one cert, so a single file means it is ours.
    void certName;
    return join(certsDir, file);
  }
  throw new Error(`no certs in ${keystore}`);
}

function makeSession(port: number): GatewaySession {
  const session = new GatewaySession(
    `ws://127.0.0.1:${port}`,
    (url) => new WebSocket(url),
  );
  session.connect();
  return session;
}

describe("two scripted sessions against two gateway nodes", () => {
  let work: string;
  let serverA: ChildProcess | null = null;
  let serverB: ChildProcess | null = null;
  let gwA = 0;
  let gwB = 0;
  const sessions: GatewaySession[] = [];

  beforeAll(async () => {
    work = mkdtempSync(join(tmpdir(), "swo-ui-"));
    writeFileSync(join(work, "trust.rules"), RULE);

    swo(
      ["bootstrap", "--identity", "alice@example.com", "--app-prefix", "/3DEditor", "--keystore", "ks-alice"],
      work,
    );
    swo(
      ["bootstrap", "--identity", "bob@example.com", "--app-prefix", "/3DEditor", "--keystore", "ks-bob"],
      work,
    );
    // direct trust both ways: each anchors the other's self certificate
    for (const [from, to] of [
      ["ks-alice", "ks-bob"],
      ["ks-bob", "ks-alice"],
    ]) {
      const anchorsDir = join(work, to, "anchors");
      mkdirSync(anchorsDir, { recursive: true });
      copyFileSync(ownCertFile(join(work, from)), join(anchorsDir, `${from}.swo`));
    }

    gwA = await freePort();
    gwB = await freePort();
    const linkPort = await freePort();

    serverA = spawn(
      PYTHON,
      [
        "-m", "swo", "ws",
        "--group", "/3DEditor/docA",
        "--schema", "trust.rules",
        "--keystore", "ks-alice",
        "--repo-dir", "repo-alice",
        "--gateway-port", String(gwA),
        "--listen", `ws://127.0.0.1:${linkPort}`,
      ],
      { cwd: work, stdio: ["ignore", "pipe", "pipe"] },
    );
    await waitPort(gwA);
    await waitPort(linkPort);
    serverB = spawn(
      PYTHON,
      [
        "-m", "swo", "ws",
        "--group", "/3DEditor/docA",
        "--schema", "trust.rules",
        "--keystore", "ks-bob",
        "--repo-dir", "repo-bob",
        "--gateway-port", String(gwB),
        "--connect", `ws://127.0.0.1:${linkPort}`,
      ],
      { cwd: work, stdio: ["ignore", "pipe", "pipe"] },
    );
    await waitPort(gwB);
  }, 60000);

  afterAll(() => {
    for (const session of sessions) {
      session.close();
    }
    serverA?.kill("SIGTERM");
    serverB?.kill("SIGTERM");
    rmSync(work, { recursive: true, force: true });
  });

  it("converges to identical text within 2 s of quiescence", async () => {
    const a = makeSession(gwA);
    const b = makeSession(gwB);
    sessions.push(a, b);
    await waitFor(() => a.connected && b.connected, 10000, "sessions connect");

    a.insert(0, "alpha writes. ");
    await waitFor(() => a.reconciled, 5000, "a reconciles own edit");
    b.insert(b.uiText.length, "beta replies. ");
    await waitFor(() => b.reconciled, 5000, "b reconciles own edit");

    // quiescence starts once both gateways accepted their local edits;
    // from here the replicas must agree within 2 s
    const elapsed = await waitFor(
      () =>
        a.snapshot.text === b.snapshot.text &&
        a.snapshot.text.includes("alpha writes. ") &&
        a.snapshot.text.includes("beta replies. ") &&
        a.reconciled &&
        b.reconciled,
      5000,
      "cross-node convergence",
    );
    expect(elapsed).toBeLessThanOrEqual(2000);
    // ui text equals gateway snapshot text exactly after quiescence
    expect(a.uiText).toBe(a.snapshot.text);
    expect(b.uiText).toBe(b.snapshot.text);
    expect(a.uiText).toBe(b.uiText);
  }, 30000);

  it("merges an offline edit after reconnect without loss", async () => {
    const [a, b] = sessions;
    await waitFor(() => a.reconciled && b.reconciled, 5000, "settled");
    const before = a.snapshot.text;

    b.setOnline(false);
    await waitFor(() => b.snapshot.online === false, 5000, "b offline");
    b.insert(b.uiText.length, "offline note. ");
    a.insert(a.uiText.length, "meanwhile online. ");
    await waitFor(
      () => a.reconciled && a.snapshot.text.includes("meanwhile online. "),
      5000,
      "a applied its edit",
    );
    expect(a.snapshot.text.includes("offline note. ")).toBe(false);

    b.setOnline(true);
    await waitFor(() => b.snapshot.online === true, 5000, "b online again");
    await waitFor(
      () =>
        a.snapshot.text === b.snapshot.text &&
        a.snapshot.text.includes("offline note. ") &&
        a.snapshot.text.includes("meanwhile online. ") &&
        a.snapshot.text.startsWith(before.slice(0, 5)),
      10000,
      "post-reconnect merge",
    );
    expect(a.uiText).toBe(b.uiText);
  }, 30000);

  it("renders provenance colors matching gateway runs on both sides", async () => {
    const [a, b] = sessions;
    await waitFor(
      () => a.snapshot.text === b.snapshot.text && a.snapshot.provenance.length >= 2,
      5000,
      "multi-author provenance",
    );
    expect(a.snapshot.provenance).toEqual(b.snapshot.provenance);
    // runs cover the text exactly
    let covered = 0;
    for (const [start, end] of a.snapshot.provenance) {
      expect(start).toBe(covered);
      covered = end;
    }
    expect(covered).toBe(a.snapshot.text.length);
    // both authors appear, with distinct, deterministic colors
    const keys = new Set(a.snapshot.provenance.map(([, , key]) => key));
    expect(keys.size).toBeGreaterThanOrEqual(2);
    const colors = [...keys].map((key) => colorFor(key));
    expect(new Set(colors).size).toBe(colors.length);
    for (const key of keys) {
      expect(colorFor(key)).toBe(colorFor(key));
    }
  }, 20000);
});

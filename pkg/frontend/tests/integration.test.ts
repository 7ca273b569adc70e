/** The full studio loop against a live service: load, edit a swatch, watch
 * the preview revision advance and the edited layer's dominant region
 * change color, then reset back to a byte-identical render. */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { loadSession } from "../src/session.js";
import { rgbToHex } from "../src/color.js";
import { brightestPixel, decodePng, pixelAt } from "./png.js";

const here = dirname(fileURLToPath(import.meta.url));

let server: ChildProcess | null = null;
let workDir: string;
let baseUrl: string;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as { port: number }).port;
      probe.close(() => resolve(port));
    });
  });
}

async function waitForHealth(url: string, timeoutMs = 120_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${url}/healthz`);
      if (response.status === 200 && (await response.text()) === "ok") return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  throw new Error(`service at ${url} did not become healthy`);
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "studio-it-"));
  const ckpt = join(workDir, "fixture.pf");
  const built = spawnSync(
    "python3",
    [join(here, "helpers", "make_fixture.py"), ckpt],
    { encoding: "utf-8", timeout: 150_000 },
  );
  if (built.status !== 0) {
    throw new Error(`fixture build failed:\n${built.stdout}\n${built.stderr}`);
  }
  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    ["-m", "palettefield.cli", "serve", "--ckpt", ckpt, "--port", String(port)],
    { stdio: "ignore" },
  );
  await waitForHealth(baseUrl);
});

afterAll(() => {
  server?.kill("SIGINT");
  rmSync(workDir, { recursive: true, force: true });
});

describe("studio loop against the live service", () => {
  it("loads, edits a swatch, sees the region change, and resets byte-identically", async () => {
    const session = await loadSession(baseUrl);
    const K = session.meta!.K;
    expect(session.draft).toHaveLength(K + 1); // one swatch per palette entry
    expect(session.swatchHexes()).toHaveLength(K + 1);
    expect(session.lastRevision).toBe(0);

    const initial = session.preview!;
    expect(initial.revision).toBe(0);
    const initialBytes = Buffer.from(initial.bytes);

    // locate the dominant region of the layer we are about to recolor
    const layer = K;
    await session.toggleLayerOverlay(layer);
    const weights = decodePng(session.preview!.bytes);
    const [row, col] = brightestPixel(weights);
    await session.toggleLayerOverlay(layer); // back to the color pane

    const before = pixelAt(decodePng(session.preview!.bytes), row, col);

    await session.editSwatch(layer, [1.0, 0.0, 1.0]); // magenta
    expect(session.lastRevision).toBe(1);
    const edited = session.preview!;
    expect(edited.revision).toBe(1); // preview advanced with the ack
    const after = pixelAt(decodePng(edited.bytes), row, col);
    expect(after).not.toEqual(before);
    // the dominant pixel swings toward magenta
    expect(after[0]).toBeGreaterThan(before[0] - 1);
    expect(after[2]).toBeGreaterThan(before[2]);

    await session.resetPalette();
    expect(session.pristine).toBe(true);
    expect(session.lastRevision).toBe(2);
    const restored = Buffer.from(session.preview!.bytes);
    expect(restored.equals(initialBytes)).toBe(true); // byte-identical render
  });

  it("serves palette state consistent with the swatches", async () => {
    const session = await loadSession(baseUrl);
    const palette = await session.api.getPalette();
    expect(palette.hex.map((h) => h.toLowerCase())).toEqual(
      session.draft.map((c) =>
        rgbToHex(c as [number, number, number]).toLowerCase(),
      ),
    );
  });
});

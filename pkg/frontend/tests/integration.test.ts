/**
 * End-to-end checks against the real service (toy backend).
 *
 * Spawns `python -m ovam.cli serve` on a scratch workdir and drives it the
 * way the UI does: annotation round trip, optimization with a live loss
 * stream, and tau-sweep parity against direct CLI calls on the same session.
 */
import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { inflateSync } from "node:zlib";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { OvamClient } from "../src/api.js";
import { decodePng } from "../src/png.js";
import { createRaster, fillPolygon, strokeBrush } from "../src/raster.js";
import { assertAreaMonotonic } from "../src/state.js";
import { encodeGrayPng } from "../src/png.js";

const execFileAsync = promisify(execFile);
const PYTHON = process.env.OVAM_PYTHON ?? "python3";
const PORT = 18000 + Math.floor(Math.random() * 20000);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workdir: string;
let serverLog = "";
const client = new OvamClient(BASE);

const nodeInflate = (compressed: Uint8Array) =>
  new Uint8Array(inflateSync(compressed));

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const health = await client.health();
      if (health.status === "ok") return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service did not come up on ${BASE}\n${serverLog}`);
    }
    await new Promise(resolve => setTimeout(resolve, 250));
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "ovam-ui-test-"));
  server = spawn(PYTHON, [
    "-m", "ovam.cli", "serve", "--backend", "toy",
    "--host", "127.0.0.1", "--port", String(PORT),
    "--workdir", join(workdir, "service"),
  ], { stdio: ["ignore", "pipe", "pipe"] });
  server.stdout?.on("data", chunk => { serverLog += chunk; });
  server.stderr?.on("data", chunk => { serverLog += chunk; });
  await waitForHealth();
}, 60_000);

afterAll(() => {
  server?.kill("SIGTERM");
  rmSync(workdir, { recursive: true, force: true });
});

describe("annotation round trip", () => {
  it("uploads a drawn mask and downloads it pixel-identical", async () => {
    const session = await client.createSession("A photograph of a dog", 11);
    const raster = createRaster(session.image_w, session.image_h);
    strokeBrush(raster, { x: 12, y: 12 }, { x: 40, y: 20 }, 5);
    fillPolygon(raster, [
      { x: 30, y: 30 }, { x: 58, y: 34 }, { x: 50, y: 58 }, { x: 28, y: 50 },
    ]);
    const png = encodeGrayPng(raster.data, raster.width, raster.height);

    await client.putAnnotation(session.id, png);
    const returned = await client.getAnnotation(session.id);

    // stored verbatim, and decodes to the same pixels we drew
    expect(Buffer.from(returned).equals(Buffer.from(png))).toBe(true);
    const decoded = decodePng(returned, nodeInflate);
    expect(decoded.width).toBe(session.image_w);
    expect(decoded.height).toBe(session.image_h);
    for (let i = 0; i < raster.data.length; i++) {
      if ((decoded.data[i] !== 0) !== (raster.data[i] !== 0)) {
        throw new Error(`pixel ${i} changed in the round trip`);
      }
    }
  }, 30_000);

  it("decodes the service's own PNG encoding (adaptive filters)", async () => {
    const session = await client.createSession("A photograph of a dog", 16);
    const response = await fetch(BASE + session.image_url);
    const decoded = decodePng(new Uint8Array(await response.arrayBuffer()),
                              nodeInflate);
    expect(decoded.width).toBe(session.image_w);
    expect(decoded.height).toBe(session.image_h);
    expect(decoded.channels).toBeGreaterThanOrEqual(3);
  }, 30_000);

  it("rejects an annotation with mismatched dimensions", async () => {
    const session = await client.createSession("A photograph of a dog", 12);
    const wrong = createRaster(16, 16);
    const png = encodeGrayPng(wrong.data, 16, 16);
    await expect(client.putAnnotation(session.id, png))
      .rejects.toMatchObject({ status: 409 });
  }, 30_000);
});

describe("optimization from the UI client", () => {
  it("streams losses whose minimum matches the stored token", async () => {
    const session = await client.createSession("A photograph of a dog", 13);
    const raster = createRaster(session.image_w, session.image_h);
    strokeBrush(raster, { x: 20, y: 20 }, { x: 44, y: 44 }, 8);
    await client.putAnnotation(
      session.id, encodeGrayPng(raster.data, raster.width, raster.height));

    const { job_id } = await client.startOptimization([session.id], "dog", {
      learning_rate: 100, decay_factor: 0.7, decay_every: 120, epochs: 40,
    });
    const losses: number[] = [];
    const epochs: number[] = [];
    const complete = await client.followOptimization(job_id, point => {
      losses.push(point.loss);
      epochs.push(point.epoch);
    });

    expect(epochs).toEqual(Array.from({ length: 40 }, (_, i) => i + 1));
    expect(complete.error).toBeNull();
    expect(complete.best_loss).toBe(Math.min(...losses));

    const token = await client.getToken(complete.token_id!);
    expect(token.best_loss).toBe(complete.best_loss);
    expect(token.label).toBe("dog");
    const listed = await client.listTokens();
    expect(listed.some(t => t.id === complete.token_id)).toBe(true);
  }, 60_000);

  it("zero-epoch jobs return the initialization", async () => {
    const session = await client.createSession("A photograph of a dog", 14);
    const raster = createRaster(session.image_w, session.image_h);
    strokeBrush(raster, { x: 32, y: 32 }, { x: 32, y: 32 }, 10);
    await client.putAnnotation(
      session.id, encodeGrayPng(raster.data, raster.width, raster.height));

    const { job_id } = await client.startOptimization([session.id], "dog",
                                                      { epochs: 0 });
    const epochs: number[] = [];
    const complete = await client.followOptimization(job_id, point => {
      epochs.push(point.epoch);
    });
    expect(epochs).toEqual([0]);
    const token = await client.getToken(complete.token_id!);
    expect(token.rows.length).toBe(2); // background + class rows, untouched
  }, 60_000);
});

describe("tau sweep parity with the CLI", () => {
  it("reports the same area fractions as direct CLI calls", async () => {
    const session = await client.createSession("A photograph of a dog", 15);
    const taus = [0.2, 0.4, 0.6, 0.8, 0.95];
    const sweep = await client.sweepTau(session.id, {
      attribution_prompt: "dog",
      alpha: 0.85,
      crf: true,
      self_attention: true,
    }, taus);
    assertAreaMonotonic(sweep);

    const traceDir = join(workdir, "service", "sessions", session.id, "trace");
    for (const { tau, area } of sweep) {
      const { stdout } = await execFileAsync(PYTHON, [
        "-m", "ovam.cli", "mask",
        "--trace", traceDir,
        "--prompt", "dog",
        "--tau", String(tau),
        "--alpha", "0.85",
        "--out", join(workdir, `cli_mask_${tau}.png`),
      ]);
      const result = JSON.parse(stdout);
      expect(result.area_fraction).toBe(area);
    }
  }, 120_000);
});

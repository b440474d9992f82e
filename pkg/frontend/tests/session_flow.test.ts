// Scripted end-to-end session against a live `vpu serve` process:
// click -> box -> scribble, asserting the history mirror and the
// switch hint.  Requires the python package to be installed (the
// server checkpoint and test fixtures are generated on the fly).

import { execFileSync, spawn, ChildProcess } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { SessionController } from '../src/app';
import { ApiClient } from '../src/client';

const PORT = 8471;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workDir = '';
let imageB64 = '';
let gtB64 = '';

const PY_FIXTURE = `
import sys
from vpuformer.data import generate_instance, image_to_png, mask_to_png
from vpuformer.model import ModelConfig, init_params
from vpuformer.harness import checkpoint_save

out = sys.argv[1]
mcfg = ModelConfig(input_size=64, patch=8, d_model=16, heads=2,
                   dma_layers=1, decoder_scales=(8,))
checkpoint_save(init_params(mcfg, seed=0), mcfg, out + "/model.vpuf")
sample = generate_instance(21)
image_to_png(sample.image, out + "/image.png")
mask_to_png(sample.gt, out + "/gt.png")
`;

async function waitForHealth(timeoutMs = 30000): Promise<void> {
  const t0 = Date.now();
  for (;;) {
    try {
      const res = await fetch(`${BASE}/v1/health`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() - t0 > timeoutMs) {
      throw new Error('server did not become healthy');
    }
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), 'vpu-ui-'));
  execFileSync('python3', ['-c', PY_FIXTURE, workDir], { stdio: 'inherit' });
  imageB64 = readFileSync(join(workDir, 'image.png')).toString('base64');
  gtB64 = readFileSync(join(workDir, 'gt.png')).toString('base64');
  server = spawn(
    'vpu',
    [
      'serve',
      '--checkpoint',
      join(workDir, 'model.vpuf'),
      '--port',
      String(PORT),
    ],
    { stdio: 'ignore' },
  );
  await waitForHealth();
}, 60000);

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe('scripted session flow', () => {
  it('click -> box -> scribble mirrors history and surfaces the hint', async () => {
    const hints: boolean[] = [];
    const client = new ApiClient(BASE);
    const controller = new SessionController(client, {
      onSwitchHint: (s) => hints.push(s),
    });
    await controller.start(imageB64, gtB64);
    expect(controller.sessionId).toBeTruthy();
    expect(controller.transform?.input_size).toBe(64);

    controller.submit({
      kind: 'click',
      positive: true,
      geometry: { click: { x: 30, y: 30 } },
    });
    controller.submit({
      kind: 'box',
      positive: true,
      geometry: { box: { cx: 32, cy: 30, w: 20, h: 16 } },
    });
    controller.submit({
      kind: 'scribble',
      positive: true,
      geometry: { scribble: { points: [[26, 26], [30, 30], [34, 32]] } },
    });
    await controller.flush();

    expect(controller.history.length).toBe(3);
    expect(controller.history.map((h) => h.prompt.kind)).toEqual([
      'click',
      'box',
      'scribble',
    ]);
    expect(controller.history.map((h) => h.stepIndex)).toEqual([1, 2, 3]);

    // server-side history mirrors the local one
    const info = await client.getSession(controller.sessionId!);
    expect(info.steps.length).toBe(3);
    expect(info.steps.map((s) => s.kind)).toEqual([
      'click',
      'box',
      'scribble',
    ]);
    expect(info.iou_trace.length).toBe(3);

    // the untrained checkpoint stays far below the 0.85 threshold, so
    // the stall rule must fire on every step
    for (const iou of info.iou_trace) {
      expect(iou).toBeLessThan(0.85);
    }
    expect(hints).toEqual([true, true, true]);
    expect(controller.switchSuggested).toBe(true);

    await controller.close();
    await expect(client.getSession(controller.sessionId ?? 'gone'))
      .rejects.toMatchObject({ status: 404 });
  }, 60000);

  it('undo replays all but the last prompt on a fresh session', async () => {
    const client = new ApiClient(BASE);
    const controller = new SessionController(client);
    await controller.start(imageB64, gtB64);
    controller.submit({
      kind: 'click',
      positive: true,
      geometry: { click: { x: 20, y: 20 } },
    });
    controller.submit({
      kind: 'click',
      positive: false,
      geometry: { click: { x: 50, y: 50 } },
    });
    await controller.flush();
    const before = controller.sessionId;

    await controller.undo();
    expect(controller.sessionId).not.toBe(before);
    expect(controller.history.length).toBe(1);
    const info = await client.getSession(controller.sessionId!);
    expect(info.steps.length).toBe(1);
    expect(info.steps[0].positive).toBe(true);
    await controller.close();
  }, 60000);
});

// DOM wiring: canvas display, tool buttons, gesture capture, overlay
// compositing.  All coordinate and prompt logic lives in coords.ts /
// prompts.ts; this file only moves pixels and events around.

import { SessionController } from './app';
import { ApiClient } from './client';
import { canvasToImage, ImageSize, Point, ViewTransform } from './coords';
import { DegenerateGestureError, gestureToPrompt, Tool } from './prompts';

const SCALE = 6; // 64 px model input shown at 384 px

const client = new ApiClient('');
const canvas = document.getElementById('view') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const statusEl = document.getElementById('status')!;
const hintEl = document.getElementById('switch-hint')!;
const historyEl = document.getElementById('history')!;
const fileInput = document.getElementById('file') as HTMLInputElement;
const opacityInput = document.getElementById('opacity') as HTMLInputElement;
const probToggle = document.getElementById('show-prob') as HTMLInputElement;

let tool: Tool = 'click+';
let imageBitmap: ImageBitmap | null = null;
let maskImage: HTMLImageElement | null = null;
let probImage: HTMLImageElement | null = null;
let imageSize: ImageSize = { width: 64, height: 64 };
const view: ViewTransform = { scale: SCALE, offsetX: 0, offsetY: 0 };

const controller = new SessionController(client, {
  onStep(entry, result) {
    maskImage = pngToImage(entry.maskPngB64);
    probImage = pngToImage(result.prob_png_b64);
    maskImage.onload = redraw;
    probImage.onload = redraw;
    const li = document.createElement('li');
    const iou = entry.iou === null ? '' : ` — IoU ${entry.iou.toFixed(2)}`;
    li.textContent =
      `#${entry.stepIndex} ${entry.prompt.kind}` +
      `${entry.prompt.positive ? '+' : '-'}${iou}`;
    historyEl.appendChild(li);
    statusEl.textContent = `step ${entry.stepIndex}`;
  },
  onSwitchHint(suggested) {
    hintEl.classList.toggle('hidden', !suggested);
  },
  onError(err) {
    statusEl.textContent = `request failed: ${String(err)} (overlay kept)`;
  },
});

function pngToImage(b64: string): HTMLImageElement {
  const img = new Image();
  img.src = `data:image/png;base64,${b64}`;
  return img;
}

function redraw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.imageSmoothingEnabled = false;
  if (imageBitmap) {
    ctx.drawImage(imageBitmap, 0, 0, canvas.width, canvas.height);
  }
  const overlay = probToggle.checked ? probImage : maskImage;
  if (overlay && overlay.complete) {
    ctx.globalAlpha = Number(opacityInput.value);
    ctx.drawImage(overlay, 0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 1;
  }
}

function canvasPoint(ev: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

// -- gesture capture ---------------------------------------------------------

let dragStart: Point | null = null;
let path: Point[] = [];

canvas.addEventListener('mousedown', (ev) => {
  dragStart = canvasPoint(ev);
  path = [dragStart];
});

canvas.addEventListener('mousemove', (ev) => {
  if (dragStart && tool.startsWith('scribble')) {
    path.push(canvasPoint(ev));
  }
});

canvas.addEventListener('mouseup', (ev) => {
  if (!dragStart || !controller.sessionId) return;
  const end = canvasPoint(ev);
  const toImg = (p: Point) => canvasToImage(p, view, imageSize);
  try {
    const prompt = gestureToPrompt(tool, {
      tap: toImg(end),
      drag: [toImg(dragStart), toImg(end)],
      path: path.map(toImg),
    });
    controller.submit(prompt);
  } catch (err) {
    if (err instanceof DegenerateGestureError) {
      statusEl.textContent = `ignored: ${err.message}`;
    } else {
      throw err;
    }
  }
  dragStart = null;
  path = [];
});

// -- controls ----------------------------------------------------------------

for (const btn of document.querySelectorAll<HTMLButtonElement>('[data-tool]')) {
  btn.addEventListener('click', () => {
    tool = btn.dataset.tool as Tool;
    document
      .querySelectorAll('[data-tool]')
      .forEach((b) => b.classList.toggle('active', b === btn));
  });
}

document.getElementById('undo')!.addEventListener('click', () => {
  historyEl.innerHTML = '';
  void controller.undo().then(() => {
    statusEl.textContent = `undid last prompt (${controller.history.length} left)`;
  });
});

opacityInput.addEventListener('input', redraw);
probToggle.addEventListener('change', redraw);

fileInput.addEventListener('change', async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const buf = new Uint8Array(await file.arrayBuffer());
  let bin = '';
  for (const b of buf) bin += String.fromCharCode(b);
  const b64 = btoa(bin);
  await controller.start(b64);
  const size = controller.transform!.input_size;
  imageSize = { width: size, height: size };
  canvas.width = size * SCALE;
  canvas.height = size * SCALE;
  imageBitmap = await createImageBitmap(file);
  maskImage = null;
  probImage = null;
  historyEl.innerHTML = '';
  statusEl.textContent = 'session started — click on the object';
  redraw();
});

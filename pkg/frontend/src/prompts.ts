// Turning completed gestures into schema-valid prompt bodies for the
// /v1/sessions/{id}/prompts endpoint.

import { Point, roundHalfUp } from './coords';

export type Tool =
  | 'click+'
  | 'click-'
  | 'box+'
  | 'box-'
  | 'scribble+'
  | 'scribble-';

export interface ClickGeometry {
  click: { x: number; y: number };
}

export interface BoxGeometry {
  box: { cx: number; cy: number; w: number; h: number };
}

export interface ScribbleGeometry {
  scribble: { points: [number, number][] };
}

export interface PromptBody {
  kind: 'click' | 'box' | 'scribble';
  positive: boolean;
  geometry: ClickGeometry | BoxGeometry | ScribbleGeometry;
  request_id?: string;
}

export class DegenerateGestureError extends Error {}

export function toolIsPositive(tool: Tool): boolean {
  return tool.endsWith('+');
}

export function clickPrompt(p: Point, positive: boolean): PromptBody {
  return { kind: 'click', positive, geometry: { click: { x: p.x, y: p.y } } };
}

// Drag rectangle -> center + extent.  A drag from (2,3) to (10,7)
// covers 8x4 pixels centered at (6,5).
export function boxPrompt(a: Point, b: Point, positive: boolean): PromptBody {
  const w = Math.abs(b.x - a.x);
  const h = Math.abs(b.y - a.y);
  if (w < 2 || h < 2) {
    throw new DegenerateGestureError(
      `box drag must span at least 2x2 px, got ${w}x${h}`,
    );
  }
  return {
    kind: 'box',
    positive,
    geometry: {
      box: {
        cx: roundHalfUp((a.x + b.x) / 2),
        cy: roundHalfUp((a.y + b.y) / 2),
        w,
        h,
      },
    },
  };
}

// Uniformly thin a freehand path to at most `limit` points, always
// keeping both endpoints.
export function downsamplePath(path: Point[], limit = 256): Point[] {
  if (path.length <= limit) return path.slice();
  const out: Point[] = [];
  for (let i = 0; i < limit; i++) {
    const idx = Math.round((i * (path.length - 1)) / (limit - 1));
    out.push(path[idx]);
  }
  return out;
}

export function scribblePrompt(path: Point[], positive: boolean): PromptBody {
  if (path.length < 1) {
    throw new DegenerateGestureError('scribble path needs at least 1 point');
  }
  const pts = downsamplePath(path).map(
    (p): [number, number] => [p.x, p.y],
  );
  return { kind: 'scribble', positive, geometry: { scribble: { points: pts } } };
}

export function gestureToPrompt(
  tool: Tool,
  gesture: { tap?: Point; drag?: [Point, Point]; path?: Point[] },
): PromptBody {
  const positive = toolIsPositive(tool);
  if (tool.startsWith('click')) {
    if (!gesture.tap) throw new DegenerateGestureError('click needs a tap');
    return clickPrompt(gesture.tap, positive);
  }
  if (tool.startsWith('box')) {
    if (!gesture.drag) throw new DegenerateGestureError('box needs a drag');
    return boxPrompt(gesture.drag[0], gesture.drag[1], positive);
  }
  if (!gesture.path) throw new DegenerateGestureError('scribble needs a path');
  return scribblePrompt(gesture.path, positive);
}

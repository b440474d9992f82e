import { describe, expect, it } from 'vitest';

import {
  BoxGeometry,
  boxPrompt,
  clickPrompt,
  DegenerateGestureError,
  downsamplePath,
  gestureToPrompt,
  ScribbleGeometry,
  scribblePrompt,
} from '../src/prompts';

describe('clickPrompt', () => {
  it('serializes a tap', () => {
    expect(clickPrompt({ x: 4, y: 9 }, true)).toEqual({
      kind: 'click',
      positive: true,
      geometry: { click: { x: 4, y: 9 } },
    });
  });
});

describe('boxPrompt', () => {
  it('converts a drag to center plus extent', () => {
    const p = boxPrompt({ x: 2, y: 3 }, { x: 10, y: 7 }, true);
    expect((p.geometry as BoxGeometry).box).toEqual({
      cx: 6,
      cy: 5,
      w: 8,
      h: 4,
    });
  });

  it('is direction-independent', () => {
    const a = boxPrompt({ x: 10, y: 7 }, { x: 2, y: 3 }, false);
    const b = boxPrompt({ x: 2, y: 3 }, { x: 10, y: 7 }, false);
    expect(a.geometry).toEqual(b.geometry);
  });

  it('rounds an odd-span center half-up', () => {
    const p = boxPrompt({ x: 0, y: 0 }, { x: 5, y: 3 }, true);
    expect((p.geometry as BoxGeometry).box.cx).toBe(3);
    expect((p.geometry as BoxGeometry).box.cy).toBe(2);
  });

  it('rejects degenerate drags', () => {
    expect(() => boxPrompt({ x: 5, y: 5 }, { x: 6, y: 20 }, true)).toThrow(
      DegenerateGestureError,
    );
  });
});

describe('downsamplePath', () => {
  it('keeps short paths untouched', () => {
    const path = [{ x: 1, y: 1 }, { x: 2, y: 2 }];
    expect(downsamplePath(path)).toEqual(path);
  });

  it('thins a 1000-point path to 256 with endpoints preserved', () => {
    const path = Array.from({ length: 1000 }, (_, i) => ({ x: i, y: 2 * i }));
    const out = downsamplePath(path);
    expect(out.length).toBe(256);
    expect(out[0]).toEqual(path[0]);
    expect(out[out.length - 1]).toEqual(path[path.length - 1]);
    // order preserved
    for (let i = 1; i < out.length; i++) {
      expect(out[i].x).toBeGreaterThan(out[i - 1].x);
    }
  });
});

describe('scribblePrompt', () => {
  it('serializes points as pairs', () => {
    const p = scribblePrompt([{ x: 1, y: 2 }, { x: 3, y: 4 }], false);
    expect(p.kind).toBe('scribble');
    expect(p.positive).toBe(false);
    expect((p.geometry as ScribbleGeometry).scribble.points).toEqual([
      [1, 2],
      [3, 4],
    ]);
  });

  it('rejects an empty path', () => {
    expect(() => scribblePrompt([], true)).toThrow(DegenerateGestureError);
  });
});

describe('gestureToPrompt', () => {
  it('uses the tool suffix for intent', () => {
    const tap = { x: 3, y: 3 };
    expect(gestureToPrompt('click+', { tap }).positive).toBe(true);
    expect(gestureToPrompt('click-', { tap }).positive).toBe(false);
  });

  it('routes each tool to its prompt kind', () => {
    expect(
      gestureToPrompt('box-', { drag: [{ x: 0, y: 0 }, { x: 8, y: 8 }] }).kind,
    ).toBe('box');
    expect(gestureToPrompt('scribble+', { path: [{ x: 1, y: 1 }] }).kind).toBe(
      'scribble',
    );
  });
});

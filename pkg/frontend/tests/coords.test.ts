import { describe, expect, it } from 'vitest';

import {
  canvasToImage,
  clamp,
  imageToCanvas,
  roundHalfUp,
} from '../src/coords';

describe('roundHalfUp', () => {
  it('rounds .5 upward', () => {
    expect(roundHalfUp(2.5)).toBe(3);
    expect(roundHalfUp(3.5)).toBe(4); // no banker's rounding
    expect(roundHalfUp(2.49)).toBe(2);
  });
});

describe('clamp', () => {
  it('pins to both ends', () => {
    expect(clamp(-3, 0, 9)).toBe(0);
    expect(clamp(12, 0, 9)).toBe(9);
    expect(clamp(4, 0, 9)).toBe(4);
  });
});

describe('canvasToImage', () => {
  const size = { width: 64, height: 64 };

  it('halves coordinates at scale 2, zero offset', () => {
    const p = canvasToImage(
      { x: 10, y: 10 },
      { scale: 2, offsetX: 0, offsetY: 0 },
      size,
    );
    expect(p).toEqual({ x: 5, y: 5 });
  });

  it('is the identity under the identity transform', () => {
    const view = { scale: 1, offsetX: 0, offsetY: 0 };
    for (const v of [0, 7, 31, 63]) {
      expect(canvasToImage({ x: v, y: v }, view, size)).toEqual({ x: v, y: v });
    }
  });

  it('clamps points past the right edge to width-1', () => {
    const p = canvasToImage(
      { x: 9999, y: 3 },
      { scale: 1, offsetX: 0, offsetY: 0 },
      size,
    );
    expect(p.x).toBe(63);
    expect(p.y).toBe(3);
  });

  it('rejects non-positive scale', () => {
    expect(() =>
      canvasToImage({ x: 0, y: 0 }, { scale: 0, offsetX: 0, offsetY: 0 }, size),
    ).toThrow(/scale/);
  });
});

describe('round trip over random view transforms', () => {
  it('maps 1000 random transforms back to the exact image pixel', () => {
    let state = 42;
    const rand = () => {
      // xorshift32; deterministic across runs
      state ^= state << 13;
      state ^= state >>> 17;
      state ^= state << 5;
      return (state >>> 0) / 2 ** 32;
    };
    for (let i = 0; i < 1000; i++) {
      const size = {
        width: 8 + Math.floor(rand() * 120),
        height: 8 + Math.floor(rand() * 120),
      };
      const view = {
        scale: 0.25 + rand() * 15.75,
        offsetX: Math.floor(rand() * 400) - 200,
        offsetY: Math.floor(rand() * 400) - 200,
      };
      const p = {
        x: Math.floor(rand() * size.width),
        y: Math.floor(rand() * size.height),
      };
      const roundTrip = canvasToImage(imageToCanvas(p, view), view, size);
      expect(roundTrip).toEqual(p);
    }
  });
});

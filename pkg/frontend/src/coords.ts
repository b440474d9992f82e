// Mapping between canvas (screen) pixels and image pixels.
//
// The canvas shows the image scaled by `scale` and shifted by
// (offsetX, offsetY) canvas pixels:
//   canvas = image * scale + offset
// so the inverse is (canvas - offset) / scale, rounded half-up and
// clamped to the image bounds.

export interface Point {
  x: number;
  y: number;
}

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export interface ImageSize {
  width: number;
  height: number;
}

// Math.round rounds -0.5 to -0 (toward +inf), which is already
// "half away from zero is up" for the non-negative coordinates we
// handle; we keep an explicit helper so the convention is greppable
// and matches the server's round-half-up.
export function roundHalfUp(v: number): number {
  return Math.floor(v + 0.5);
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export function canvasToImage(
  p: Point,
  view: ViewTransform,
  size: ImageSize,
): Point {
  if (view.scale <= 0) {
    throw new Error(`view scale must be positive, got ${view.scale}`);
  }
  const x = roundHalfUp((p.x - view.offsetX) / view.scale);
  const y = roundHalfUp((p.y - view.offsetY) / view.scale);
  return {
    x: clamp(x, 0, size.width - 1),
    y: clamp(y, 0, size.height - 1),
  };
}

// Forward transform; canvasToImage(imageToCanvas(p)) === p for every
// in-bounds pixel and any positive scale.
export function imageToCanvas(p: Point, view: ViewTransform): Point {
  return {
    x: p.x * view.scale + view.offsetX,
    y: p.y * view.scale + view.offsetY,
  };
}

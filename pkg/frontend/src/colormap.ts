/**
 * Diverging value-function colormap: unsafe (negative) in warm dark reds,
 * the zero level near white, and safe (positive) in greens. Pure integer
 * output so rendered frames are reproducible bit-for-bit.
 */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

const UNSAFE: [number, number, number] = [127, 29, 29];
const ZERO: [number, number, number] = [248, 250, 246];
const SAFE: [number, number, number] = [20, 108, 67];

function lerp(a: number, b: number, t: number): number {
  return Math.round(a + (b - a) * t);
}

/**
 * Map a value to a color given the symmetric normalization range.
 * `span` is the absolute value mapped to full saturation; values beyond
 * it clamp. NaN renders as transparent (out-of-slice nodes).
 */
export function valueToColor(value: number, span: number): Rgba {
  if (Number.isNaN(value)) return { r: 0, g: 0, b: 0, a: 0 };
  const s = span > 0 ? span : 1;
  const t = Math.max(-1, Math.min(1, value / s));
  const from = t < 0 ? UNSAFE : SAFE;
  const w = Math.abs(t);
  return {
    r: lerp(ZERO[0], from[0], w),
    g: lerp(ZERO[1], from[1], w),
    b: lerp(ZERO[2], from[2], w),
    a: 255,
  };
}

/** Symmetric color span for a slice: the largest finite magnitude. */
export function colorSpan(values: number[]): number {
  let m = 0;
  for (const v of values) {
    if (Number.isFinite(v)) m = Math.max(m, Math.abs(v));
  }
  return m > 0 ? m : 1;
}

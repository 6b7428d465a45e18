// Orbit camera state: spherical coordinates around a look-at point.
// All angles in degrees; the server consumes exactly these fields.

export interface OrbitState {
  azimuth: number;
  elevation: number;
  radius: number;
  lookAt: [number, number, number];
}

export const DEG_PER_PIXEL = 0.4;
export const ELEVATION_LIMIT = 89;
export const RADIUS_MIN = 0.1;
export const RADIUS_MAX = 100;

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

// keep azimuth canonical so a full lap lands back on the start pose
function wrapAzimuth(a: number): number {
  const w = a % 360;
  return w < 0 ? w + 360 : w;
}

export function clampElevation(e: number): number {
  return clamp(e, -ELEVATION_LIMIT, ELEVATION_LIMIT);
}

export function clampRadius(r: number): number {
  return clamp(r, RADIUS_MIN, RADIUS_MAX);
}

export function defaultState(): OrbitState {
  return { azimuth: 0, elevation: 15, radius: 4, lookAt: [0, 0, 0] };
}

export function onDrag(s: OrbitState, dx: number, dy: number): OrbitState {
  return {
    ...s,
    azimuth: wrapAzimuth(s.azimuth + dx * DEG_PER_PIXEL),
    elevation: clampElevation(s.elevation - dy * DEG_PER_PIXEL),
  };
}

export function onZoom(s: OrbitState, factor: number): OrbitState {
  if (!(factor > 0) || !isFinite(factor)) return s;
  return { ...s, radius: clampRadius(s.radius * factor) };
}

// framing heuristic: back off to twice the scene's AABB diagonal
export function radiusFromAabb(lo: number[], hi: number[]): number {
  let d2 = 0;
  for (let i = 0; i < 3; i++) {
    const e = (hi[i] ?? 0) - (lo[i] ?? 0);
    d2 += e * e;
  }
  return clampRadius(Math.sqrt(d2) * 2);
}

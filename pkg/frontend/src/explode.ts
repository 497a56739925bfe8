/**
 * Exploded-view offsets: each part slides along the direction from the
 * assembly centroid to its own centroid. Factor 0 is the identity. Display
 * geometry only — the underlying mesh data is never modified.
 */

import type { MeshPart } from "./api.js";

export type Vec3 = [number, number, number];

export function centroid(vertices: number[][]): Vec3 {
  if (vertices.length === 0) return [0, 0, 0];
  const sum: Vec3 = [0, 0, 0];
  for (const v of vertices) {
    sum[0] += v[0];
    sum[1] += v[1];
    sum[2] += v[2];
  }
  return [sum[0] / vertices.length, sum[1] / vertices.length, sum[2] / vertices.length];
}

/** Per-part translation for an exploded factor in [0, 1]. */
export function explodeOffsets(parts: MeshPart[], factor: number, spread = 1.0): Vec3[] {
  const centers = parts.map((p) => centroid(p.vertices));
  const n = parts.length || 1;
  const origin: Vec3 = [
    centers.reduce((s, c) => s + c[0], 0) / n,
    centers.reduce((s, c) => s + c[1], 0) / n,
    centers.reduce((s, c) => s + c[2], 0) / n,
  ];
  return centers.map((c) => {
    const d: Vec3 = [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]];
    const k = factor * spread;
    // + 0 folds IEEE negative zero back to positive zero at factor 0
    return [d[0] * k + 0, d[1] * k + 0, d[2] * k + 0];
  });
}

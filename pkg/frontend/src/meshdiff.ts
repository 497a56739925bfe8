/** Geometry comparison helpers for before/after checks. */

import type { MeshPayload } from "./api.js";

/**
 * Largest absolute vertex-coordinate difference between two payloads.
 * Infinity when the payloads are not comparable (different part count,
 * vertex count, or face indices).
 */
export function maxVertexDelta(a: MeshPayload, b: MeshPayload): number {
  if (a.parts.length !== b.parts.length) return Infinity;
  let worst = 0;
  for (let p = 0; p < a.parts.length; p++) {
    const va = a.parts[p].vertices;
    const vb = b.parts[p].vertices;
    if (va.length !== vb.length) return Infinity;
    if (JSON.stringify(a.parts[p].faces) !== JSON.stringify(b.parts[p].faces)) return Infinity;
    for (let i = 0; i < va.length; i++) {
      for (let j = 0; j < 3; j++) {
        worst = Math.max(worst, Math.abs(va[i][j] - vb[i][j]));
      }
    }
  }
  return worst;
}

/** Bit-exact payload equality (the server replay contract). */
export function meshesEqual(a: MeshPayload, b: MeshPayload): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}

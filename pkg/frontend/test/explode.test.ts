import { describe, expect, it } from "vitest";
import { centroid, explodeOffsets } from "../src/explode.js";
import type { MeshPart } from "../src/api.js";

function part(pid: number, center: [number, number, number]): MeshPart {
  const [x, y, z] = center;
  return {
    part_id: pid,
    label: null,
    vertices: [
      [x - 0.1, y, z],
      [x + 0.1, y, z],
      [x, y + 0.1, z],
      [x, y - 0.1, z],
    ],
    faces: [[0, 1, 2]],
    color: "#fff",
  };
}

describe("centroid", () => {
  it("averages vertices", () => {
    expect(centroid([[0, 0, 0], [2, 4, 6]])).toEqual([1, 2, 3]);
  });

  it("is zero for an empty part", () => {
    expect(centroid([])).toEqual([0, 0, 0]);
  });
});

describe("explodeOffsets", () => {
  const parts = [part(0, [-1, 0, 0]), part(1, [1, 0, 0])];

  it("factor 0 is the identity", () => {
    for (const off of explodeOffsets(parts, 0)) {
      expect(off).toEqual([0, 0, 0]);
    }
  });

  it("pushes parts apart along the centroid direction, scaled by factor", () => {
    const half = explodeOffsets(parts, 0.5);
    const full = explodeOffsets(parts, 1.0);
    expect(half[0][0]).toBeCloseTo(-0.5, 12);
    expect(half[1][0]).toBeCloseTo(0.5, 12);
    expect(full[0][0]).toBeCloseTo(2 * half[0][0], 12);
    // offsets are symmetric about the assembly centroid
    expect(full[0][0] + full[1][0]).toBeCloseTo(0, 12);
  });
});

import { describe, expect, it } from "vitest";
import { maxVertexDelta, meshesEqual } from "../src/meshdiff.js";
import type { MeshPayload } from "../src/api.js";

function payload(shift = 0): MeshPayload {
  return {
    parts: [
      {
        part_id: 0,
        label: "leg",
        vertices: [
          [0 + shift, 0, 0],
          [1, 0, 0],
          [0, 1, 0],
        ],
        faces: [[0, 1, 2]],
        color: "#123456",
      },
    ],
  };
}

describe("maxVertexDelta", () => {
  it("is zero for identical payloads", () => {
    expect(maxVertexDelta(payload(), payload())).toBe(0);
  });

  it("reports the largest coordinate difference", () => {
    expect(maxVertexDelta(payload(), payload(0.25))).toBeCloseTo(0.25, 12);
  });

  it("is Infinity for incomparable payloads", () => {
    const other = payload();
    other.parts[0].vertices.push([9, 9, 9]);
    expect(maxVertexDelta(payload(), other)).toBe(Infinity);
    expect(maxVertexDelta(payload(), { parts: [] })).toBe(Infinity);
  });
});

describe("meshesEqual", () => {
  it("matches exact payloads and rejects perturbed ones", () => {
    expect(meshesEqual(payload(), payload())).toBe(true);
    expect(meshesEqual(payload(), payload(1e-9))).toBe(false);
  });
});

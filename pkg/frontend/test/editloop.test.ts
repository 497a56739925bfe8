/**
 * End-to-end edit loop against an in-memory server that honors the /v1
 * contract: generate, swap with a candidate, undo back to a bit-exact
 * earlier mesh, and refine with alpha 0 leaving geometry unchanged.
 */

import { describe, expect, it } from "vitest";
import { Client, type EditBody, type MeshPayload, type Retrieval } from "../src/api.js";
import { maxVertexDelta, meshesEqual } from "../src/meshdiff.js";
import { reduce, initialState, swapCandidates, type SceneState } from "../src/state.js";

const K = 3;

function baseMesh(seed: number): MeshPayload {
  // deterministic pseudo-random triangles per part
  const parts = [];
  for (let pid = 0; pid < 4; pid++) {
    const vertices: number[][] = [];
    let s = seed * 1000 + pid;
    const next = () => {
      s = (s * 1103515245 + 12345) & 0x7fffffff;
      return (s % 1000) / 1000;
    };
    for (let i = 0; i < 6; i++) vertices.push([next(), next(), next()]);
    parts.push({
      part_id: pid,
      label: pid === 0 ? "seat" : "leg",
      vertices,
      faces: [
        [0, 1, 2],
        [3, 4, 5],
      ],
      color: "#336699",
    });
  }
  return { parts };
}

/** Minimal in-memory /v1 server exposed as a FetchLike. */
function makeServer() {
  interface Asset {
    base: MeshPayload;
    history: EditBody[];
  }
  const assets = new Map<string, Asset>();

  function applyEdit(mesh: MeshPayload, body: EditBody): MeshPayload {
    const out: MeshPayload = JSON.parse(JSON.stringify(mesh));
    if (body.op === "refine" && (body.alpha ?? 0) === 0) return out; // identity by contract
    const targets = new Set((body.target_parts as number[][]).flat());
    for (const part of out.parts) {
      if (!targets.has(part.part_id)) continue; // untouched parts stay bit-exact
      for (const v of part.vertices) {
        v[0] = Math.round((v[0] + 0.1) * 1e6) / 1e6;
      }
    }
    return out;
  }

  function replay(asset: Asset): MeshPayload {
    return asset.history.reduce(applyEdit, asset.base);
  }

  const json = (status: number, body: unknown) =>
    new Response(JSON.stringify(body), { status });

  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(init.body as string) : null;

    if (path === "/v1/generate") {
      const id = `asset-${assets.size}`;
      assets.set(id, { base: baseMesh(body.seed), history: [] });
      return json(202, { asset_id: id, poll: `/v1/assets/${id}` });
    }
    const m = path.match(/^\/v1\/assets\/([^/]+)(\/.*)?$/);
    if (!m) return json(404, { detail: "unknown route" });
    const asset = assets.get(m[1]);
    if (!asset) return json(404, { detail: "unknown asset" });
    const sub = m[2] ?? "";
    if (sub === "") {
      return json(200, {
        asset_id: m[1],
        source: "generate",
        status: "ready",
        n_parts: asset.base.parts.length,
        history: asset.history,
      });
    }
    if (sub === "/mesh") return json(200, replay(asset));
    if (sub === "/retrievals") {
      const rs: Retrieval[] = Array.from({ length: K }, (_, i) => ({
        asset_id: `exemplar-${i}`,
        similarity: 0.9 - 0.1 * i,
      }));
      return json(200, rs);
    }
    if (sub === "/edit") {
      asset.history.push(body as EditBody);
      return json(200, {
        accepted: true,
        retries_used: 0,
        metrics: { preservation_iou: 1.0 },
        meshes: replay(asset),
      });
    }
    if (sub === "/undo") {
      if (asset.history.length === 0) return json(422, { detail: "nothing to undo" });
      asset.history.pop();
      return json(200, { asset_id: m[1], edits: asset.history.length, meshes: replay(asset) });
    }
    return json(404, { detail: "unknown route" });
  };

  return { fetchFn, assets };
}

async function loadIntoState(client: Client, id: string, state: SceneState): Promise<SceneState> {
  const [detail, mesh, retrievals] = await Promise.all([
    client.asset(id),
    client.mesh(id),
    client.retrievals(id),
  ]);
  return reduce(state, { kind: "asset-loaded", assetId: id, mesh, history: detail.history, retrievals });
}

describe("edit loop", () => {
  it("generate, swap, undo returns the original mesh bit-exactly", async () => {
    const { fetchFn } = makeServer();
    const client = new Client("", fetchFn);

    const { asset_id } = await client.generate(42, 4);
    let state = await loadIntoState(client, asset_id, initialState());
    const original = state.mesh!;

    // the swap candidate pool is the asset's retrieval list, length k
    expect(swapCandidates(state.retrievals, K)).toHaveLength(K);

    state = reduce(state, { kind: "toggle-select", partId: 1 });
    state = reduce(state, { kind: "pick-candidate", index: 0 });
    const res = await client.edit(asset_id, {
      op: "swap",
      target_parts: [...state.selected],
      condition: { reference_part: { asset_id: state.retrievals[0].asset_id, part_id: 0 } },
    });
    expect(res.accepted).toBe(true);
    state = reduce(state, {
      kind: "edit-applied",
      mesh: res.meshes,
      history: (await client.asset(asset_id)).history,
      metrics: res.metrics,
    });
    expect(meshesEqual(state.mesh!, original)).toBe(false);
    // untouched parts survive the swap bit-exactly
    expect(JSON.stringify(state.mesh!.parts[0])).toBe(JSON.stringify(original.parts[0]));
    expect(state.history).toHaveLength(1);

    const undone = await client.undo(asset_id);
    state = reduce(state, {
      kind: "undo-applied",
      mesh: undone.meshes,
      history: (await client.asset(asset_id)).history,
    });
    expect(meshesEqual(state.mesh!, original)).toBe(true);
    expect(state.history).toHaveLength(0);
  });

  it("refine with alpha 0 leaves the mesh unchanged within 1e-9", async () => {
    const { fetchFn } = makeServer();
    const client = new Client("", fetchFn);
    const { asset_id } = await client.generate(7, 4);
    const before = await client.mesh(asset_id);
    const res = await client.edit(asset_id, { op: "refine", target_parts: [2], alpha: 0 });
    expect(res.accepted).toBe(true);
    expect(maxVertexDelta(before, res.meshes)).toBeLessThan(1e-9);
  });

  it("undo on a fresh asset is a 422 with a form hint", async () => {
    const { fetchFn } = makeServer();
    const client = new Client("", fetchFn);
    const { asset_id } = await client.generate(1, 4);
    await expect(client.undo(asset_id)).rejects.toMatchObject({ status: 422 });
  });
});

import { describe, expect, it } from "vitest";
import { ApiError, Client } from "../src/api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeFetch(status: number, body: unknown, calls: Call[]) {
  return async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
}

describe("client requests", () => {
  it("hits the versioned paths with the right methods", async () => {
    const calls: Call[] = [];
    const client = new Client("http://x", fakeFetch(200, {}, calls));
    await client.health();
    await client.listAssets();
    await client.asset("a1");
    await client.mesh("a1");
    await client.retrievals("a1");
    await client.edit("a1", { op: "refine", target_parts: [0], alpha: 0.5 });
    await client.undo("a1");
    expect(calls.map((c) => c.url)).toEqual([
      "http://x/v1/healthz",
      "http://x/v1/assets",
      "http://x/v1/assets/a1",
      "http://x/v1/assets/a1/mesh",
      "http://x/v1/assets/a1/retrievals",
      "http://x/v1/assets/a1/edit",
      "http://x/v1/assets/a1/undo",
    ]);
    expect(calls[5].init?.method).toBe("POST");
    expect(JSON.parse(calls[5].init?.body as string)).toEqual({
      op: "refine",
      target_parts: [0],
      alpha: 0.5,
    });
  });

  it("posts generate with seed and part count", async () => {
    const calls: Call[] = [];
    const client = new Client("", fakeFetch(202, { asset_id: "g1", poll: "/v1/assets/g1" }, calls));
    const res = await client.generate(7, 4);
    expect(res.asset_id).toBe("g1");
    expect(JSON.parse(calls[0].init?.body as string)).toEqual({ seed: 7, parts: 4 });
  });
});

describe("error mapping", () => {
  async function errorFor(status: number, detail = "nope"): Promise<ApiError> {
    const client = new Client("", fakeFetch(status, { detail }, []));
    try {
      await client.mesh("a1");
    } catch (err) {
      return err as ApiError;
    }
    throw new Error("expected failure");
  }

  it("carries status and server detail", async () => {
    const err = await errorFor(422, "unknown part id 9");
    expect(err.status).toBe(422);
    expect(err.message).toBe("unknown part id 9");
  });

  it("maps each status to a remediation hint", async () => {
    expect((await errorFor(409)).remediation).toMatch(/wait and retry/);
    expect((await errorFor(422)).remediation).toMatch(/Check the edit form/);
    expect((await errorFor(404)).remediation).toMatch(/refresh/);
    expect((await errorFor(503)).remediation).toMatch(/checkpoints/);
  });

  it("falls back to status text on non-JSON error bodies", async () => {
    const client = new Client("", async () => new Response("oops", { status: 500, statusText: "Internal Server Error" }));
    await expect(client.health()).rejects.toMatchObject({ status: 500 });
  });
});

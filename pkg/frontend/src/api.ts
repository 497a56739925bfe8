/**
 * Typed client for the /v1 editing service.
 *
 * Every mesh shown in the UI comes verbatim from one of these calls; the
 * client never mutates geometry.
 */

export interface MeshPart {
  part_id: number;
  label: string | null;
  vertices: number[][];
  faces: number[][];
  color: string;
}

export interface MeshPayload {
  parts: MeshPart[];
}

export interface Retrieval {
  asset_id: string;
  similarity: number;
}

export interface AssetSummary {
  asset_id: string;
  source: string;
  status: string;
  n_parts: number;
  edits: number;
}

export interface AssetDetail {
  asset_id: string;
  source: string;
  status: string;
  n_parts: number;
  history: unknown[];
}

export interface EditCondition {
  label?: string;
  reference_part?: { asset_id: string; part_id: number };
}

export interface EditBody {
  op: "swap" | "refine" | "compose";
  target_parts: number[] | number[][];
  condition?: EditCondition;
  conditions?: EditCondition[];
  alpha?: number;
  k?: number;
  k_steps?: number;
  seed?: number;
}

export interface EditResponse {
  accepted: boolean;
  retries_used: number;
  metrics: Record<string, number>;
  meshes: MeshPayload;
}

export interface UndoResponse {
  asset_id: string;
  edits: number;
  meshes: MeshPayload;
}

export interface Health {
  status: string;
  index_fingerprint: string | null;
  assets: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }

  /** Short remediation hint for inline display next to the error. */
  get remediation(): string {
    if (this.status === 409) return "Another edit is running on this asset; wait and retry.";
    if (this.status === 422) return "Check the edit form: " + this.message;
    if (this.status === 404) return "Asset not found; refresh the asset list.";
    if (this.status === 503) return "Server has no model loaded; start it with trained checkpoints.";
    return "Unexpected server error.";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.call<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<Health> {
    return this.call("/v1/healthz");
  }

  listAssets(): Promise<AssetSummary[]> {
    return this.call("/v1/assets");
  }

  generate(seed: number, parts: number): Promise<{ asset_id: string; poll: string }> {
    return this.post("/v1/generate", { seed, parts });
  }

  asset(id: string): Promise<AssetDetail> {
    return this.call(`/v1/assets/${id}`);
  }

  mesh(id: string): Promise<MeshPayload> {
    return this.call(`/v1/assets/${id}/mesh`);
  }

  retrievals(id: string): Promise<Retrieval[]> {
    return this.call(`/v1/assets/${id}/retrievals`);
  }

  edit(id: string, body: EditBody): Promise<EditResponse> {
    return this.post(`/v1/assets/${id}/edit`, body);
  }

  undo(id: string): Promise<UndoResponse> {
    return this.post(`/v1/assets/${id}/undo`, {});
  }
}

// Thin typed client over the generation service. All calls are idempotent
// reads or pure generate/render POSTs; the client never mutates server state.

import type { StructuredPrompt } from "./template.js";

export interface RoadJson {
  road_id: number;
  name: string;
  length_m: number;
  polyline: [number, number][];
}

export interface NetworkJson {
  n_roads: number;
  roads: RoadJson[];
  edges: [number, number][];
}

export interface VocabJson {
  tokens: string[];
  size: number;
  l_max: number;
}

export interface SnapshotJson {
  timestamp: string;
  speeds: number[];
  congestion: number[];
  travel_times: number[];
}

export interface GenerateRequest {
  text?: string;
  structured?: StructuredPrompt;
  samples?: number;
  seed?: number;
}

export interface GenerateResponse {
  snapshot: SnapshotJson;
  prompt: { text: string; structured: StructuredPrompt | null };
  samples: number;
  seed: number;
  n_diverged: number;
  model_hash: string;
  config_hash: string;
}

export interface PresetJson {
  name: string;
  request: GenerateRequest;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseJson(res: Response): Promise<unknown> {
  try {
    return await res.json();
  } catch {
    throw new ApiError(res.status, "bad_payload", "response was not JSON");
  }
}

async function raiseFor(res: Response): Promise<void> {
  if (res.ok) return;
  let code = "http_error";
  let message = `request failed with status ${res.status}`;
  try {
    const doc = (await res.json()) as { error?: { code?: string; message?: string } };
    if (doc.error) {
      code = doc.error.code ?? code;
      message = doc.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the generic message
  }
  throw new ApiError(res.status, code, message);
}

export interface Client {
  health(): Promise<{ status: string; model_hash: string }>;
  network(): Promise<NetworkJson>;
  vocab(): Promise<VocabJson>;
  presets(): Promise<PresetJson[]>;
  generate(req: GenerateRequest): Promise<GenerateResponse>;
}

export function makeClient(baseUrl: string, fetchFn: FetchLike): Client {
  const get = async (path: string): Promise<unknown> => {
    const res = await fetchFn(baseUrl + path);
    await raiseFor(res);
    return parseJson(res);
  };
  return {
    async health() {
      return (await get("/api/health")) as { status: string; model_hash: string };
    },
    async network() {
      return (await get("/api/network")) as NetworkJson;
    },
    async vocab() {
      return (await get("/api/vocab")) as VocabJson;
    },
    async presets() {
      const doc = (await get("/api/presets")) as { presets: PresetJson[] };
      return doc.presets;
    },
    async generate(req: GenerateRequest) {
      const res = await fetchFn(baseUrl + "/api/generate", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(req),
      });
      await raiseFor(res);
      return (await parseJson(res)) as GenerateResponse;
    },
  };
}

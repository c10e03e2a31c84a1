// Thin typed wrappers over the panel service JSON API. The UI never computes
// pixels or predictions itself; everything displayed comes from these calls.

export interface SampleInfo {
  id: string;
  class_name: string;
  image_b64: string;
  width: number;
  height: number;
}

export interface ModelInfo {
  id: string;
  name: string;
  kind_tag: string;
}

export interface Prediction {
  model_id: string;
  label: number;
  class_name: string;
  confidence: number;
  correct: boolean;
  probs: number[];
}

export interface PerturbResponse {
  image_b64: string;
  width: number;
  height: number;
  predictions: Prediction[];
}

export interface GridCell {
  image_b64: string;
  width: number;
  height: number;
  label: number;
  class_name: string;
  confidence: number;
  correct: boolean;
}

export interface GridRow {
  order: string[];
  cells: GridCell[];
}

export interface BoardEntry {
  rank: number;
  model_name: string;
  architecture: string;
  clean_accuracy: number;
  linf_accuracy: number;
  semantic_accuracy: number;
  full_accuracy: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let message = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (body && body.message) message = body.message;
    } catch {
      /* non-JSON error body; keep the status line */
    }
    throw new Error(message);
  }
  return resp.json() as Promise<T>;
}

export async function getSamples(fetchFn: FetchLike): Promise<SampleInfo[]> {
  return asJson(await fetchFn("/api/samples"));
}

export async function getModels(fetchFn: FetchLike): Promise<ModelInfo[]> {
  return asJson(await fetchFn("/api/models"));
}

export async function postPerturb(fetchFn: FetchLike, body: unknown): Promise<PerturbResponse> {
  return asJson(
    await fetchFn("/api/perturb", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    })
  );
}

export async function getOrderGrid(
  fetchFn: FetchLike,
  sampleId: string,
  modelId: string,
  kinds: string[],
  maxOrders = 24
): Promise<GridRow[]> {
  const params = new URLSearchParams({
    sample_id: sampleId,
    model_id: modelId,
    kinds: kinds.join(","),
    max_orders: String(maxOrders),
  });
  const doc = await asJson<{ rows: GridRow[] }>(await fetchFn(`/api/order-grid?${params}`));
  return doc.rows;
}

export async function getLeaderboard(fetchFn: FetchLike): Promise<BoardEntry[]> {
  return asJson(await fetchFn("/api/leaderboard"));
}

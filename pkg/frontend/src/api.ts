// Thin typed client over the /v1 review API. The fetch implementation is
// injectable so tests can stand in a fake server.

export type Label = "yawn" | "no_yawn" | "no_face";

export const LABELS: Label[] = ["yawn", "no_yawn", "no_face"];

export interface BatchFrame {
  frame_id: string;
  video_id: string;
  index: number;
  auto_label: Label;
  confidence: number;
  mouth_box: number[] | null;
  status: "auto" | "verified";
  label: Label;
  final_label: Label | null;
  crop_url: string;
}

export interface Batch {
  batch_id: string;
  ordering: string;
  status: string;
  lease_expires_at_ms: number;
  frames: BatchFrame[];
}

export interface Progress {
  corpus_id: string;
  total_frames: number;
  auto: number;
  verified: number;
  agreement_rate: number | null;
  batches: { pending: number; locked: number; submitted: number };
  per_video: Record<string, { frames: number; verified: number }>;
}

export interface Decision {
  frame_id: string;
  final_label: Label;
}

export interface SubmitResult {
  batch_id: string;
  verified_delta: number;
  idempotent: boolean;
  progress: Progress;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public retryAfterS: number | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (typeof body?.detail === "string") return body.detail;
    if (typeof body?.detail?.message === "string") return body.detail.message;
    return JSON.stringify(body);
  } catch {
    return res.statusText || `HTTP ${res.status}`;
  }
}

export class ApiClient {
  private token: string | null = null;
  reviewer: string | null = null;

  constructor(
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private base = "",
  ) {}

  get authenticated(): boolean {
    return this.token !== null;
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<Response> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (body !== undefined) headers["Content-Type"] = "application/json";
    const res = await this.fetchImpl(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!res.ok && res.status !== 204) {
      const retry = res.headers.get("Retry-After");
      throw new ApiError(
        res.status,
        await errorDetail(res),
        retry === null ? null : Number(retry),
      );
    }
    return res;
  }

  async openSession(reviewer: string): Promise<void> {
    const res = await this.request("POST", "/v1/session", { reviewer });
    const body = await res.json();
    this.token = body.token;
    this.reviewer = body.reviewer;
  }

  /** Returns null when nothing is pending (204). Throws ApiError with
      retryAfterS on 423 when every open batch is leased elsewhere. */
  async checkout(ordering = "by_video"): Promise<Batch | null> {
    const res = await this.request("POST", "/v1/batches/checkout", { ordering });
    if (res.status === 204) return null;
    return (await res.json()) as Batch;
  }

  async submit(batchId: string, decisions: Decision[]): Promise<SubmitResult> {
    const res = await this.request(
      "POST",
      `/v1/batches/${batchId}/submit`,
      { decisions },
    );
    return (await res.json()) as SubmitResult;
  }

  async progress(): Promise<Progress> {
    const res = await this.request("GET", "/v1/progress");
    return (await res.json()) as Progress;
  }
}

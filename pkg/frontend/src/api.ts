/**
 * Typed client for the review service. The UI never computes scientific
 * values: everything rendered comes verbatim from these payloads (the delta
 * preview uses the server's dry-run endpoint).
 */

export interface RoundInfo {
  index: number;
  status: "open" | "awaiting_results" | "closed";
  pool_size: number;
  selection_pool_size: number;
  scored: boolean;
  tested: string[];
  template_version: string;
}

export interface CampaignSummary {
  campaign_id: string;
  version: number;
  results: number;
  molecules: number;
  representation_mode: string;
  shortlist_size: number;
  rounds: RoundInfo[];
}

export interface CandidateRow {
  molecule_id: string;
  name: string;
  smiles: string;
  mu: number;
  sigma: number;
  ei: number;
  rank: number;
  feasible: boolean;
  tested: boolean;
  delta_rel: number | null;
  soft_means: number[] | null;
  soft_stds: number[] | null;
}

export interface CandidatePage {
  round: number;
  total: number;
  version: number;
  candidates: CandidateRow[];
}

export interface ErrorBody {
  code: "not_found" | "conflict" | "validation" | "numerical" | "busy";
  message: string;
  detail: unknown;
}

export interface JobStatus {
  job_id: string;
  status: "pending" | "done" | "failed";
  error?: ErrorBody;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

export type Fetcher = (input: string, init?: RequestInit) => Promise<Response>;

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetcher: Fetcher = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetcher(this.base + path, init);
    if (resp.status === 304 || resp.ok) {
      return resp;
    }
    let body: ErrorBody;
    try {
      body = (await resp.json()) as ErrorBody;
    } catch {
      body = { code: "validation", message: `HTTP ${resp.status}`, detail: null };
    }
    throw new ApiError(resp.status, body);
  }

  /** Conditional fetch: summary is null when the ETag still matches. */
  async campaign(etag?: string | null): Promise<{ summary: CampaignSummary | null; etag: string | null }> {
    const headers: Record<string, string> = {};
    if (etag) headers["If-None-Match"] = etag;
    const resp = await this.request("/api/campaign", { headers });
    const newTag = resp.headers.get("ETag");
    if (resp.status === 304) {
      return { summary: null, etag: newTag ?? etag ?? null };
    }
    return { summary: (await resp.json()) as CampaignSummary, etag: newTag };
  }

  async candidates(
    round: number,
    opts: { sort?: "ei" | "mu" | "sigma"; limit?: number; offset?: number; feasibleOnly?: boolean } = {},
  ): Promise<CandidatePage> {
    const params = new URLSearchParams({
      sort: opts.sort ?? "ei",
      limit: String(opts.limit ?? 50),
      offset: String(opts.offset ?? 0),
    });
    if (opts.feasibleOnly) params.set("feasible_only", "true");
    const resp = await this.request(`/api/rounds/${round}/candidates?${params}`);
    return (await resp.json()) as CandidatePage;
  }

  async setFeasibility(
    moleculeId: string,
    feasible: boolean,
    note = "",
    version?: number,
  ): Promise<{ molecule_id: string; feasible: boolean; version: number }> {
    const resp = await this.request(`/api/candidates/${encodeURIComponent(moleculeId)}/feasibility`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ feasible, note, version }),
    });
    return await resp.json();
  }

  async submitResult(draft: {
    molecule_id: string;
    round: number;
    pce_additive: number;
    pce_control: number;
  }): Promise<{ molecule_id: string; round: number; delta_rel: number; version: number }> {
    const resp = await this.request("/api/results", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(draft),
    });
    return await resp.json();
  }

  /** Server-side dry run; the client never computes the relative change. */
  async previewDelta(pceAdditive: number, pceControl: number): Promise<number> {
    const params = new URLSearchParams({
      pce_additive: String(pceAdditive),
      pce_control: String(pceControl),
    });
    const resp = await this.request(`/api/results/preview?${params}`);
    return (await resp.json()).delta_rel as number;
  }

  async retrain(round: number): Promise<{ job_id: string; status: string }> {
    const resp = await this.request(`/api/rounds/${round}/retrain`, { method: "POST" });
    return await resp.json();
  }

  async job(jobId: string): Promise<JobStatus> {
    const resp = await this.request(`/api/jobs/${encodeURIComponent(jobId)}`);
    return (await resp.json()) as JobStatus;
  }

  async waitForJob(jobId: string, intervalMs = 500, timeoutMs = 120_000): Promise<JobStatus> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const status = await this.job(jobId);
      if (status.status !== "pending") return status;
      if (Date.now() > deadline) throw new Error(`job ${jobId} still pending after ${timeoutMs} ms`);
      await sleep(intervalMs);
    }
  }
}

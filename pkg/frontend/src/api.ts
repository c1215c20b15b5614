/**
 * Typed client for the ovam HTTP service. Pure data in/out; no DOM.
 */
import { subscribe, SseEvent } from "./sse.js";

export interface SessionInfo {
  id: string;
  image_url: string;
  prompt: string;
  seed: number;
  image_w: number;
  image_h: number;
  timesteps: number[];
}

export interface HeatmapResult {
  heatmap_url: string;
  raster_url: string;
  meta_url: string;
  token_label: string;
  stats: { max: number; area_at_tau: number };
}

export interface MaskResult {
  mask_url: string;
  area_fraction: number;
  tau: number;
  alpha: number;
}

export interface TokenInfo {
  id: string;
  label: string;
  embed_dim: number;
  backend_id: string;
  best_loss: number | null;
}

export interface MaskRequest {
  attribution_prompt?: string;
  token_id?: string;
  token_index?: number;
  tau?: number;
  alpha?: number;
  crf?: boolean;
  self_attention?: boolean;
}

export interface OptimizationConfig {
  learning_rate?: number;
  decay_factor?: number;
  decay_every?: number;
  epochs?: number;
}

export interface CompleteEvent {
  token_id: string | null;
  best_loss: number | null;
  best_epoch: number | null;
  error: string | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let message = response.statusText;
  try {
    const body = await response.json();
    message = body.message ?? body.detail ?? JSON.stringify(body);
  } catch {
    // non-JSON error body: keep the status text
  }
  return new ApiError(response.status, message);
}

export class OvamClient {
  constructor(private base = "", private fetchImpl: typeof fetch = fetch) {}

  url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.url(path), init);
    if (!response.ok) throw await parseError(response);
    return response.json() as Promise<T>;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<{ status: string; backend: string }> {
    return this.json("/health");
  }

  createSession(prompt: string, seed: number,
                steps?: number): Promise<SessionInfo> {
    return this.post("/sessions", { prompt, seed, steps: steps ?? null });
  }

  heatmap(sessionId: string, attributionPrompt: string, tokenIndex?: number,
          tau?: number): Promise<HeatmapResult> {
    return this.post(`/sessions/${sessionId}/heatmap`, {
      attribution_prompt: attributionPrompt,
      token_index: tokenIndex ?? null,
      tau: tau ?? 0.4,
    });
  }

  mask(sessionId: string, request: MaskRequest): Promise<MaskResult> {
    return this.post(`/sessions/${sessionId}/mask`, request);
  }

  async putAnnotation(sessionId: string, png: Uint8Array): Promise<void> {
    const response = await this.fetchImpl(
      this.url(`/sessions/${sessionId}/annotation`), {
        method: "PUT",
        headers: { "Content-Type": "image/png" },
        body: png as unknown as BodyInit,
      });
    if (!response.ok) throw await parseError(response);
  }

  async getAnnotation(sessionId: string): Promise<Uint8Array> {
    const response = await this.fetchImpl(
      this.url(`/sessions/${sessionId}/annotation`));
    if (!response.ok) throw await parseError(response);
    return new Uint8Array(await response.arrayBuffer());
  }

  startOptimization(sessionIds: string[], className: string,
                    config: OptimizationConfig): Promise<{ job_id: string }> {
    return this.post("/optimizations", {
      session_ids: sessionIds,
      class_name: className,
      config,
    });
  }

  /** Follow a job's SSE stream; resolves with the complete event. */
  async followOptimization(
    jobId: string,
    onLoss: (point: { epoch: number; loss: number; lr: number }) => void,
  ): Promise<CompleteEvent> {
    let complete: CompleteEvent | null = null;
    await subscribe(this.url(`/optimizations/${jobId}/events`), {
      onEvent: (event: SseEvent) => {
        const payload = JSON.parse(event.data);
        if (event.event === "complete") complete = payload as CompleteEvent;
        else onLoss(payload);
      },
    }, this.fetchImpl);
    if (!complete) throw new Error("event stream ended without completion");
    return complete;
  }

  listTokens(): Promise<TokenInfo[]> {
    return this.json("/tokens");
  }

  getToken(tokenId: string): Promise<TokenInfo & { rows: number[][] }> {
    return this.json(`/tokens/${tokenId}`);
  }

  /** Request a mask per tau (other params fixed); returns tau/area pairs. */
  async sweepTau(sessionId: string, request: MaskRequest,
                 taus: number[]): Promise<{ tau: number; area: number }[]> {
    const out: { tau: number; area: number }[] = [];
    for (const tau of taus) {
      const result = await this.mask(sessionId, { ...request, tau });
      out.push({ tau, area: result.area_fraction });
    }
    return out;
  }
}

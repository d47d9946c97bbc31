/**
 * Service client. Serialization is a pure function of console state; the
 * console never synthesizes audio locally, every sample comes back from
 * the service.
 */

import { generateChoirSpec } from "./choirSpec.js";
import { ConsoleState, normalizedWeights } from "./state.js";

export interface PrototypeInfo {
  id: string;
  name: string;
}

export interface MelodyInfo {
  id: string;
  name: string;
  frames: number | null;
}

export interface AuditionRequest {
  endpoint: "/v1/synthesize" | "/v1/choir";
  body: Record<string, unknown>;
}

/** Pure: identical states serialize to identical request payloads. */
export function serializeAudition(state: ConsoleState): AuditionRequest {
  if (state.melodyId == null) {
    throw new Error("no melody selected");
  }
  const weights = normalizedWeights(state.rawWeights);
  if (state.nSingers <= 1) {
    return {
      endpoint: "/v1/synthesize",
      body: { weights, melody_id: state.melodyId, seed: state.seed },
    };
  }
  const spec = generateChoirSpec(
    weights,
    state.nSingers,
    state.detuneSdCents,
    state.onsetSdMs,
    state.timbreSpread,
    state.seed,
  );
  return { endpoint: "/v1/choir", body: { spec, melody_id: state.melodyId } };
}

export async function requestBodyHash(body: Record<string, unknown>): Promise<string> {
  const text = JSON.stringify(body);
  if (typeof crypto !== "undefined" && crypto.subtle) {
    const digest = await crypto.subtle.digest("SHA-256", new TextEncoder().encode(text));
    return Array.from(new Uint8Array(digest))
      .map((b) => b.toString(16).padStart(2, "0"))
      .join("");
  }
  // decent non-cryptographic fallback for odd environments
  let h = 2166136261 >>> 0;
  for (let i = 0; i < text.length; i++) {
    h = Math.imul(h ^ text.charCodeAt(i), 16777619) >>> 0;
  }
  return h.toString(16);
}

export interface ServiceError extends Error {
  status?: number;
  requestId?: string;
  retryable: boolean;
}

function serviceError(message: string, status?: number, requestId?: string): ServiceError {
  const err = new Error(message) as ServiceError;
  err.status = status;
  err.requestId = requestId;
  err.retryable = status === 429 || status === 504 || status === undefined;
  return err;
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw serviceError(`GET ${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }

  prototypes(): Promise<PrototypeInfo[]> {
    return this.getJson("/v1/prototypes");
  }

  melodies(): Promise<MelodyInfo[]> {
    return this.getJson("/v1/melodies");
  }

  /** POSTs an audition request; resolves to WAV bytes plus the request id. */
  async render(request: AuditionRequest): Promise<{ wav: ArrayBuffer; requestId: string }> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${request.endpoint}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request.body),
      });
    } catch (cause) {
      throw serviceError(`service unreachable: ${String(cause)}`);
    }
    if (!response.ok) {
      let message = `render failed (${response.status})`;
      let requestId: string | undefined;
      try {
        const body = (await response.json()) as { message?: string; request_id?: string };
        if (body.message) message = body.message;
        requestId = body.request_id;
      } catch {
        /* non-JSON error body; keep the generic message */
      }
      throw serviceError(message, response.status, requestId);
    }
    return {
      wav: await response.arrayBuffer(),
      requestId: response.headers.get("X-Request-Id") ?? "",
    };
  }
}

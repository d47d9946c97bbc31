/**
 * Console state and the pure transforms over it.
 *
 * Sliders store raw (unnormalized) weights so adjusting one prototype never
 * silently rescales the user's other inputs; the displayed and serialized
 * weights are the normalized simplex.
 */

export interface ConsoleState {
  /** raw slider values, one per prototype; any non-negative reals */
  rawWeights: number[];
  nSingers: number;
  detuneSdCents: number;
  onsetSdMs: number;
  /** blend between the user's proportions and fully random singers */
  timbreSpread: number;
  seed: number;
  melodyId: string | null;
}

export interface RenderStatus {
  kind: "idle" | "pending" | "done" | "error";
  requestId?: string;
  renderMs?: number;
  message?: string;
  retryable?: boolean;
}

export function initialState(prototypeCount: number): ConsoleState {
  return {
    rawWeights: new Array(prototypeCount).fill(1),
    nSingers: 1,
    detuneSdCents: 10,
    onsetSdMs: 20,
    timbreSpread: 0.5,
    seed: 0,
    melodyId: null,
  };
}

/** Normalized simplex view of the raw sliders; uniform if everything is 0. */
export function normalizedWeights(raw: number[]): number[] {
  const clipped = raw.map((w) => (Number.isFinite(w) && w > 0 ? w : 0));
  const total = clipped.reduce((a, b) => a + b, 0);
  if (total <= 0) {
    return clipped.map(() => 1 / clipped.length);
  }
  return clipped.map((w) => w / total);
}

export function setWeight(state: ConsoleState, index: number, value: number): ConsoleState {
  const rawWeights = state.rawWeights.slice();
  rawWeights[index] = Math.max(0, value);
  return { ...state, rawWeights };
}

export type StatusEvent =
  | { type: "requested" }
  | { type: "completed"; requestId: string; renderMs: number }
  | { type: "failed"; message: string; retryable: boolean }
  | { type: "dismissed" };

/** Status transitions for the render banner; failures stay dismissible. */
export function statusReducer(status: RenderStatus, event: StatusEvent): RenderStatus {
  switch (event.type) {
    case "requested":
      return { kind: "pending" };
    case "completed":
      return { kind: "done", requestId: event.requestId, renderMs: event.renderMs };
    case "failed":
      return { kind: "error", message: event.message, retryable: event.retryable };
    case "dismissed":
      return status.kind === "error" ? { kind: "idle" } : status;
  }
}

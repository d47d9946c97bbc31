/** DOM wiring for the console. All logic lives in the pure modules. */

import { AuditionRequest, ServiceClient, requestBodyHash, serializeAudition, ServiceError } from "./api.js";
import { AbComparator, RenderPlayer } from "./player.js";
import { CompletedRender, CompareModel, RenderCache, compareEnabled, parameterDiff } from "./renders.js";
import { ConsoleState, RenderStatus, initialState, normalizedWeights, setWeight, statusReducer } from "./state.js";

const baseUrl = (window as { SERVICE_URL?: string }).SERVICE_URL ?? "";
const client = new ServiceClient(baseUrl);
const cache = new RenderCache();
const player = new RenderPlayer();
const comparator = new AbComparator(new RenderPlayer(), new RenderPlayer());
const compareModel: CompareModel = { a: null, b: null };

let state: ConsoleState = initialState(0);
let status: RenderStatus = { kind: "idle" };
let lastRequest: AuditionRequest | null = null;
let inflight = 0; // request generation counter; stale responses are dropped

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
};

function renderStatus(): void {
  const banner = el<HTMLDivElement>("banner");
  banner.className = `banner banner-${status.kind}`;
  if (status.kind === "error") {
    banner.textContent = `render failed: ${status.message ?? "unknown error"}`;
    const dismiss = document.createElement("button");
    dismiss.textContent = "dismiss";
    dismiss.onclick = () => {
      status = statusReducer(status, { type: "dismissed" });
      renderStatus();
    };
    banner.appendChild(dismiss);
    if (status.retryable) {
      const retry = document.createElement("button");
      retry.textContent = "retry";
      retry.onclick = () => void audition();
      banner.appendChild(retry);
    }
  } else if (status.kind === "pending") {
    banner.textContent = "rendering...";
  } else if (status.kind === "done") {
    banner.textContent =
      `done in ${status.renderMs ?? 0} ms (request ${status.requestId ?? "?"})`;
  } else {
    banner.textContent = "";
  }
  el<HTMLButtonElement>("compare-start").disabled = !compareEnabled(compareModel);
  el<HTMLButtonElement>("compare-toggle").disabled = !compareEnabled(compareModel);
}

function renderWeights(prototypeNames: string[]): void {
  const holder = el<HTMLDivElement>("weights");
  holder.innerHTML = "";
  const shares = normalizedWeights(state.rawWeights);
  prototypeNames.forEach((name, i) => {
    const row = document.createElement("div");
    row.className = "weight-row";
    const label = document.createElement("label");
    label.textContent = name;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(Math.round(state.rawWeights[i] * 100));
    slider.oninput = () => {
      state = setWeight(state, i, Number(slider.value) / 100);
      renderWeights(prototypeNames);
    };
    const share = document.createElement("span");
    share.textContent = (shares[i] ?? 0).toFixed(3);
    row.append(label, slider, share);
    holder.appendChild(row);
  });
  const total = shares.reduce((a, b) => a + b, 0);
  el<HTMLSpanElement>("weight-sum").textContent = total.toFixed(3);
}

async function audition(): Promise<void> {
  const generation = ++inflight;
  status = statusReducer(status, { type: "requested" });
  renderStatus();
  let request: AuditionRequest;
  try {
    request = serializeAudition(state);
  } catch (err) {
    status = statusReducer(status, {
      type: "failed", message: String(err), retryable: false,
    });
    renderStatus();
    return;
  }
  const started = performance.now();
  try {
    const hash = await requestBodyHash(request.body);
    let render = cache.get(hash);
    if (!render) {
      const { wav, requestId } = await client.render(request);
      render = {
        hash,
        requestId,
        wav,
        params: request.body,
        renderMs: Math.round(performance.now() - started),
      };
      cache.put(render);
    }
    if (generation !== inflight) {
      return; // superseded by a newer request
    }
    lastRender = render;
    lastRequest = request;
    player.load(render.wav);
    void player.play();
    status = statusReducer(status, {
      type: "completed", requestId: render.requestId, renderMs: render.renderMs,
    });
  } catch (err) {
    if (generation !== inflight) {
      return;
    }
    const failure = err as ServiceError;
    status = statusReducer(status, {
      type: "failed",
      message: failure.message,
      retryable: failure.retryable ?? true,
    });
  }
  renderStatus();
}

let lastRender: CompletedRender | null = null;

function keepForCompare(slot: "a" | "b"): void {
  if (!lastRender) return;
  compareModel[slot] = lastRender;
  const diffHolder = el<HTMLTableSectionElement>("compare-diff");
  diffHolder.innerHTML = "";
  if (compareModel.a && compareModel.b) {
    for (const row of parameterDiff(compareModel.a.params, compareModel.b.params)) {
      const tr = document.createElement("tr");
      tr.className = row.differs ? "diff" : "";
      tr.innerHTML = `<td>${row.key}</td><td>${row.a}</td><td>${row.b}</td>`;
      diffHolder.appendChild(tr);
    }
  }
  renderStatus();
}

async function boot(): Promise<void> {
  try {
    const prototypes = await client.prototypes();
    const melodies = await client.melodies();
    state = initialState(prototypes.length);
    state = { ...state, melodyId: melodies[0]?.id ?? null };
    const select = el<HTMLSelectElement>("melody");
    for (const melody of melodies) {
      const option = document.createElement("option");
      option.value = melody.id;
      option.textContent = `${melody.name} (${melody.frames ?? "?"} frames)`;
      select.appendChild(option);
    }
    select.onchange = () => {
      state = { ...state, melodyId: select.value };
    };
    renderWeights(prototypes.map((p) => p.name));
  } catch (err) {
    status = { kind: "error", message: `service unreachable: ${String(err)}`, retryable: true };
  }

  const bindNumber = (id: string, apply: (value: number) => void) => {
    const input = el<HTMLInputElement>(id);
    input.onchange = () => apply(Number(input.value));
  };
  bindNumber("n-singers", (v) => { state = { ...state, nSingers: Math.max(1, Math.round(v)) }; });
  bindNumber("detune-sd", (v) => { state = { ...state, detuneSdCents: Math.max(0, v) }; });
  bindNumber("onset-sd", (v) => { state = { ...state, onsetSdMs: Math.max(0, v) }; });
  bindNumber("spread", (v) => { state = { ...state, timbreSpread: Math.min(1, Math.max(0, v)) }; });
  bindNumber("seed", (v) => { state = { ...state, seed: Math.round(v) }; });

  el<HTMLButtonElement>("audition").onclick = () => void audition();
  el<HTMLButtonElement>("keep-a").onclick = () => keepForCompare("a");
  el<HTMLButtonElement>("keep-b").onclick = () => keepForCompare("b");
  el<HTMLButtonElement>("compare-start").onclick = () => {
    if (compareModel.a && compareModel.b) {
      comparator.loadPair(compareModel.a.wav, compareModel.b.wav);
      void comparator.start();
    }
  };
  el<HTMLButtonElement>("compare-toggle").onclick = () => void comparator.toggle();
  renderStatus();
}

document.addEventListener("DOMContentLoaded", () => void boot());

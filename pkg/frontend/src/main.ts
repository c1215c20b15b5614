/**
 * DOM wiring for the exploration UI.
 *
 * Workflow: create a session, type attribution prompts to see heatmap
 * overlays, tune tau/alpha against live mask areas, paint or outline the one
 * annotation the optimizer needs, launch optimization with the standard
 * schedule, watch the loss stream, then apply the stored token anywhere.
 */
import { ApiError, MaskRequest, OvamClient } from "./api.js";
import { drawLossChart } from "./chart.js";
import { browserInflate, decodePngAsync, encodeGrayPng } from "./png.js";
import { Point, createRaster, fillPolygon, strokeBrush } from "./raster.js";
import {
  OPTIMIZER_DEFAULTS,
  PROMPT_DEFAULTS,
  TOKEN_DEFAULTS,
  UiSessionState,
  addOverlay,
  appendLoss,
  assertAreaMonotonic,
  clampUnit,
  completeOptimization,
  newSessionState,
  recordPrompt,
  setParams,
  startOptimization,
} from "./state.js";

const client = new OvamClient("");

let state: UiSessionState | null = null;
let tool: "brush" | "polygon" | "erase" = "brush";
let brushRadius = 4;
let polygon: Point[] = [];
let drawing = false;
let lastPoint: Point | null = null;
let activeToken: string | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(message: string, isError = false): void {
  const status = el<HTMLDivElement>("status");
  status.textContent = message;
  status.className = isError ? "status error" : "status";
}

function showError(err: unknown): void {
  if (err instanceof ApiError) setStatus(`${err.status}: ${err.message}`, true);
  else setStatus(String(err), true);
}

function imageCanvas(): HTMLCanvasElement {
  return el<HTMLCanvasElement>("view");
}

function annotationCanvas(): HTMLCanvasElement {
  return el<HTMLCanvasElement>("annotation");
}

async function redraw(): Promise<void> {
  if (!state) return;
  const canvas = imageCanvas();
  const ctx = canvas.getContext("2d")!;
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = reject;
    img.src = state!.imageUrl;
  });
  canvas.width = state.imageW;
  canvas.height = state.imageH;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0);
  for (const overlay of state.overlays) {
    if (overlay.opacity <= 0) continue;
    const layer = new Image();
    await new Promise<void>((resolve, reject) => {
      layer.onload = () => resolve();
      layer.onerror = reject;
      layer.src = overlay.url;
    });
    ctx.globalAlpha = overlay.opacity;
    ctx.drawImage(layer, 0, 0, canvas.width, canvas.height);
  }
  ctx.globalAlpha = 1;
  renderOverlayList();
}

function renderOverlayList(): void {
  if (!state) return;
  const list = el<HTMLUListElement>("overlays");
  list.innerHTML = "";
  state.overlays.forEach((overlay, index) => {
    const item = document.createElement("li");
    const label = document.createElement("span");
    label.textContent = `${overlay.kind}: ${overlay.tokenLabel}`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.05";
    slider.value = String(overlay.opacity);
    slider.addEventListener("input", () => {
      state!.overlays[index].opacity = Number(slider.value);
      void redraw();
    });
    item.append(label, slider);
    list.append(item);
  });
}

function renderAnnotation(): void {
  if (!state) return;
  const canvas = annotationCanvas();
  canvas.width = state.imageW;
  canvas.height = state.imageH;
  const ctx = canvas.getContext("2d")!;
  const image = ctx.createImageData(state.imageW, state.imageH);
  for (let i = 0; i < state.annotation.data.length; i++) {
    const on = state.annotation.data[i] !== 0;
    image.data[4 * i] = 64;
    image.data[4 * i + 1] = 220;
    image.data[4 * i + 2] = 120;
    image.data[4 * i + 3] = on ? 160 : 0;
  }
  ctx.putImageData(image, 0, 0);
  if (polygon.length > 0) {
    ctx.strokeStyle = "#58d68d";
    ctx.beginPath();
    ctx.moveTo(polygon[0].x, polygon[0].y);
    for (const p of polygon.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  }
}

function canvasPoint(event: MouseEvent): Point {
  const canvas = annotationCanvas();
  const rect = canvas.getBoundingClientRect();
  return {
    x: (event.clientX - rect.left) * (canvas.width / rect.width),
    y: (event.clientY - rect.top) * (canvas.height / rect.height),
  };
}

async function createSession(): Promise<void> {
  const prompt = el<HTMLInputElement>("prompt").value;
  const seed = Number(el<HTMLInputElement>("seed").value || "0");
  try {
    const info = await client.createSession(prompt, seed);
    state = newSessionState(info.id, info.image_url, info.image_w,
                            info.image_h);
    el<HTMLSpanElement>("session-label").textContent =
      `${info.id} (seed ${info.seed})`;
    polygon = [];
    await redraw();
    renderAnnotation();
    setStatus(`session ${info.id} ready`);
  } catch (err) {
    showError(err);
  }
}

async function explorePrompt(): Promise<void> {
  if (!state) return setStatus("create a session first", true);
  const text = el<HTMLInputElement>("attribution").value;
  if (!text.trim()) return;
  try {
    const result = await client.heatmap(state.sessionId, text);
    state = recordPrompt(state, text);
    state = addOverlay(state, {
      kind: "heatmap",
      url: result.heatmap_url,
      tokenLabel: result.token_label,
      opacity: 0.6,
    });
    renderPromptHistory();
    await redraw();
    setStatus(`heatmap for "${result.token_label}": peak `
      + `${result.stats.max.toFixed(3)}, area@tau `
      + `${(100 * result.stats.area_at_tau).toFixed(1)}%`);
  } catch (err) {
    showError(err);
  }
}

function renderPromptHistory(): void {
  if (!state) return;
  const list = el<HTMLUListElement>("prompt-history");
  list.innerHTML = "";
  for (const prompt of state.promptHistory) {
    const item = document.createElement("li");
    const link = document.createElement("a");
    link.textContent = prompt;
    link.href = "#";
    link.addEventListener("click", (event) => {
      event.preventDefault();
      el<HTMLInputElement>("attribution").value = prompt;
      void explorePrompt();
    });
    item.append(link);
    list.append(item);
  }
}

function currentMaskRequest(tau?: number): MaskRequest {
  const base: MaskRequest = activeToken
    ? { token_id: activeToken }
    : { attribution_prompt: el<HTMLInputElement>("attribution").value };
  return {
    ...base,
    tau: tau ?? state!.params.tau,
    alpha: state!.params.alpha,
    crf: state!.params.crf,
    self_attention: state!.params.selfAttention,
  };
}

async function requestMask(): Promise<void> {
  if (!state) return setStatus("create a session first", true);
  try {
    const result = await client.mask(state.sessionId, currentMaskRequest());
    state = addOverlay(state, {
      kind: "mask",
      url: result.mask_url,
      tokenLabel: activeToken ?? el<HTMLInputElement>("attribution").value,
      opacity: 0.5,
    });
    await redraw();
    el<HTMLSpanElement>("area-label").textContent =
      `${(100 * result.area_fraction).toFixed(2)}%`;
    setStatus(`mask area ${(100 * result.area_fraction).toFixed(2)}% `
      + `(tau ${result.tau}, alpha ${result.alpha})`);
  } catch (err) {
    showError(err);
  }
}

/** Sweep tau over a few values and verify the service's monotonicity. */
async function sweepTau(): Promise<void> {
  if (!state) return setStatus("create a session first", true);
  try {
    const taus = [0.2, 0.4, 0.6, 0.8, 0.95];
    const sweep = await client.sweepTau(state.sessionId,
                                        currentMaskRequest(), taus);
    assertAreaMonotonic(sweep);
    setStatus("tau sweep: " + sweep.map(
      s => `${s.tau}->${(100 * s.area).toFixed(1)}%`).join("  "));
  } catch (err) {
    showError(err);
  }
}

async function uploadAnnotation(): Promise<void> {
  if (!state) return setStatus("create a session first", true);
  try {
    const png = encodeGrayPng(state.annotation.data, state.annotation.width,
                              state.annotation.height);
    await client.putAnnotation(state.sessionId, png);
    // verify the round trip pixel-for-pixel before allowing optimization
    const back = await client.getAnnotation(state.sessionId);
    const decoded = await decodePngAsync(back, browserInflate);
    for (let i = 0; i < state.annotation.data.length; i++) {
      if ((decoded.data[i] !== 0) !== (state.annotation.data[i] !== 0)) {
        throw new Error("annotation round trip mismatch");
      }
    }
    setStatus("annotation stored (round trip verified)");
  } catch (err) {
    showError(err);
  }
}

async function optimize(): Promise<void> {
  if (!state) return setStatus("create a session first", true);
  const classname = el<HTMLInputElement>("classname").value.trim();
  if (!classname) return setStatus("class name required", true);
  try {
    await uploadAnnotation();
    const config = {
      learning_rate: Number(el<HTMLInputElement>("lr").value),
      decay_factor: Number(el<HTMLInputElement>("decay-factor").value),
      decay_every: Number(el<HTMLInputElement>("decay-every").value),
      epochs: Number(el<HTMLInputElement>("epochs").value),
    };
    const { job_id } = await client.startOptimization(
      [state.sessionId], classname, config);
    state = startOptimization(state, job_id, classname);
    setStatus(`optimization ${job_id} running`);
    const chart = el<HTMLCanvasElement>("loss-chart");
    const complete = await client.followOptimization(job_id, (point) => {
      if (!state?.optimization) return;
      state = appendLoss(state, point);
      drawLossChart(chart, state.optimization!.losses);
      el<HTMLSpanElement>("loss-label").textContent =
        `epoch ${point.epoch}: loss ${point.loss.toPrecision(5)} `
        + `(lr ${point.lr})`;
    });
    state = completeOptimization(state, complete.token_id, complete.best_loss);
    if (complete.error) throw new Error(complete.error);
    setStatus(`optimization done: best loss ${complete.best_loss} `
      + `at epoch ${complete.best_epoch}; token ${complete.token_id}`);
    await refreshTokens();
  } catch (err) {
    showError(err);
  }
}

async function refreshTokens(): Promise<void> {
  const picker = el<HTMLSelectElement>("token-picker");
  const tokens = await client.listTokens();
  picker.innerHTML = "<option value=''>attribution prompt</option>";
  for (const token of tokens) {
    const option = document.createElement("option");
    option.value = token.id;
    option.textContent = `${token.label} (${token.id}`
      + (token.best_loss != null
         ? `, loss ${token.best_loss.toPrecision(4)})` : ")");
    picker.append(option);
  }
}

function wireAnnotationTools(): void {
  const canvas = annotationCanvas();
  canvas.addEventListener("mousedown", (event) => {
    if (!state) return;
    const point = canvasPoint(event);
    if (tool === "polygon") {
      polygon.push(point);
      renderAnnotation();
      return;
    }
    drawing = true;
    lastPoint = point;
    strokeBrush(state.annotation, point, point, brushRadius, tool === "erase");
    renderAnnotation();
  });
  canvas.addEventListener("mousemove", (event) => {
    if (!state || !drawing || tool === "polygon") return;
    const point = canvasPoint(event);
    strokeBrush(state.annotation, lastPoint ?? point, point, brushRadius,
                tool === "erase");
    lastPoint = point;
    renderAnnotation();
  });
  window.addEventListener("mouseup", () => {
    drawing = false;
    lastPoint = null;
  });
  canvas.addEventListener("dblclick", () => {
    if (!state || tool !== "polygon" || polygon.length < 3) return;
    fillPolygon(state.annotation, polygon);
    polygon = [];
    renderAnnotation();
  });
}

function wireControls(): void {
  el<HTMLButtonElement>("create").addEventListener("click",
    () => void createSession());
  el<HTMLButtonElement>("explore").addEventListener("click",
    () => void explorePrompt());
  el<HTMLInputElement>("attribution").addEventListener("keydown", (event) => {
    if (event.key === "Enter") void explorePrompt();
  });
  el<HTMLButtonElement>("make-mask").addEventListener("click",
    () => void requestMask());
  el<HTMLButtonElement>("sweep").addEventListener("click",
    () => void sweepTau());
  el<HTMLButtonElement>("upload-annotation").addEventListener("click",
    () => void uploadAnnotation());
  el<HTMLButtonElement>("optimize").addEventListener("click",
    () => void optimize());
  el<HTMLButtonElement>("clear-annotation").addEventListener("click", () => {
    if (!state) return;
    state.annotation = createRaster(state.imageW, state.imageH);
    polygon = [];
    renderAnnotation();
  });

  const tau = el<HTMLInputElement>("tau");
  const alpha = el<HTMLInputElement>("alpha");
  const updateParams = () => {
    if (!state) return;
    state = setParams(state, {
      tau: clampUnit(Number(tau.value)),
      alpha: clampUnit(Number(alpha.value)),
    });
    el<HTMLSpanElement>("tau-label").textContent = state.params.tau.toFixed(2);
    el<HTMLSpanElement>("alpha-label").textContent =
      state.params.alpha.toFixed(2);
  };
  tau.addEventListener("input", updateParams);
  alpha.addEventListener("input", updateParams);
  el<HTMLInputElement>("crf").addEventListener("change", (event) => {
    if (state) state = setParams(state,
      { crf: (event.target as HTMLInputElement).checked });
  });
  el<HTMLInputElement>("self-attention").addEventListener("change", (event) => {
    if (state) state = setParams(state,
      { selfAttention: (event.target as HTMLInputElement).checked });
  });

  el<HTMLSelectElement>("token-picker").addEventListener("change", (event) => {
    const value = (event.target as HTMLSelectElement).value;
    activeToken = value || null;
    if (!state) return;
    const defaults = activeToken ? TOKEN_DEFAULTS : PROMPT_DEFAULTS;
    state = setParams(state, { tau: defaults.tau, alpha: defaults.alpha });
    tau.value = String(state.params.tau);
    alpha.value = String(state.params.alpha);
    el<HTMLSpanElement>("tau-label").textContent = state.params.tau.toFixed(2);
    el<HTMLSpanElement>("alpha-label").textContent =
      state.params.alpha.toFixed(2);
  });

  for (const name of ["brush", "polygon", "erase"] as const) {
    el<HTMLInputElement>(`tool-${name}`).addEventListener("change", () => {
      tool = name;
    });
  }
  el<HTMLInputElement>("brush-size").addEventListener("input", (event) => {
    brushRadius = Number((event.target as HTMLInputElement).value);
  });

  el<HTMLInputElement>("lr").value = String(OPTIMIZER_DEFAULTS.learningRate);
  el<HTMLInputElement>("decay-factor").value =
    String(OPTIMIZER_DEFAULTS.decayFactor);
  el<HTMLInputElement>("decay-every").value =
    String(OPTIMIZER_DEFAULTS.decayEvery);
  el<HTMLInputElement>("epochs").value = String(OPTIMIZER_DEFAULTS.epochs);
}

if (typeof document !== "undefined" && document.getElementById("create")) {
  wireControls();
  wireAnnotationTools();
  void refreshTokens().catch(() => setStatus("service unreachable", true));
}

/**
 * UI session state and its invariants.
 *
 * Every number shown in the UI comes from a service response; this module
 * only organizes those responses. Invariants enforced here: tau/alpha stay
 * inside (0, 1], the annotation raster always matches the image dimensions,
 * and tau sweeps must report non-increasing mask areas.
 */
import { Raster, createRaster } from "./raster.js";

export interface Overlay {
  kind: "heatmap" | "mask";
  url: string;
  tokenLabel: string;
  opacity: number;
}

export interface MaskParams {
  tau: number;
  alpha: number;
  crf: boolean;
  selfAttention: boolean;
}

export interface LossPoint {
  epoch: number;
  loss: number;
  lr: number;
}

export interface OptimizationPanel {
  jobId: string;
  classname: string;
  losses: LossPoint[];
  done: boolean;
  tokenId: string | null;
  bestLoss: number | null;
}

export interface UiSessionState {
  sessionId: string;
  imageUrl: string;
  imageW: number;
  imageH: number;
  overlays: Overlay[];
  params: MaskParams;
  annotation: Raster;
  promptHistory: string[];
  optimization: OptimizationPanel | null;
}

/** Sliders cannot leave (0, 1]; 0 is excluded because both parameters are
 * multiplicative floors/thresholds. */
export const UNIT_MIN = 0.01;

export function clampUnit(value: number): number {
  if (Number.isNaN(value)) return UNIT_MIN;
  return Math.min(1, Math.max(UNIT_MIN, value));
}

export const PROMPT_DEFAULTS: MaskParams = {
  tau: 0.4, alpha: 0.85, crf: true, selfAttention: true,
};

export const TOKEN_DEFAULTS: MaskParams = {
  tau: 0.8, alpha: 0.95, crf: true, selfAttention: true,
};

export const OPTIMIZER_DEFAULTS = {
  learningRate: 100,
  decayFactor: 0.7,
  decayEvery: 120,
  epochs: 500,
};

export function newSessionState(sessionId: string, imageUrl: string,
                                imageW: number, imageH: number): UiSessionState {
  return {
    sessionId,
    imageUrl,
    imageW,
    imageH,
    overlays: [],
    params: { ...PROMPT_DEFAULTS },
    annotation: createRaster(imageW, imageH),
    promptHistory: [],
    optimization: null,
  };
}

export function setParams(state: UiSessionState,
                          patch: Partial<MaskParams>): UiSessionState {
  const params = { ...state.params, ...patch };
  params.tau = clampUnit(params.tau);
  params.alpha = clampUnit(params.alpha);
  return { ...state, params };
}

export function addOverlay(state: UiSessionState,
                           overlay: Overlay): UiSessionState {
  return { ...state, overlays: [...state.overlays, overlay] };
}

export function setOverlayOpacity(state: UiSessionState, index: number,
                                  opacity: number): UiSessionState {
  const overlays = state.overlays.map((o, i) =>
    i === index ? { ...o, opacity: Math.min(1, Math.max(0, opacity)) } : o);
  return { ...state, overlays };
}

export function removeOverlay(state: UiSessionState,
                              index: number): UiSessionState {
  return { ...state, overlays: state.overlays.filter((_, i) => i !== index) };
}

/** Most recent first, no duplicates. */
export function recordPrompt(state: UiSessionState,
                             prompt: string): UiSessionState {
  const history = [prompt, ...state.promptHistory.filter(p => p !== prompt)];
  return { ...state, promptHistory: history };
}

export function startOptimization(state: UiSessionState, jobId: string,
                                  classname: string): UiSessionState {
  return {
    ...state,
    optimization: { jobId, classname, losses: [], done: false,
                    tokenId: null, bestLoss: null },
  };
}

export function appendLoss(state: UiSessionState,
                           point: LossPoint): UiSessionState {
  if (!state.optimization) return state;
  return {
    ...state,
    optimization: {
      ...state.optimization,
      losses: [...state.optimization.losses, point],
    },
  };
}

export function completeOptimization(state: UiSessionState, tokenId: string | null,
                                     bestLoss: number | null): UiSessionState {
  if (!state.optimization) return state;
  return {
    ...state,
    optimization: { ...state.optimization, done: true, tokenId, bestLoss },
  };
}

export function minLoss(panel: OptimizationPanel): number | null {
  if (panel.losses.length === 0) return null;
  return panel.losses.reduce((m, p) => Math.min(m, p.loss), Infinity);
}

/** The service guarantees larger tau never grows the mask; surface any
 * violation loudly because it would mean the UI mixed up sessions. */
export function assertAreaMonotonic(sweep: { tau: number; area: number }[]): void {
  const sorted = [...sweep].sort((a, b) => a.tau - b.tau);
  for (let i = 1; i < sorted.length; i++) {
    if (sorted[i].area > sorted[i - 1].area + 1e-12) {
      throw new Error(
        `mask area grew from ${sorted[i - 1].area} to ${sorted[i].area} `
        + `as tau rose ${sorted[i - 1].tau} -> ${sorted[i].tau}`);
    }
  }
}

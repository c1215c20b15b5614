/**
 * Tiny canvas line chart for the live loss stream. The series logic is pure
 * so tests can drive it without a canvas.
 */
import { LossPoint } from "./state.js";

export interface Polyline {
  points: { x: number; y: number }[];
  minLoss: number;
  maxLoss: number;
}

export function toPolyline(losses: LossPoint[], width: number,
                           height: number, pad = 4): Polyline {
  if (losses.length === 0) return { points: [], minLoss: NaN, maxLoss: NaN };
  let min = Infinity;
  let max = -Infinity;
  for (const p of losses) {
    min = Math.min(min, p.loss);
    max = Math.max(max, p.loss);
  }
  const span = max - min || 1;
  const lastEpoch = losses[losses.length - 1].epoch;
  const firstEpoch = losses[0].epoch;
  const epochSpan = lastEpoch - firstEpoch || 1;
  const points = losses.map(p => ({
    x: pad + ((p.epoch - firstEpoch) / epochSpan) * (width - 2 * pad),
    y: pad + (1 - (p.loss - min) / span) * (height - 2 * pad),
  }));
  return { points, minLoss: min, maxLoss: max };
}

export function drawLossChart(canvas: HTMLCanvasElement,
                              losses: LossPoint[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const line = toPolyline(losses, canvas.width, canvas.height);
  if (line.points.length === 0) return;
  ctx.strokeStyle = "#e0a34c";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  line.points.forEach((p, i) => {
    if (i === 0) ctx.moveTo(p.x, p.y);
    else ctx.lineTo(p.x, p.y);
  });
  ctx.stroke();
  ctx.fillStyle = "#9aa4b2";
  ctx.font = "10px system-ui";
  ctx.fillText(`min ${line.minLoss.toPrecision(4)}`, 6, 12);
  ctx.fillText(`max ${line.maxLoss.toPrecision(4)}`, 6, 24);
}

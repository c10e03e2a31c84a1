// Pure rendering helpers: pixel decoding, bar colors, grid highlighting,
// formatting. DOM writes live in main.ts; these stay testable in isolation.

import type { Prediction } from "./api.js";

/** Decode base64 raw RGB8 (row-major HxWx3) into an RGBA buffer for canvas. */
export function decodeRgb8(b64: string, width: number, height: number) {
  const raw = atob(b64);
  const need = width * height * 3;
  if (raw.length !== need) {
    throw new Error(`image payload has ${raw.length} bytes, expected ${need}`);
  }
  const rgba = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0; i < width * height; i++) {
    rgba[i * 4] = raw.charCodeAt(i * 3);
    rgba[i * 4 + 1] = raw.charCodeAt(i * 3 + 1);
    rgba[i * 4 + 2] = raw.charCodeAt(i * 3 + 2);
    rgba[i * 4 + 3] = 255;
  }
  return rgba;
}

/** Paper rule: green when the prediction is correct, red otherwise. */
export function barColorToken(correct: boolean): string {
  return correct ? "correct-green" : "incorrect-red";
}

export function barWidthPercent(confidence: number): string {
  const clamped = Math.max(0, Math.min(1, confidence));
  return `${(clamped * 100).toFixed(1)}%`;
}

/** Kinds highlighted when hovering grid cell `cellIndex` of a row: the
 *  perturbations applied so far. Cell 0 is the clean image (none applied). */
export function highlightForCell(rowOrder: string[], cellIndex: number): string[] {
  if (cellIndex < 0 || cellIndex > rowOrder.length) throw new Error("cell index out of range");
  return rowOrder.slice(0, cellIndex);
}

/** Leaderboard accuracy cells: two-decimal percent. */
export function formatAccuracy(value: number): string {
  return `${(value * 100).toFixed(2)}%`;
}

export function predictionSummary(p: Prediction): string {
  return `${p.class_name} (${(p.confidence * 100).toFixed(1)}%)`;
}

/** Build one confidence bar element per model prediction. */
export function renderBars(container: HTMLElement, predictions: Prediction[]): void {
  container.textContent = "";
  for (const p of predictions) {
    const row = container.ownerDocument.createElement("div");
    row.className = "bar-row";
    row.dataset.modelId = p.model_id;

    const label = container.ownerDocument.createElement("span");
    label.className = "bar-label";
    label.textContent = predictionSummary(p);

    const track = container.ownerDocument.createElement("div");
    track.className = "bar-track";
    const fill = container.ownerDocument.createElement("div");
    fill.className = `bar-fill ${barColorToken(p.correct)}`;
    fill.dataset.color = barColorToken(p.correct);
    fill.style.width = barWidthPercent(p.confidence);
    track.appendChild(fill);

    row.appendChild(label);
    row.appendChild(track);
    container.appendChild(row);
  }
}

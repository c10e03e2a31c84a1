// Panel view state and the pure operations on it. Kept DOM-free so the
// reorder/level/sequence logic is directly unit-testable.

import type { PerturbResponse } from "./api.js";

export const KINDS = ["linf", "hue", "saturation", "brightness", "contrast", "rotation"] as const;
export type KindName = (typeof KINDS)[number];

export const LEVEL_MAX = 4;
export const LEVEL_LABELS = ["Normal", "1", "2", "3", "4"];

export interface PanelViewState {
  sampleId: string;
  blocks: KindName[]; // attack order, one block per kind
  levels: Record<KindName, number>; // 0..4; 0 = disabled ("Normal")
  signs: Record<KindName, number>; // +1 / -1, semantic kinds only
  modelIds: string[];
  lastResponse: PerturbResponse | null;
  pending: boolean;
}

export function initialState(sampleId: string, modelIds: string[]): PanelViewState {
  const levels = {} as Record<KindName, number>;
  const signs = {} as Record<KindName, number>;
  for (const k of KINDS) {
    levels[k] = 0;
    signs[k] = 1;
  }
  return {
    sampleId,
    blocks: [...KINDS],
    levels,
    signs,
    modelIds,
    lastResponse: null,
    pending: false,
  };
}

export function levelLabel(level: number): string {
  return LEVEL_LABELS[level] ?? String(level);
}

export function allNormal(state: PanelViewState): boolean {
  return state.blocks.every((k) => state.levels[k] === 0);
}

/** Move the block at `from` to position `to`; returns a new state.
 *  The result is always a permutation of the six kinds. */
export function reorderBlocks(state: PanelViewState, from: number, to: number): PanelViewState {
  const n = state.blocks.length;
  if (from < 0 || from >= n || to < 0 || to >= n) throw new Error("block index out of range");
  if (from === to) return state;
  const blocks = [...state.blocks];
  const [moved] = blocks.splice(from, 1);
  blocks.splice(to, 0, moved);
  return { ...state, blocks };
}

export function setLevel(state: PanelViewState, kind: KindName, level: number): PanelViewState {
  if (!Number.isInteger(level) || level < 0 || level > LEVEL_MAX) throw new Error("bad level");
  return { ...state, levels: { ...state.levels, [kind]: level } };
}

export function setSign(state: PanelViewState, kind: KindName, sign: number): PanelViewState {
  return { ...state, signs: { ...state.signs, [kind]: sign >= 0 ? 1 : -1 } };
}

/** Request body for /api/perturb; the order field mirrors the block list. */
export function perturbBody(state: PanelViewState): object {
  return {
    sample_id: state.sampleId,
    order: [...state.blocks],
    levels: { ...state.levels },
    signs: { ...state.signs },
    model_ids: [...state.modelIds],
  };
}

/** Monotone request counter: a response is applied only if it belongs to the
 *  most recently issued request. Anything older is stale and dropped. */
export class SequenceGate {
  private seq = 0;

  next(): number {
    return ++this.seq;
  }

  accept(seq: number): boolean {
    return seq === this.seq;
  }
}

/** Trailing-edge debounce; `cancel` drops any queued call. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  ms: number
): { (...args: A): void; cancel(): void } {
  let timer: ReturnType<typeof setTimeout> | null = null;
  const wrapped = (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
  wrapped.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
  };
  return wrapped;
}

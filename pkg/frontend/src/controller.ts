// Orchestrates perturb requests for the panel: debounced scheduling, at most
// one applied response, stale responses discarded by sequence number.

import type { FetchLike, PerturbResponse } from "./api.js";
import { postPerturb } from "./api.js";
import {
  KindName,
  PanelViewState,
  SequenceGate,
  debounce,
  initialState,
  perturbBody,
  reorderBlocks,
  setLevel,
  setSign,
} from "./state.js";

export interface ControllerHooks {
  onResponse(resp: PerturbResponse): void;
  onError(message: string): void;
  onPending?(pending: boolean): void;
}

export const DEBOUNCE_MS = 150;

export class PanelController {
  state: PanelViewState;
  requestLog: object[] = []; // bodies actually sent, in order
  private gate = new SequenceGate();
  private schedule: { (): void; cancel(): void };

  constructor(
    private fetchFn: FetchLike,
    private hooks: ControllerHooks,
    sampleId: string,
    modelIds: string[],
    debounceMs: number = DEBOUNCE_MS
  ) {
    this.state = initialState(sampleId, modelIds);
    this.schedule = debounce(() => void this.issue(), debounceMs);
  }

  setLevel(kind: KindName, level: number): void {
    this.state = setLevel(this.state, kind, level);
    this.schedule();
  }

  setSign(kind: KindName, sign: number): void {
    this.state = setSign(this.state, kind, sign);
    this.schedule();
  }

  reorder(from: number, to: number): void {
    const next = reorderBlocks(this.state, from, to);
    if (next === this.state) return; // from === to: no request
    this.state = next;
    this.schedule();
  }

  selectSample(sampleId: string): void {
    this.state = { ...this.state, sampleId };
    this.schedule();
  }

  selectModels(modelIds: string[]): void {
    this.state = { ...this.state, modelIds: [...modelIds] };
    this.schedule();
  }

  /** Skip the debounce and send the current state immediately. */
  refresh(): void {
    this.schedule.cancel();
    void this.issue();
  }

  private setPending(pending: boolean): void {
    this.state = { ...this.state, pending };
    this.hooks.onPending?.(pending);
  }

  private async issue(): Promise<void> {
    const seq = this.gate.next();
    const body = perturbBody(this.state);
    this.requestLog.push(body);
    this.setPending(true);
    try {
      const resp = await postPerturb(this.fetchFn, body);
      if (!this.gate.accept(seq)) return; // superseded while in flight
      this.state = { ...this.state, lastResponse: resp };
      this.hooks.onResponse(resp);
    } catch (err) {
      if (!this.gate.accept(seq)) return;
      this.hooks.onError(err instanceof Error ? err.message : String(err));
    } finally {
      if (this.gate.accept(seq)) this.setPending(false);
    }
  }
}

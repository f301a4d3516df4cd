import type { RunInfo, ScenarioRequest, TrajectoryRecord } from "./types";

export interface AppState {
  run: RunInfo | null;
  records: TrajectoryRecord[];
  names: string[];          // baseline + models, from the trajectory payload
  selectedT: number | null;
  x: number[];              // editable candidate rate path
  soft: boolean;
  tilt: boolean;
  seed: number | null;      // pinned seed for reproducible demos
}

export function initialState(): AppState {
  return { run: null, records: [], names: [], selectedT: null,
           x: [], soft: true, tilt: true, seed: null };
}

export function loadRun(state: AppState, run: RunInfo,
                        records: TrajectoryRecord[], names: string[]): AppState {
  const next = { ...state, run, records, names };
  const first = records.find((r) => !r.failed);
  return first ? scrubTo(next, first.t) : { ...next, selectedT: null, x: [] };
}

export function recordFor(state: AppState, t: number): TrajectoryRecord | undefined {
  return state.records.find((r) => r.t === t);
}

/** Scrubbing to a quarter seeds the editor with that quarter's recorded
 * optimal path. */
export function scrubTo(state: AppState, t: number): AppState {
  const rec = recordFor(state, t);
  if (!rec || rec.failed) return { ...state, selectedT: t, x: [] };
  return { ...state, selectedT: t, x: [...rec.x_bpds] };
}

export function dragHandle(state: AppState, index: number, value: number): AppState {
  if (!state.run || index < 0 || index >= state.x.length) return state;
  const { lower, upper } = state.run.bounds;
  const x = [...state.x];
  x[index] = Math.min(upper, Math.max(lower, value));
  return { ...state, x };
}

export function setToggle(state: AppState, key: "soft" | "tilt", value: boolean): AppState {
  return { ...state, [key]: value };
}

export function setSeed(state: AppState, seed: number | null): AppState {
  return { ...state, seed };
}

export function scenarioRequest(state: AppState): ScenarioRequest | null {
  if (!state.run || state.selectedT === null || state.x.length !== state.run.k) {
    return null;
  }
  return {
    run_id: state.run.run_id,
    quarter: state.selectedT,
    x: [...state.x],
    soft: state.soft,
    tilt: state.tilt,
    seed: state.seed,
  };
}

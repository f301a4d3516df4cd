// Wire types for the scenario service. The UI never derives statistics on
// its own: every rendered number is one of these payload fields.

export interface RunInfo {
  run_id: string;
  quarters: { t: number; quarter: string; failed: boolean }[];
  k: number;
  bounds: { lower: number; upper: number };
  models: string[];
}

export interface ScenarioRequest {
  run_id: string;
  quarter: string | number;
  x: number[];
  soft: boolean;
  tilt: boolean;
  quantiles?: number[];
  seed?: number | null;
}

export type FanGrid = number[][]; // [horizon][quantile]

export interface ScenarioResponse {
  run_id: string;
  quarter: string;
  t: number;
  x: number[];
  units: string;
  quantiles: number[];
  fans: {
    bpds: { inflation: FanGrid; growth: FanGrid; rate: FanGrid };
    bma: { inflation: FanGrid; growth: FanGrid; rate: FanGrid };
  };
  weights: {
    prior: number[];
    conditioned: number[];
    tilted: number[];
    bma: number[];
    names: string[];
  };
  ess: { per_model: number[]; mixture: number };
  expected_utility: number;
  initial_expected_utility: number;
  tau: number[];
  tilt: { converged: boolean; fallback: boolean; residual: number; epsilon: number };
  timing: { evaluate_seconds: number; state_build_seconds: number };
}

export interface TrajectoryRecord {
  quarter: string;
  t: number;
  failed: boolean;
  flags: string;
  x_prev: number;
  x_bpds: number[];
  x_bma: number[];
  x_models: Record<string, number[]>;
  pi_prior: number[];
  pi_x: number[];
  pi_tilde: number[];
  bma_weights: number[];
  tau: number[];
  ess_models: number[];
  ess_mixture: number;
  eu_bpds: number;
  eu_bma: number;
  eu_initial: number;
  epsilon: number;
  dominant_improvement: number;
  tilt_converged: boolean;
  tilt_fallback: boolean;
}

export interface TrajectoryBundle {
  run_id: string;
  total: number;
  start: number;
  count: number;
  k: number;
  names: string[];
  records: TrajectoryRecord[];
}

export const VARIABLES = ["inflation", "growth", "rate"] as const;
export type Variable = (typeof VARIABLES)[number];

/** Shape-check a scenario payload; returns problems (empty = valid). */
export function validateScenarioResponse(p: unknown): string[] {
  const problems: string[] = [];
  const r = p as Partial<ScenarioResponse> | null;
  if (!r || typeof r !== "object") return ["payload is not an object"];
  if (!Array.isArray(r.x)) problems.push("missing x");
  if (!Array.isArray(r.quantiles)) problems.push("missing quantiles");
  if (!r.fans || !r.fans.bpds || !r.fans.bma) problems.push("missing fans");
  if (!r.weights || !Array.isArray(r.weights.tilted)) problems.push("missing weights");
  if (typeof r.expected_utility !== "number") problems.push("missing expected_utility");
  if (!r.ess || typeof r.ess.mixture !== "number") problems.push("missing ess");
  if (r.fans && r.quantiles) {
    for (const side of ["bpds", "bma"] as const) {
      for (const v of VARIABLES) {
        const grid = r.fans[side]?.[v];
        if (!Array.isArray(grid)) {
          problems.push(`missing fan ${side}.${v}`);
          continue;
        }
        for (const row of grid) {
          if (!Array.isArray(row) || row.length !== r.quantiles.length) {
            problems.push(`ragged fan ${side}.${v}`);
            break;
          }
          for (let i = 1; i < row.length; i++) {
            if (row[i] < row[i - 1]) {
              problems.push(`non-monotone quantiles in ${side}.${v}`);
              break;
            }
          }
        }
      }
    }
  }
  return problems;
}

import type { RunInfo, ScenarioRequest, ScenarioResponse, TrajectoryBundle } from "./types";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`request failed (${status})`);
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail: unknown = null;
    try {
      detail = await res.json();
    } catch {
      /* body already consumed or not json */
    }
    throw new ApiError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

export function listRuns(base = ""): Promise<RunInfo[]> {
  return fetch(`${base}/api/runs`).then((r) => asJson<RunInfo[]>(r));
}

export function postScenario(req: ScenarioRequest, base = ""): Promise<ScenarioResponse> {
  return fetch(`${base}/api/scenario`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(req),
  }).then((r) => asJson<ScenarioResponse>(r));
}

export function getTrajectories(runId: string, base = "",
                                start = 0, count = 1000): Promise<TrajectoryBundle> {
  const q = new URLSearchParams({ start: String(start), count: String(count) });
  return fetch(`${base}/api/run/${encodeURIComponent(runId)}/trajectories?${q}`)
    .then((r) => asJson<TrajectoryBundle>(r));
}

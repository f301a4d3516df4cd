import { el, fmt, pct } from "./format";
import type { ScenarioResponse, TrajectoryRecord } from "./types";

/** Everything the weights/diagnostics column shows, normalized so the same
 * renderer serves recorded quarters and live scenario replies. */
export interface DiagnosticsView {
  source: "recorded" | "scenario";
  names: string[];
  groups: { title: string; key: string; weights: number[] }[];
  essPerModel: number[];
  essMixture: number;
  expectedUtility: number;
  initialExpectedUtility: number;
  tau: number[];
  tiltNote: string;
}

export function viewFromRecord(rec: TrajectoryRecord, names: string[]): DiagnosticsView {
  return {
    source: "recorded",
    names,
    groups: [
      { title: "prior", key: "prior", weights: rec.pi_prior },
      { title: "decision-conditioned", key: "conditioned", weights: rec.pi_x },
      { title: "tilted", key: "tilted", weights: rec.pi_tilde },
      { title: "model averaging", key: "bma", weights: rec.bma_weights },
    ],
    essPerModel: rec.ess_models,
    essMixture: rec.ess_mixture,
    expectedUtility: rec.eu_bpds,
    initialExpectedUtility: rec.eu_initial,
    tau: rec.tau,
    tiltNote: rec.tilt_fallback ? "tilt fallback (tau = 0)"
      : rec.tilt_converged ? "tilt converged" : "tilt unconverged",
  };
}

export function viewFromScenario(res: ScenarioResponse): DiagnosticsView {
  return {
    source: "scenario",
    names: res.weights.names,
    groups: [
      { title: "prior", key: "prior", weights: res.weights.prior },
      { title: "decision-conditioned", key: "conditioned", weights: res.weights.conditioned },
      { title: "tilted", key: "tilted", weights: res.weights.tilted },
      { title: "model averaging", key: "bma", weights: res.weights.bma },
    ],
    essPerModel: res.ess.per_model,
    essMixture: res.ess.mixture,
    expectedUtility: res.expected_utility,
    initialExpectedUtility: res.initial_expected_utility,
    tau: res.tau,
    tiltNote: res.tilt.fallback ? "tilt fallback (tau = 0)"
      : res.tilt.converged ? `tilt converged (residual ${fmt(res.tilt.residual, 5)})`
        : "tilt unconverged",
  };
}

export function renderDiagnostics(container: HTMLElement, view: DiagnosticsView): void {
  container.replaceChildren();
  container.dataset.source = view.source;

  const eu = el("div", "eu-readout");
  eu.appendChild(el("span", "eu-label", "expected utility"));
  const euValue = el("span", "eu-value", fmt(view.expectedUtility, 4));
  euValue.dataset.field = "expected_utility";
  euValue.dataset.value = String(view.expectedUtility);
  eu.appendChild(euValue);
  const euInit = el("span", "eu-initial",
                    `initial mixture ${fmt(view.initialExpectedUtility, 4)}`);
  euInit.dataset.field = "initial_expected_utility";
  euInit.dataset.value = String(view.initialExpectedUtility);
  eu.appendChild(euInit);
  container.appendChild(eu);

  for (const group of view.groups) {
    const box = el("div", "weight-group");
    box.dataset.group = group.key;
    box.appendChild(el("h4", "weight-title", group.title));
    const names = group.weights.length === view.names.length
      ? view.names : view.names.slice(1); // comparator carries no baseline
    group.weights.forEach((w, i) => {
      const row = el("div", "weight-row");
      row.appendChild(el("span", "weight-name", names[i] ?? `m${i}`));
      const bar = el("div", "weight-bar");
      const fill = el("div", "weight-fill");
      fill.style.width = `${Math.max(0, Math.min(1, w)) * 100}%`;
      fill.dataset.weight = String(w);
      bar.appendChild(fill);
      row.appendChild(bar);
      row.appendChild(el("span", "weight-value", pct(w)));
      box.appendChild(row);
    });
    container.appendChild(box);
  }

  const ess = el("div", "ess-gauge");
  ess.appendChild(el("h4", "weight-title", "effective sample size"));
  const gauge = el("div", "gauge");
  const fill = el("div", "gauge-fill");
  fill.style.width = `${Math.max(0, Math.min(1, view.essMixture)) * 100}%`;
  fill.dataset.ess = String(view.essMixture);
  gauge.appendChild(fill);
  ess.appendChild(gauge);
  ess.appendChild(el("span", "gauge-value", pct(view.essMixture)));
  view.essPerModel.forEach((e, i) => {
    const chip = el("span", "ess-chip", `${view.names[i] ?? i}: ${pct(e)}`);
    chip.dataset.essModel = String(e);
    ess.appendChild(chip);
  });
  container.appendChild(ess);

  const tau = el("div", "tau-strip");
  tau.appendChild(el("h4", "weight-title", "tilt vector"));
  const maxAbs = Math.max(1e-12, ...view.tau.map((v) => Math.abs(v)));
  view.tau.forEach((v, i) => {
    const cell = el("span", "tau-cell");
    cell.dataset.tau = String(v);
    cell.title = `coordinate ${i + 1}: ${fmt(v, 5)}`;
    const intensity = Math.abs(v) / maxAbs;
    cell.style.background = v >= 0
      ? `rgba(180, 60, 40, ${intensity})` : `rgba(40, 80, 180, ${intensity})`;
    tau.appendChild(cell);
  });
  tau.appendChild(el("span", "tilt-note", view.tiltNote));
  container.appendChild(tau);
}

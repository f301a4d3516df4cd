import { el, fmt, svgEl } from "./format";
import type { FanGrid, ScenarioResponse, Variable } from "./types";
import { VARIABLES } from "./types";

const W = 300;
const H = 150;
const PAD = { left: 42, right: 8, top: 10, bottom: 22 };

interface Scale {
  lo: number;
  hi: number;
  y(v: number): number;
  x(h: number): number;
}

function makeScale(k: number, grids: FanGrid[]): Scale {
  let lo = Infinity;
  let hi = -Infinity;
  for (const grid of grids) {
    for (const row of grid) {
      lo = Math.min(lo, row[0]);
      hi = Math.max(hi, row[row.length - 1]);
    }
  }
  if (!Number.isFinite(lo) || !Number.isFinite(hi) || lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const innerW = W - PAD.left - PAD.right;
  const innerH = H - PAD.top - PAD.bottom;
  return {
    lo, hi,
    y: (v) => PAD.top + innerH * (1 - (v - lo) / (hi - lo)),
    x: (h) => PAD.left + (innerW * (h + 0.5)) / k,
  };
}

function bandPath(grid: FanGrid, qi: number, scale: Scale): string {
  const k = grid.length;
  const top = grid.map((row, h) => `${scale.x(h)},${scale.y(row[row.length - 1 - qi])}`);
  const bot = grid.map((row, h) => `${scale.x(h)},${scale.y(row[qi])}`).reverse();
  return `M${top.join("L")}L${bot.join("L")}Z`;
}

function lineFor(grid: FanGrid, qi: number, scale: Scale): string {
  return grid.map((row, h) => `${scale.x(h)},${scale.y(row[qi])}`).join(" ");
}

/** One fan panel per tracked variable; synthesis bands filled, the
 * model-averaging comparator drawn as dashed envelope + median overlay. */
export function renderFans(container: HTMLElement, res: ScenarioResponse): void {
  container.replaceChildren();
  const nq = res.quantiles.length;
  const median = Math.floor(nq / 2);
  for (const variable of VARIABLES) {
    const panel = el("div", "fan-panel");
    panel.dataset.variable = variable;
    panel.appendChild(el("h3", "fan-title", `${variable} (${res.units})`));
    const bpds = res.fans.bpds[variable as Variable];
    const bma = res.fans.bma[variable as Variable];
    const k = bpds.length;
    const scale = makeScale(k, [bpds, bma]);
    const svg = svgEl("svg", { viewBox: `0 0 ${W} ${H}`, class: "fan-svg" });

    for (const frac of [0, 0.5, 1]) {
      const v = scale.lo + frac * (scale.hi - scale.lo);
      svg.appendChild(svgEl("line", {
        x1: PAD.left, x2: W - PAD.right, y1: scale.y(v), y2: scale.y(v),
        class: "grid-line",
      }));
      const label = svgEl("text", {
        x: PAD.left - 4, y: scale.y(v) + 3, class: "axis-label", "text-anchor": "end",
      });
      label.textContent = fmt(v, 1);
      svg.appendChild(label);
    }
    for (let qi = 0; qi < median; qi++) {
      const band = svgEl("path", {
        d: bandPath(bpds, qi, scale),
        class: `band band-${qi}`,
        "data-band": qi,
      });
      band.dataset.lo = bpds.map((row) => row[qi]).join(",");
      band.dataset.hi = bpds.map((row) => row[nq - 1 - qi]).join(",");
      svg.appendChild(band);
    }
    const med = svgEl("polyline", {
      points: lineFor(bpds, median, scale), class: "median-line",
    });
    med.dataset.values = bpds.map((row) => row[median]).join(",");
    svg.appendChild(med);
    for (const qi of [0, nq - 1, median]) {
      const ln = svgEl("polyline", {
        points: lineFor(bma, qi, scale),
        class: qi === median ? "bma-median" : "bma-envelope",
      });
      ln.dataset.quantile = String(res.quantiles[qi]);
      ln.dataset.values = bma.map((row) => row[qi]).join(",");
      svg.appendChild(ln);
    }
    for (let h = 0; h < k; h++) {
      const tick = svgEl("text", {
        x: scale.x(h), y: H - 6, class: "axis-label", "text-anchor": "middle",
        "data-horizon": h + 1,
      });
      tick.textContent = `+${h + 1}`;
      svg.appendChild(tick);
    }
    panel.appendChild(svg);
    container.appendChild(panel);
  }
}

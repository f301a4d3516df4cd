import { fmt, svgEl } from "./format";

const W = 460;
const H = 200;
const PAD = { left: 40, right: 12, top: 12, bottom: 20 };

export interface PathEditorCallbacks {
  onDrag: (index: number, value: number) => void;   // while moving
  onRelease: () => void;                            // fires the request
}

export interface PathEditorProps {
  x: number[];
  bounds: { lower: number; upper: number };
  frozen: boolean;  // optimistic freeze while a scenario request is in flight
}

/** Draggable rate-path handles over an SVG; one change event per release. */
export function renderPathEditor(container: HTMLElement, props: PathEditorProps,
                                 cb: PathEditorCallbacks): void {
  container.replaceChildren();
  const k = props.x.length;
  if (k === 0) {
    container.dataset.empty = "true";
    return;
  }
  delete container.dataset.empty;
  const { lower, upper } = props.bounds;
  const innerW = W - PAD.left - PAD.right;
  const innerH = H - PAD.top - PAD.bottom;
  const xPos = (h: number) => PAD.left + (innerW * (h + 0.5)) / k;
  const yPos = (v: number) => PAD.top + innerH * (1 - (v - lower) / (upper - lower));
  const yVal = (py: number) => lower + (upper - lower) * (1 - (py - PAD.top) / innerH);

  const svg = svgEl("svg", { viewBox: `0 0 ${W} ${H}`, class: "editor-svg" });
  svg.dataset.frozen = String(props.frozen);
  for (const v of [lower, 0, upper]) {
    if (v < lower || v > upper) continue;
    svg.appendChild(svgEl("line", {
      x1: PAD.left, x2: W - PAD.right, y1: yPos(v), y2: yPos(v), class: "grid-line",
    }));
    const label = svgEl("text", {
      x: PAD.left - 4, y: yPos(v) + 3, class: "axis-label", "text-anchor": "end",
    });
    label.textContent = fmt(v, 0);
    svg.appendChild(label);
  }
  svg.appendChild(svgEl("polyline", {
    points: props.x.map((v, h) => `${xPos(h)},${yPos(v)}`).join(" "),
    class: "editor-line",
  }));

  const toLocalY = (evt: MouseEvent): number => {
    const rect = svg.getBoundingClientRect();
    const scale = rect.height > 0 ? H / rect.height : 1;
    return (evt.clientY - rect.top) * scale;
  };

  props.x.forEach((v, i) => {
    const handle = svgEl("circle", {
      cx: xPos(i), cy: yPos(v), r: 7, class: "editor-handle",
      "data-handle": i,
    });
    handle.dataset.value = String(v);
    handle.addEventListener("mousedown", (down: MouseEvent) => {
      if (props.frozen) return;
      down.preventDefault();
      const move = (evt: MouseEvent) => cb.onDrag(i, yVal(toLocalY(evt)));
      const up = () => {
        window.removeEventListener("mousemove", move);
        window.removeEventListener("mouseup", up);
        cb.onRelease();
      };
      window.addEventListener("mousemove", move);
      window.addEventListener("mouseup", up);
    });
    svg.appendChild(handle);
    const tick = svgEl("text", {
      x: xPos(i), y: H - 4, class: "axis-label", "text-anchor": "middle",
    });
    tick.textContent = `+${i + 1}`;
    svg.appendChild(tick);
  });
  container.appendChild(svg);
}

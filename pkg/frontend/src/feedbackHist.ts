/**
 * Overlaid feedback histograms, one panel per rollout count, with the distance
 * value from the metric CSV as the annotation.
 */
import { asNumber, readTable } from "./csv.js";
import { PlotManifest } from "./manifest.js";
import { Svg, buildHistogram, extentOf, panel } from "./svg.js";

const FEEDBACK_COLUMNS = ["kind", "estimator", "value", "n_treated", "seed"];
const METRIC_COLUMNS = ["d_hat", "feedback_kind", "comparison", "value", "n_world", "n_real"];

const REAL_COLOR = "#e08214"; // orange
const WORLD_COLOR = "#2166ac"; // blue

export interface HistPanel {
  count: number;
  realBins: number[];
  worldBins: number[];
}

export interface FeedbackHistResult {
  svg: string;
  panels: HistPanel[];
  annotation: string | null;
}

export function renderFeedbackHist(manifest: PlotManifest): FeedbackHistResult {
  const real = readTable(manifest.real!, FEEDBACK_COLUMNS).rows.map((r) => asNumber(r, "value"));
  const world = readTable(manifest.world!, FEEDBACK_COLUMNS).rows.map((r) => asNumber(r, "value"));
  const counts = manifest.counts!;
  const bins = manifest.bins ?? 16;

  let annotation: string | null = null;
  if (manifest.metric) {
    const metric = readTable(manifest.metric, METRIC_COLUMNS);
    const row = metric.rows.find((r) => r.comparison === "world_vs_real") ?? metric.rows[0];
    if (row) {
      // keep the raw cell so the annotation reads back exactly
      annotation = `${row.d_hat}=${row.value}`;
    }
  }

  const panelW = 230;
  const panelH = 170;
  const margin = { left: 56, right: 16, top: 48, bottom: 36 };
  const gap = 34;
  const width = margin.left + counts.length * panelW + (counts.length - 1) * gap + margin.right;
  const height = margin.top + panelH + margin.bottom;
  const svg = new Svg(width, height);
  svg.text(margin.left, 18, manifest.title ?? "feedback distributions", 14);
  if (annotation) {
    svg.text(width - margin.right, 18, annotation, 12, "end");
  }
  svg.text(margin.left + 120, 32, "real", 11, "start", REAL_COLOR);
  svg.text(margin.left + 160, 32, "world", 11, "start", WORLD_COLOR);

  const panels: HistPanel[] = [];
  counts.forEach((count, i) => {
    const realSlice = real.slice(0, count);
    const worldSlice = world.slice(0, count);
    const domain = extentOf([...realSlice, ...worldSlice]);
    const realHist = buildHistogram(realSlice, bins, domain);
    const worldHist = buildHistogram(worldSlice, bins, domain);
    const maxCount = Math.max(1, ...realHist.map((b) => b.count), ...worldHist.map((b) => b.count));
    const x0 = margin.left + i * (panelW + gap);
    const frame = panel(svg, x0, margin.top, panelW, panelH, domain,
      { min: 0, max: maxCount * 1.05 }, `${count} rollouts`);
    for (const [hist, color] of [
      [realHist, REAL_COLOR],
      [worldHist, WORLD_COLOR],
    ] as const) {
      for (const bin of hist) {
        if (bin.count === 0) continue;
        const px = frame.xScale.apply(bin.start);
        const pw = frame.xScale.apply(bin.end) - px;
        const py = frame.yScale.apply(bin.count);
        svg.rect(px, py, pw, frame.y0 + frame.h - py, color, 0.45);
      }
    }
    panels.push({
      count,
      realBins: realHist.map((b) => b.count),
      worldBins: worldHist.map((b) => b.count),
    });
  });

  return { svg: svg.render(), panels, annotation };
}

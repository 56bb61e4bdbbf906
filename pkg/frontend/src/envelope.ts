/**
 * Metric-versus-rollout-count envelopes: mean line plus the 5%-95% band, one
 * color per comparison.
 */
import { asNumber, readTable } from "./csv.js";
import { PlotManifest } from "./manifest.js";
import { Svg, extentOf, panel } from "./svg.js";

const ENVELOPE_COLUMNS = ["d_hat", "feedback_kind", "N", "mean", "q5", "q95", "comparison"];

const COMPARISON_COLORS: Record<string, string> = {
  world_vs_real: "#2166ac",
  real_vs_real: "#e08214",
};

export interface EnvelopeSeries {
  comparison: string;
  points: Array<{ n: number; mean: number; q5: number; q95: number }>;
}

export interface EnvelopeResult {
  svg: string;
  series: EnvelopeSeries[];
}

export function renderEnvelope(manifest: PlotManifest): EnvelopeResult {
  const table = readTable(manifest.envelope!, ENVELOPE_COLUMNS);
  const byComparison = new Map<string, EnvelopeSeries>();
  for (const row of table.rows) {
    const name = row.comparison;
    if (!byComparison.has(name)) byComparison.set(name, { comparison: name, points: [] });
    byComparison.get(name)!.points.push({
      n: asNumber(row, "N"),
      mean: asNumber(row, "mean"),
      q5: asNumber(row, "q5"),
      q95: asNumber(row, "q95"),
    });
  }
  const series = [...byComparison.values()];
  series.forEach((s) => s.points.sort((a, b) => a.n - b.n));

  const width = 460;
  const height = 300;
  const margin = { left: 64, right: 16, top: 44, bottom: 40 };
  const svg = new Svg(width, height);
  const title = manifest.title ?? `${table.rows[0]?.d_hat ?? "distance"} vs rollout count`;
  svg.text(margin.left, 18, title, 14);

  const ns = series.flatMap((s) => s.points.map((p) => p.n));
  const values = series.flatMap((s) => s.points.flatMap((p) => [p.q5, p.q95, p.mean]));
  const frame = panel(
    svg,
    margin.left,
    margin.top,
    width - margin.left - margin.right,
    height - margin.top - margin.bottom,
    extentOf(ns, 0.08),
    extentOf(values, 0.08),
    "",
  );
  svg.text(width / 2, height - 6, "rollouts per side (N)", 11, "middle", "#555");

  let legendY = margin.top + 12;
  for (const s of series) {
    const color = COMPARISON_COLORS[s.comparison] ?? "#555";
    const band: Array<[number, number]> = [
      ...s.points.map((p): [number, number] => [frame.xScale.apply(p.n), frame.yScale.apply(p.q95)]),
      ...[...s.points].reverse().map((p): [number, number] => [
        frame.xScale.apply(p.n),
        frame.yScale.apply(p.q5),
      ]),
    ];
    if (s.points.length > 1) {
      svg.polygon(band, color, 0.2);
      svg.polyline(
        s.points.map((p): [number, number] => [frame.xScale.apply(p.n), frame.yScale.apply(p.mean)]),
        color,
        2,
      );
    } else if (s.points.length === 1) {
      // a single N degenerates to a vertical band segment with its mean point
      const p = s.points[0];
      const px = frame.xScale.apply(p.n);
      svg.line(px, frame.yScale.apply(p.q5), px, frame.yScale.apply(p.q95), color, 4);
    }
    for (const p of s.points) {
      svg.circle(frame.xScale.apply(p.n), frame.yScale.apply(p.mean), 2.5, color);
    }
    svg.text(width - margin.right - 4, legendY, s.comparison, 11, "end", color);
    legendY += 14;
  }
  return { svg: svg.render(), series };
}

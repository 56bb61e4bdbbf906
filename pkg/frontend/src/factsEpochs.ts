/**
 * Stylized-fact time series across training epochs: one panel per epoch with
 * the buy/sell depth-10 volume series, trial mean with a min-max band when
 * several trials are present.
 */
import { asNumber, readTable } from "./csv.js";
import { PlotManifest } from "./manifest.js";
import { Svg, extentOf, panel } from "./svg.js";

const FACTS_COLUMNS = [
  "epoch", "trial", "step", "mid", "spread", "log_return", "price_impact",
  "vol_bid_10", "vol_ask_10", "depth_mean", "cum_exec_buy", "cum_exec_sell",
];

const BID_COLOR = "#1b7837"; // buy side
const ASK_COLOR = "#b2182b"; // sell side

interface SeriesStat {
  step: number;
  mean: number;
  lo: number;
  hi: number;
}

export interface EpochPanel {
  epoch: number;
  trials: number;
  bid: SeriesStat[];
  ask: SeriesStat[];
}

export interface FactsEpochsResult {
  svg: string;
  panels: EpochPanel[];
}

function seriesStats(rows: Record<string, string>[], column: string): SeriesStat[] {
  const bySteps = new Map<number, number[]>();
  for (const row of rows) {
    if (row[column] === "") continue;
    const step = asNumber(row, "step");
    if (!bySteps.has(step)) bySteps.set(step, []);
    bySteps.get(step)!.push(asNumber(row, column));
  }
  return [...bySteps.entries()]
    .map(([step, values]) => ({
      step,
      mean: values.reduce((a, b) => a + b, 0) / values.length,
      lo: Math.min(...values),
      hi: Math.max(...values),
    }))
    .sort((a, b) => a.step - b.step);
}

export function renderFactsEpochs(manifest: PlotManifest): FactsEpochsResult {
  const panels: EpochPanel[] = manifest.facts!.map((path) => {
    const table = readTable(path, FACTS_COLUMNS);
    const epoch = table.rows.length ? asNumber(table.rows[0], "epoch") : 0;
    const trials = new Set(table.rows.map((r) => r.trial)).size;
    return {
      epoch,
      trials,
      bid: seriesStats(table.rows, "vol_bid_10"),
      ask: seriesStats(table.rows, "vol_ask_10"),
    };
  });

  const perRow = Math.min(panels.length, 4);
  const rows = Math.ceil(panels.length / perRow);
  const panelW = 200;
  const panelH = 150;
  const margin = { left: 56, right: 16, top: 46, bottom: 34 };
  const gapX = 34;
  const gapY = 44;
  const width = margin.left + perRow * panelW + (perRow - 1) * gapX + margin.right;
  const height = margin.top + rows * panelH + (rows - 1) * gapY + margin.bottom;
  const svg = new Svg(width, height);
  svg.text(margin.left, 18, manifest.title ?? "volume at first 10 levels by epoch", 14);
  svg.text(margin.left + 260, 32, "bid", 11, "start", BID_COLOR);
  svg.text(margin.left + 290, 32, "ask", 11, "start", ASK_COLOR);

  panels.forEach((p, i) => {
    const col = i % perRow;
    const row = Math.floor(i / perRow);
    const x0 = margin.left + col * (panelW + gapX);
    const y0 = margin.top + row * (panelH + gapY);
    const steps = [...p.bid, ...p.ask].map((s) => s.step);
    const vols = [...p.bid, ...p.ask].flatMap((s) => [s.lo, s.hi]);
    const frame = panel(svg, x0, y0, panelW, panelH,
      extentOf(steps.length ? steps : [0, 1], 0.04),
      extentOf(vols.length ? vols : [0, 1], 0.08),
      `epoch ${p.epoch}`);
    for (const [series, color] of [
      [p.bid, BID_COLOR],
      [p.ask, ASK_COLOR],
    ] as const) {
      if (series.length === 0) continue;
      if (p.trials > 1) {
        const band: Array<[number, number]> = [
          ...series.map((s): [number, number] => [frame.xScale.apply(s.step), frame.yScale.apply(s.hi)]),
          ...[...series].reverse().map((s): [number, number] => [
            frame.xScale.apply(s.step),
            frame.yScale.apply(s.lo),
          ]),
        ];
        svg.polygon(band, color, 0.18);
      }
      svg.polyline(
        series.map((s): [number, number] => [frame.xScale.apply(s.step), frame.yScale.apply(s.mean)]),
        color,
        1.8,
      );
    }
  });

  return { svg: svg.render(), panels };
}

/**
 * Tiny SVG scene builder: enough shapes for histograms, bands, and series.
 */

export interface Extent {
  min: number;
  max: number;
}

export function extentOf(values: number[], pad = 0.05): Extent {
  let min = Math.min(...values);
  let max = Math.max(...values);
  if (!Number.isFinite(min) || !Number.isFinite(max)) {
    min = 0;
    max = 1;
  }
  if (min === max) {
    min -= 0.5;
    max += 0.5;
  }
  const range = max - min;
  return { min: min - pad * range, max: max + pad * range };
}

export class Scale {
  constructor(
    private domain: Extent,
    private lo: number,
    private hi: number,
  ) {}

  apply(v: number): number {
    const t = (v - this.domain.min) / (this.domain.max - this.domain.min);
    return this.lo + t * (this.hi - this.lo);
  }

  ticks(n = 5): number[] {
    const out: number[] = [];
    for (let i = 0; i <= n; i++) {
      out.push(this.domain.min + ((this.domain.max - this.domain.min) * i) / n);
    }
    return out;
  }
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export class Svg {
  private parts: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {}

  rect(x: number, y: number, w: number, h: number, fill: string, opacity = 1): void {
    this.parts.push(
      `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${Math.max(w, 0).toFixed(2)}" ` +
        `height="${Math.max(h, 0).toFixed(2)}" fill="${fill}" fill-opacity="${opacity}"/>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1): void {
    this.parts.push(
      `<line x1="${x1.toFixed(2)}" y1="${y1.toFixed(2)}" x2="${x2.toFixed(2)}" ` +
        `y2="${y2.toFixed(2)}" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 1.5): void {
    const attr = points.map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`).join(" ");
    this.parts.push(
      `<polyline points="${attr}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  polygon(points: Array<[number, number]>, fill: string, opacity = 0.25): void {
    const attr = points.map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`).join(" ");
    this.parts.push(`<polygon points="${attr}" fill="${fill}" fill-opacity="${opacity}"/>`);
  }

  circle(x: number, y: number, r: number, fill: string): void {
    this.parts.push(
      `<circle cx="${x.toFixed(2)}" cy="${y.toFixed(2)}" r="${r}" fill="${fill}"/>`,
    );
  }

  text(x: number, y: number, content: string, size = 11, anchor = "start", fill = "#222"): void {
    this.parts.push(
      `<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" font-size="${size}" ` +
        `font-family="sans-serif" text-anchor="${anchor}" fill="${fill}">${esc(content)}</text>`,
    );
  }

  render(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" ` +
      `viewBox="0 0 ${this.width} ${this.height}">\n<rect width="100%" height="100%" fill="white"/>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}

export interface PanelFrame {
  x0: number;
  y0: number;
  w: number;
  h: number;
  xScale: Scale;
  yScale: Scale;
}

/** Draw panel axes with tick labels and return the plotting scales. */
export function panel(
  svg: Svg,
  x0: number,
  y0: number,
  w: number,
  h: number,
  xDomain: Extent,
  yDomain: Extent,
  title: string,
): PanelFrame {
  const xScale = new Scale(xDomain, x0, x0 + w);
  const yScale = new Scale(yDomain, y0 + h, y0); // svg y grows downward
  svg.line(x0, y0 + h, x0 + w, y0 + h, "#444");
  svg.line(x0, y0, x0, y0 + h, "#444");
  for (const t of xScale.ticks(4)) {
    const px = xScale.apply(t);
    svg.line(px, y0 + h, px, y0 + h + 3, "#444");
    svg.text(px, y0 + h + 14, formatTick(t), 9, "middle", "#555");
  }
  for (const t of yScale.ticks(4)) {
    const py = yScale.apply(t);
    svg.line(x0 - 3, py, x0, py, "#444");
    svg.text(x0 - 6, py + 3, formatTick(t), 9, "end", "#555");
  }
  svg.text(x0 + w / 2, y0 - 6, title, 12, "middle");
  return { x0, y0, w, h, xScale, yScale };
}

export function formatTick(v: number): string {
  if (v === 0) return "0";
  const abs = Math.abs(v);
  if (abs >= 1000 || abs < 0.01) return v.toExponential(1);
  return Number(v.toPrecision(3)).toString();
}

export interface HistogramBin {
  start: number;
  end: number;
  count: number;
}

export function buildHistogram(values: number[], nBins: number, domain: Extent): HistogramBin[] {
  const width = (domain.max - domain.min) / nBins;
  const bins: HistogramBin[] = Array.from({ length: nBins }, (_, i) => ({
    start: domain.min + i * width,
    end: domain.min + (i + 1) * width,
    count: 0,
  }));
  for (const v of values) {
    const idx = Math.min(Math.floor((v - domain.min) / width), nBins - 1);
    if (idx >= 0) bins[idx].count++;
  }
  return bins;
}

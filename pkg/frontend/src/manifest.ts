/**
 * Plot manifests: which CSVs feed which figure, and where the image goes.
 */
import { existsSync, readFileSync } from "node:fs";

export type FigureKind = "feedback_hist" | "envelope" | "facts_epochs";

export interface PlotManifest {
  kind: FigureKind;
  output: string;
  title?: string;
  /** feedback_hist: one CSV per side plus panel sample counts */
  real?: string;
  world?: string;
  counts?: number[];
  metric?: string;
  bins?: number;
  /** envelope */
  envelope?: string;
  /** facts_epochs: one CSV per epoch */
  facts?: string[];
}

export class ManifestError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ManifestError";
  }
}

function requireFile(path: string | undefined, what: string): string {
  if (!path) throw new ManifestError(`manifest is missing ${what}`);
  if (!existsSync(path)) throw new ManifestError(`${what} not found: ${path}`);
  return path;
}

export function validateManifest(manifest: PlotManifest): PlotManifest {
  if (!manifest.output) throw new ManifestError("manifest is missing output");
  switch (manifest.kind) {
    case "feedback_hist":
      requireFile(manifest.real, "real feedback CSV");
      requireFile(manifest.world, "world feedback CSV");
      if (!manifest.counts || manifest.counts.length === 0) {
        throw new ManifestError("feedback_hist needs at least one rollout count");
      }
      if (manifest.metric) requireFile(manifest.metric, "metric CSV");
      break;
    case "envelope":
      requireFile(manifest.envelope, "envelope CSV");
      break;
    case "facts_epochs":
      if (!manifest.facts || manifest.facts.length === 0) {
        throw new ManifestError("facts_epochs needs at least one facts CSV");
      }
      manifest.facts.forEach((p) => requireFile(p, "facts CSV"));
      break;
    default:
      throw new ManifestError(`unknown figure kind ${String((manifest as { kind?: string }).kind)}`);
  }
  return manifest;
}

export function loadManifest(path: string): PlotManifest {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new ManifestError(`cannot read manifest ${path}: ${String(err)}`);
  }
  let data: PlotManifest;
  try {
    data = JSON.parse(raw) as PlotManifest;
  } catch (err) {
    throw new ManifestError(`manifest ${path} is not valid JSON: ${String(err)}`);
  }
  return validateManifest(data);
}

/**
 * Manifest-driven renderer: `node dist/main.js --manifest fig.json` reads the
 * CSVs named in the manifest and writes the SVG image it describes.
 */
import { writeFileSync } from "node:fs";
import { SchemaMismatchError } from "./csv.js";
import { renderEnvelope } from "./envelope.js";
import { renderFactsEpochs } from "./factsEpochs.js";
import { renderFeedbackHist } from "./feedbackHist.js";
import { loadManifest, ManifestError, PlotManifest } from "./manifest.js";

export function renderManifest(manifest: PlotManifest): string {
  switch (manifest.kind) {
    case "feedback_hist":
      return renderFeedbackHist(manifest).svg;
    case "envelope":
      return renderEnvelope(manifest).svg;
    case "facts_epochs":
      return renderFactsEpochs(manifest).svg;
  }
}

function main(argv: string[]): number {
  const flag = argv.indexOf("--manifest");
  if (flag < 0 || flag + 1 >= argv.length) {
    console.error("usage: main.js --manifest <figure.json>");
    return 2;
  }
  try {
    const manifest = loadManifest(argv[flag + 1]);
    const svg = renderManifest(manifest);
    writeFileSync(manifest.output, svg, "utf-8");
    console.log(`wrote ${manifest.kind} figure -> ${manifest.output}`);
    return 0;
  } catch (err) {
    if (err instanceof ManifestError || err instanceof SchemaMismatchError) {
      console.error(err.message);
      return 2;
    }
    throw err;
  }
}

if (process.argv[1] && process.argv[1].endsWith("main.js")) {
  process.exit(main(process.argv.slice(2)));
}

/**
 * CSV reading for the simulator's exports: files start with `#key=value`
 * metadata comment lines, then a header row, then data rows.
 */
import { readFileSync } from "node:fs";

export const EXPECTED_SCHEMA_VERSION = "1";

export class SchemaMismatchError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaMismatchError";
  }
}

export interface CsvTable {
  meta: Record<string, string>;
  header: string[];
  rows: Record<string, string>[];
}

function splitLine(line: string): string[] {
  // the exporters never quote fields, so a plain split is exact
  return line.split(",");
}

export function parseCsv(text: string): CsvTable {
  const meta: Record<string, string> = {};
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  let i = 0;
  while (i < lines.length && lines[i].startsWith("#")) {
    const body = lines[i].slice(1);
    const eq = body.indexOf("=");
    if (eq > 0) meta[body.slice(0, eq)] = body.slice(eq + 1);
    i++;
  }
  if (i >= lines.length) {
    throw new SchemaMismatchError("CSV has no header row");
  }
  const header = splitLine(lines[i++]);
  const rows: Record<string, string>[] = [];
  for (; i < lines.length; i++) {
    const cells = splitLine(lines[i]);
    if (cells.length !== header.length) {
      throw new SchemaMismatchError(
        `row ${i + 1} has ${cells.length} cells, header has ${header.length}`,
      );
    }
    const row: Record<string, string> = {};
    header.forEach((name, k) => (row[name] = cells[k]));
    rows.push(row);
  }
  return { meta, header, rows };
}

/** Read a CSV file and require the schema version and column set. */
export function readTable(path: string, requiredColumns: string[]): CsvTable {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new SchemaMismatchError(`cannot read ${path}: ${String(err)}`);
  }
  const table = parseCsv(text);
  const version = table.meta["schema-version"];
  if (version !== EXPECTED_SCHEMA_VERSION) {
    throw new SchemaMismatchError(
      `${path}: schema-version ${version ?? "missing"}, expected ${EXPECTED_SCHEMA_VERSION}`,
    );
  }
  for (const col of requiredColumns) {
    if (!table.header.includes(col)) {
      throw new SchemaMismatchError(`${path}: missing column ${col}`);
    }
  }
  return table;
}

export function asNumber(row: Record<string, string>, column: string): number {
  const value = Number(row[column]);
  if (!Number.isFinite(value)) {
    throw new SchemaMismatchError(`column ${column} holds non-numeric ${row[column]!}`);
  }
  return value;
}

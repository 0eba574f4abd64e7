/**
 * In-memory bindings over the core pipeline: hand a trajectory or feature
 * array to `featurize` / `amuse` and get plain arrays back.  Each call
 * serializes its input to the core's binary formats in a scratch directory,
 * drives the CLI, and parses the outputs, so results are identical to what
 * the CLI itself produces for the same input and settings.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  FeatureMatrix,
  FormatError,
  Trajectory,
  decodeFeatures,
  encodeFeatures,
  encodeTrajectory,
} from "./formats.js";
import { runCli, withScratchDir } from "./runner.js";

export {
  FEATURE_KIND_TAGS,
  FormatError,
  MPB_MAGIC,
  MPB_VERSION,
  MPF_MAGIC,
  decodeFeatures,
  decodeTrajectory,
  encodeFeatures,
  encodeTrajectory,
} from "./formats.js";
export type { FeatureKind, FeatureMatrix, Trajectory } from "./formats.js";
export { CliError, cliCommand, runCli, withScratchDir } from "./runner.js";

/** Mirrors the core package version. */
export const VERSION = "0.1.0";

/** Feature families the featurize subcommand accepts. */
export type FeaturizeKind =
  | "ca"
  | "torsion"
  | "orientation"
  | "orientation-mean"
  | "pointcloud";

export interface FeaturizeOptions {
  /** Keep every n-th frame. */
  stride?: number;
  /** Frame index used as the fixed reference (orientation / pointcloud). */
  referenceFrame?: number;
  /** Superpose frames onto the reference before featurizing. */
  align?: "none" | "reference";
  /** Seed forwarded to the CLI. */
  seed?: number;
  /** Explicit CLI executable; defaults to $ORIENTMD_CLI or `orientmd`. */
  cli?: string;
}

export interface AmuseOptions {
  /** Fixed lag time in frames; omitted means the CLI searches for one. */
  lag?: number;
  /** Explained-variance-ratio threshold for the PCA stage. */
  evrThreshold?: number;
  /** Component count for the VAMP-2 score. */
  vampK?: number;
  seed?: number;
  cli?: string;
}

export interface AmuseResult {
  eigenvalues: number[];
  /** Per-eigenvalue implied timescales; null where undefined. */
  timescales: Array<number | null>;
  /** Row-major (nFrames, projectionColumns) slow-mode projections. */
  projections: Float64Array;
  projectionColumns: number;
  nFrames: number;
  /** Lag actually used (the searched one when none was given). */
  lag: number;
  /** VAMP-2 score at that lag. */
  vamp2: number;
}

interface KineticsReport {
  lag: number;
  tica: { eigenvalues: number[]; timescales: Array<number | null> };
  vamp2: { k: number; score: number };
}

/**
 * Compute one feature family for an in-memory trajectory.
 *
 * The trajectory is written as MPB1, run through `featurize`, and the
 * resulting MPF1 matrix is returned decoded.
 */
export function featurize(
  traj: Trajectory,
  kind: FeaturizeKind,
  options: FeaturizeOptions = {},
): FeatureMatrix {
  const encoded = encodeTrajectory(traj);
  return withScratchDir((dir) => {
    writeFileSync(join(dir, "traj.mpb1"), encoded);
    const args = [
      "featurize",
      "--trajectory",
      "traj.mpb1",
      "--kinds",
      kind,
      "--output-dir",
      ".",
    ];
    if (options.stride !== undefined) {
      args.push("--stride", String(options.stride));
    }
    if (options.referenceFrame !== undefined) {
      args.push("--reference-frame", String(options.referenceFrame));
    }
    if (options.align !== undefined) {
      args.push("--align", options.align);
    }
    if (options.seed !== undefined) {
      args.push("--seed", String(options.seed));
    }
    runCli(args, dir, options.cli);
    const name = `features_${kind.replaceAll("-", "_")}.mpf1`;
    return decodeFeatures(readFileSync(join(dir, name)));
  });
}

/**
 * Run the kinetics chain (whitened PCA, TICA, VAMP-2) on an in-memory
 * feature matrix and return the spectral summary plus projections.
 */
export function amuse(
  features: FeatureMatrix,
  options: AmuseOptions = {},
): AmuseResult {
  const encoded = encodeFeatures(features);
  return withScratchDir((dir) => {
    writeFileSync(join(dir, "input.mpf1"), encoded);
    const args = ["kinetics", "--features", "input.mpf1", "--output-dir", "."];
    if (options.lag !== undefined) {
      args.push("--lag", String(options.lag));
    }
    if (options.evrThreshold !== undefined) {
      args.push("--evr-threshold", String(options.evrThreshold));
    }
    if (options.vampK !== undefined) {
      args.push("--vamp-k", String(options.vampK));
    }
    if (options.seed !== undefined) {
      args.push("--seed", String(options.seed));
    }
    runCli(args, dir, options.cli);
    const report = JSON.parse(
      readFileSync(join(dir, "kinetics_input.json"), "utf8"),
    ) as KineticsReport;
    const projections = parseProjectionsCsv(
      readFileSync(join(dir, "kinetics_input_projections.csv"), "utf8"),
    );
    return {
      eigenvalues: report.tica.eigenvalues,
      timescales: report.tica.timescales,
      projections: projections.values,
      projectionColumns: projections.columns,
      nFrames: projections.rows,
      lag: report.lag,
      vamp2: report.vamp2.score,
    };
  });
}

/** Parse a `frame,tic1[,tic2,...]` CSV into a row-major Float64Array. */
export function parseProjectionsCsv(text: string): {
  values: Float64Array;
  rows: number;
  columns: number;
} {
  const lines = text.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0 || !lines[0].startsWith("frame")) {
    throw new FormatError("projections CSV is missing its header row");
  }
  const columns = lines[0].split(",").length - 1;
  const rows = lines.length - 1;
  const values = new Float64Array(rows * columns);
  for (let r = 0; r < rows; r++) {
    const cells = lines[r + 1].split(",");
    if (cells.length !== columns + 1) {
      throw new FormatError(
        `row ${r} has ${cells.length} cells, header promised ${columns + 1}`,
      );
    }
    for (let c = 0; c < columns; c++) {
      const value = Number(cells[c + 1]);
      if (Number.isNaN(value) && cells[c + 1].trim() !== "nan") {
        throw new FormatError(`row ${r} column ${c}: bad number ${cells[c + 1]}`);
      }
      values[r * columns + c] = value;
    }
  }
  return { values, rows, columns };
}

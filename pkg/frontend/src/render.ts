/**
 * Row models for the table. Numbers are echoed exactly as the API sent them
 * (String() of the JSON value) — no rounding, no client-side arithmetic; CSS
 * truncates visually. The only "rendering" beyond echo is the descriptor bar
 * strip, a fixed glyph per mean bucket.
 */

import type { CandidateRow } from "./api.js";

const BAR_GLYPHS = ["▁", "▂", "▃", "▄", "▅", "▆", "▇", "█"];

export const SOFT_DIMENSION_LABELS = [
  "binding",
  "interfacial shielding",
  "hydrophobic protection",
  "ion interaction",
  "electronic modulation",
  "predicted effect",
];

/** Compact bar strip over the six soft-descriptor means. */
export function softBarStrip(means: number[] | null): string {
  if (!means) return "";
  return means
    .map((m) => {
      const clamped = Math.min(1, Math.max(0, m));
      const idx = Math.min(BAR_GLYPHS.length - 1, Math.floor(clamped * BAR_GLYPHS.length));
      return BAR_GLYPHS[idx];
    })
    .join("");
}

export interface CandidateCells {
  rank: string;
  molecule_id: string;
  name: string;
  mu: string;
  sigma: string;
  ei: string;
  bars: string;
  feasible: boolean;
  tested: boolean;
  delta_rel: string;
}

export function candidateCells(row: CandidateRow): CandidateCells {
  return {
    rank: String(row.rank),
    molecule_id: row.molecule_id,
    name: row.name,
    mu: String(row.mu),
    sigma: String(row.sigma),
    ei: String(row.ei),
    bars: softBarStrip(row.soft_means),
    feasible: row.feasible,
    tested: row.tested,
    delta_rel: row.delta_rel === null ? "" : String(row.delta_rel),
  };
}

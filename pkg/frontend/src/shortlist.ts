/**
 * Pure shortlist-table logic: sorting, filtering, and the optimistic
 * feasibility re-rank. Ordering rules mirror the server exactly (descending
 * score, molecule_id tiebreak; the shortlist view is the first N feasible
 * rows in rank order), so an optimistic update and the next poll agree.
 */

import type { CandidateRow } from "./api.js";

export type SortKey = "ei" | "mu" | "sigma" | "rank";

export function sortRows(rows: CandidateRow[], key: SortKey): CandidateRow[] {
  const sorted = [...rows];
  if (key === "rank") {
    sorted.sort((a, b) => a.rank - b.rank);
    return sorted;
  }
  sorted.sort((a, b) => {
    if (b[key] !== a[key]) return b[key] - a[key];
    return a.molecule_id < b.molecule_id ? -1 : a.molecule_id > b.molecule_id ? 1 : 0;
  });
  return sorted;
}

/** First `size` feasible candidates in rank order (the expert's shortlist). */
export function shortlistView(rows: CandidateRow[], size: number): CandidateRow[] {
  return sortRows(rows, "rank")
    .filter((r) => r.feasible)
    .slice(0, size);
}

/** Optimistic local flip of one candidate's feasibility flag. */
export function toggleFeasibility(rows: CandidateRow[], moleculeId: string, feasible: boolean): CandidateRow[] {
  return rows.map((r) => (r.molecule_id === moleculeId ? { ...r, feasible } : r));
}

/** Case-insensitive substring filter over id, name and SMILES. */
export function filterRows(rows: CandidateRow[], query: string): CandidateRow[] {
  const q = query.trim().toLowerCase();
  if (!q) return rows;
  return rows.filter(
    (r) =>
      r.molecule_id.toLowerCase().includes(q) ||
      r.name.toLowerCase().includes(q) ||
      r.smiles.toLowerCase().includes(q),
  );
}

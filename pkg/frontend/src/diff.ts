/** Round-over-round rank comparison for the timeline view. */

import type { CandidateRow } from "./api.js";

export type Movement = "up" | "down" | "same" | "new" | "dropped";

export interface RankMovement {
  molecule_id: string;
  name: string;
  from: number | null;
  to: number | null;
  movement: Movement;
}

/**
 * Compare two scored rounds by rank. Molecules only in `current` are "new",
 * only in `previous` are "dropped". Rows come back sorted by current rank,
 * dropped molecules last (by their old rank).
 */
export function roundDiff(current: CandidateRow[], previous: CandidateRow[]): RankMovement[] {
  if (current.length === 0 || previous.length === 0) {
    return [];
  }
  const prevByMol = new Map(previous.map((r) => [r.molecule_id, r]));
  const currentIds = new Set(current.map((r) => r.molecule_id));
  const out: RankMovement[] = [];
  for (const row of [...current].sort((a, b) => a.rank - b.rank)) {
    const before = prevByMol.get(row.molecule_id);
    if (!before) {
      out.push({ molecule_id: row.molecule_id, name: row.name, from: null, to: row.rank, movement: "new" });
    } else {
      const movement: Movement = before.rank === row.rank ? "same" : before.rank > row.rank ? "up" : "down";
      out.push({ molecule_id: row.molecule_id, name: row.name, from: before.rank, to: row.rank, movement });
    }
  }
  const dropped = previous
    .filter((r) => !currentIds.has(r.molecule_id))
    .sort((a, b) => a.rank - b.rank)
    .map((r): RankMovement => ({ molecule_id: r.molecule_id, name: r.name, from: r.rank, to: null, movement: "dropped" }));
  return out.concat(dropped);
}

export function movementArrow(m: Movement): string {
  switch (m) {
    case "up":
      return "↑";
    case "down":
      return "↓";
    case "same":
      return "→";
    case "new":
      return "+";
    case "dropped":
      return "−";
  }
}

import { describe, expect, it } from "vitest";

import type { CandidateRow } from "../src/api.js";
import { filterRows, shortlistView, sortRows, toggleFeasibility } from "../src/shortlist.js";

function row(id: string, rank: number, extra: Partial<CandidateRow> = {}): CandidateRow {
  return {
    molecule_id: id,
    name: `name-${id}`,
    smiles: "CC(=O)N",
    mu: 0,
    sigma: 0,
    ei: 0,
    rank,
    feasible: true,
    tested: false,
    delta_rel: null,
    soft_means: null,
    soft_stds: null,
    ...extra,
  };
}

describe("sortRows", () => {
  it("sorts descending with molecule_id tiebreak, matching the service", () => {
    const rows = [
      row("b", 2, { ei: 0.5 }),
      row("a", 3, { ei: 0.5 }),
      row("c", 1, { ei: 0.9 }),
    ];
    expect(sortRows(rows, "ei").map((r) => r.molecule_id)).toEqual(["c", "a", "b"]);
  });

  it("rank sort is ascending", () => {
    const rows = [row("a", 3), row("b", 1), row("c", 2)];
    expect(sortRows(rows, "rank").map((r) => r.rank)).toEqual([1, 2, 3]);
  });

  it("does not mutate its input", () => {
    const rows = [row("a", 2), row("b", 1)];
    sortRows(rows, "rank");
    expect(rows[0]!.molecule_id).toBe("a");
  });
});

describe("shortlistView", () => {
  it("takes the first N feasible rows in rank order", () => {
    const rows = [
      row("a", 1, { feasible: false }),
      row("b", 2),
      row("c", 3),
      row("d", 4),
    ];
    expect(shortlistView(rows, 2).map((r) => r.molecule_id)).toEqual(["b", "c"]);
  });

  it("toggle then view starts at the previous rank 2", () => {
    const rows = [row("a", 1), row("b", 2), row("c", 3)];
    const after = toggleFeasibility(rows, "a", false);
    expect(shortlistView(after, 3).map((r) => r.molecule_id)).toEqual(["b", "c"]);
    const restored = toggleFeasibility(after, "a", true);
    expect(shortlistView(restored, 3).map((r) => r.molecule_id)).toEqual(["a", "b", "c"]);
  });
});

describe("filterRows", () => {
  it("matches id, name and SMILES case-insensitively", () => {
    const rows = [row("mol-1"), row("mol-2", 2, { smiles: "c1ccccc1" })];
    expect(filterRows(rows, "MOL-1")).toHaveLength(1);
    expect(filterRows(rows, "c1cc")).toHaveLength(1);
    expect(filterRows(rows, "")).toHaveLength(2);
    expect(filterRows(rows, "zzz")).toHaveLength(0);
  });
});

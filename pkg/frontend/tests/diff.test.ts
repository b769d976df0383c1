import { describe, expect, it } from "vitest";

import type { CandidateRow } from "../src/api.js";
import { movementArrow, roundDiff } from "../src/diff.js";

function row(id: string, rank: number): CandidateRow {
  return {
    molecule_id: id, name: id, smiles: "C", mu: 0, sigma: 0, ei: 0,
    rank, feasible: true, tested: false, delta_rel: null, soft_means: null, soft_stds: null,
  };
}

describe("roundDiff", () => {
  it("classifies movement, new and dropped", () => {
    const previous = [row("a", 1), row("b", 2), row("c", 3)];
    const current = [row("b", 1), row("a", 2), row("d", 3)];
    const diff = roundDiff(current, previous);
    const byId = Object.fromEntries(diff.map((d) => [d.molecule_id, d]));
    expect(byId.b!.movement).toBe("up");
    expect(byId.a!.movement).toBe("down");
    expect(byId.d!).toMatchObject({ movement: "new", from: null, to: 3 });
    expect(byId.c!).toMatchObject({ movement: "dropped", from: 3, to: null });
  });

  it("orders by current rank with dropped molecules last", () => {
    const previous = [row("x", 1), row("y", 2)];
    const current = [row("y", 1)];
    expect(roundDiff(current, previous).map((d) => d.molecule_id)).toEqual(["y", "x"]);
  });

  it("is empty unless both rounds are scored", () => {
    expect(roundDiff([], [row("a", 1)])).toEqual([]);
    expect(roundDiff([row("a", 1)], [])).toEqual([]);
  });

  it("stable ranks map to 'same'", () => {
    const rows = [row("a", 1), row("b", 2)];
    expect(roundDiff(rows, rows).every((d) => d.movement === "same")).toBe(true);
  });
});

describe("movementArrow", () => {
  it("has a glyph for every movement", () => {
    expect(["up", "down", "same", "new", "dropped"].map(movementArrow)).toEqual(["↑", "↓", "→", "+", "−"]);
  });
});

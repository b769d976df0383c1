import { describe, expect, it } from "vitest";

import { validateDraft } from "../src/form.js";

const good = { molecule_id: "m1", round: 1, pce_additive: 20.87, pce_control: 19.25 };

describe("validateDraft", () => {
  it("accepts a well-formed draft", () => {
    expect(validateDraft(good)).toEqual({ ok: true, errors: {} });
  });

  it("rejects a zero control PCE before any request is sent", () => {
    const { ok, errors } = validateDraft({ ...good, pce_control: 0 });
    expect(ok).toBe(false);
    expect(errors.pce_control).toBeTruthy();
  });

  it("rejects out-of-range and non-finite PCE values", () => {
    expect(validateDraft({ ...good, pce_additive: 100 }).ok).toBe(false);
    expect(validateDraft({ ...good, pce_additive: NaN }).ok).toBe(false);
    expect(validateDraft({ ...good, pce_control: -3 }).ok).toBe(false);
  });

  it("requires a molecule and a positive integer round", () => {
    expect(validateDraft({ ...good, molecule_id: "  " }).errors.molecule_id).toBeTruthy();
    expect(validateDraft({ ...good, round: 0 }).errors.round).toBeTruthy();
    expect(validateDraft({ ...good, round: 1.5 }).errors.round).toBeTruthy();
  });
});

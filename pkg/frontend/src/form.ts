/**
 * Result-entry form validation. This is only a gate that avoids sending
 * obviously invalid requests; the server revalidates and its 422 messages are
 * rendered inline on the offending field.
 */

export interface ResultDraft {
  molecule_id: string;
  round: number;
  pce_additive: number;
  pce_control: number;
}

export type FieldErrors = Partial<Record<keyof ResultDraft, string>>;

export function validateDraft(draft: ResultDraft): { ok: boolean; errors: FieldErrors } {
  const errors: FieldErrors = {};
  if (!draft.molecule_id.trim()) {
    errors.molecule_id = "pick a molecule";
  }
  if (!Number.isInteger(draft.round) || draft.round < 1) {
    errors.round = "round must be a positive integer";
  }
  if (!Number.isFinite(draft.pce_additive) || draft.pce_additive <= 0 || draft.pce_additive >= 100) {
    errors.pce_additive = "PCE must lie in (0, 100)";
  }
  if (!Number.isFinite(draft.pce_control) || draft.pce_control <= 0 || draft.pce_control >= 100) {
    errors.pce_control = "control PCE must lie in (0, 100)";
  }
  return { ok: Object.keys(errors).length === 0, errors };
}

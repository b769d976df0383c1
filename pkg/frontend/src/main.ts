/**
 * Review console wiring. All state lives server-side; this file binds API
 * payloads to the DOM and funnels expert actions back through the client.
 * Refreshing the page loses nothing but unsubmitted form drafts.
 */

import { ApiClient, ApiError } from "./api.js";
import type { CampaignSummary, CandidateRow } from "./api.js";
import { roundDiff, movementArrow } from "./diff.js";
import { validateDraft } from "./form.js";
import { createPoller } from "./poll.js";
import { candidateCells } from "./render.js";
import { filterRows, shortlistView, sortRows, toggleFeasibility } from "./shortlist.js";
import type { SortKey } from "./shortlist.js";

const POLL_INTERVAL_MS = 2000;

const client = new ApiClient("");

interface ViewState {
  summary: CampaignSummary | null;
  etag: string | null;
  selectedRound: number | null;
  rows: CandidateRow[];
  previousRows: CandidateRow[];
  sort: SortKey;
  filter: string;
  shortlistOnly: boolean;
  retrainInFlight: boolean;
}

const view: ViewState = {
  summary: null,
  etag: null,
  selectedRound: null,
  rows: [],
  previousRows: [],
  sort: "rank",
  filter: "",
  shortlistOnly: false,
  retrainInFlight: false,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(message: string, kind: "error" | "info" = "error"): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message;
  banner.className = `banner ${kind}`;
  banner.hidden = false;
}

function hideBanner(): void {
  el<HTMLDivElement>("banner").hidden = true;
}

async function refreshCandidates(): Promise<void> {
  if (view.selectedRound === null || view.summary === null) return;
  const info = view.summary.rounds.find((r) => r.index === view.selectedRound);
  if (!info || !info.scored) {
    view.rows = [];
    view.previousRows = [];
    renderTable();
    renderDiff();
    return;
  }
  const page = await client.candidates(view.selectedRound, { sort: "ei", limit: 100000 });
  view.rows = page.candidates;
  const prev = view.summary.rounds.filter((r) => r.scored && r.index < view.selectedRound!).pop();
  if (prev) {
    const prevPage = await client.candidates(prev.index, { sort: "ei", limit: 100000 });
    view.previousRows = prevPage.candidates;
  } else {
    view.previousRows = [];
  }
  renderTable();
  renderDiff();
}

async function pollTick(): Promise<void> {
  const { summary, etag } = await client.campaign(view.etag);
  view.etag = etag;
  if (summary === null) return; // 304: nothing changed
  const firstLoad = view.summary === null;
  view.summary = summary;
  if (firstLoad || view.selectedRound === null) {
    const scored = summary.rounds.filter((r) => r.scored);
    const latest = scored[scored.length - 1];
    view.selectedRound = latest ? latest.index : summary.rounds.length || null;
  }
  hideBanner();
  renderSummary();
  await refreshCandidates();
}

function renderSummary(): void {
  const s = view.summary;
  if (!s) return;
  el<HTMLSpanElement>("campaign-id").textContent = s.campaign_id;
  el<HTMLSpanElement>("campaign-version").textContent = String(s.version);
  el<HTMLSpanElement>("campaign-results").textContent = String(s.results);

  const timeline = el<HTMLDivElement>("timeline");
  timeline.replaceChildren();
  for (const round of s.rounds) {
    const chip = document.createElement("button");
    chip.className = `round-chip ${round.status}${round.index === view.selectedRound ? " selected" : ""}`;
    chip.textContent = `round ${round.index} · ${round.status}${round.tested.length ? ` · ${round.tested.length} tested` : ""}`;
    chip.addEventListener("click", () => {
      view.selectedRound = round.index;
      renderSummary();
      void refreshCandidates();
    });
    timeline.appendChild(chip);
  }

  const retrainBtn = el<HTMLButtonElement>("retrain-btn");
  const selected = s.rounds.find((r) => r.index === view.selectedRound);
  retrainBtn.disabled = view.retrainInFlight || !selected || selected.status !== "open";
  retrainBtn.textContent = view.retrainInFlight ? "retraining…" : "retrain round";
}

function visibleRows(): CandidateRow[] {
  let rows = view.rows;
  if (view.shortlistOnly && view.summary) {
    rows = shortlistView(rows, view.summary.shortlist_size);
  }
  rows = filterRows(rows, view.filter);
  return sortRows(rows, view.sort);
}

function renderTable(): void {
  const tbody = el<HTMLTableSectionElement>("candidate-rows");
  tbody.replaceChildren();
  for (const row of visibleRows()) {
    const cells = candidateCells(row);
    const tr = document.createElement("tr");
    tr.className = row.feasible ? "" : "infeasible";

    const toggle = document.createElement("button");
    toggle.className = "toggle";
    toggle.textContent = row.feasible ? "feasible" : "excluded";
    toggle.addEventListener("click", () => void onToggleFeasibility(row));

    const tdToggle = document.createElement("td");
    tdToggle.appendChild(toggle);

    for (const value of [
      cells.rank,
      cells.molecule_id,
      cells.name,
      cells.mu,
      cells.sigma,
      cells.ei,
      cells.bars,
      cells.tested ? `tested ${cells.delta_rel}` : "",
    ]) {
      const td = document.createElement("td");
      td.textContent = value;
      tr.appendChild(td);
    }
    tr.appendChild(tdToggle);
    tbody.appendChild(tr);
  }
}

function renderDiff(): void {
  const list = el<HTMLUListElement>("diff-list");
  list.replaceChildren();
  const movements = roundDiff(view.rows, view.previousRows).filter((m) => m.movement !== "same");
  el<HTMLElement>("diff-empty").hidden = movements.length > 0;
  for (const m of movements.slice(0, 50)) {
    const li = document.createElement("li");
    li.textContent = `${movementArrow(m.movement)} ${m.molecule_id} (${m.from ?? "–"} → ${m.to ?? "–"})`;
    li.className = m.movement;
    list.appendChild(li);
  }
}

async function onToggleFeasibility(row: CandidateRow): Promise<void> {
  const target = !row.feasible;
  const expectedVersion = view.summary?.version;
  view.rows = toggleFeasibility(view.rows, row.molecule_id, target); // optimistic
  renderTable();
  try {
    await client.setFeasibility(row.molecule_id, target, "", expectedVersion);
    await pollTick(); // reconcile on the version echo
  } catch (err) {
    view.rows = toggleFeasibility(view.rows, row.molecule_id, row.feasible); // revert
    renderTable();
    if (err instanceof ApiError && err.status === 409) {
      showBanner("Another reviewer changed the campaign — reloading the latest state.");
      view.etag = null;
      await pollTick();
    } else {
      showBanner(`Feasibility update failed: ${err instanceof Error ? err.message : err}`);
    }
  }
}

function setFieldError(field: string, message: string): void {
  el<HTMLSpanElement>(`err-${field}`).textContent = message;
}

function clearFieldErrors(): void {
  for (const f of ["molecule_id", "round", "pce_additive", "pce_control"]) setFieldError(f, "");
}

function readDraft() {
  return {
    molecule_id: el<HTMLInputElement>("form-molecule").value,
    round: Number(el<HTMLInputElement>("form-round").value),
    pce_additive: Number(el<HTMLInputElement>("form-additive").value),
    pce_control: Number(el<HTMLInputElement>("form-control").value),
  };
}

async function onPreview(): Promise<void> {
  const draft = readDraft();
  const preview = el<HTMLSpanElement>("delta-preview");
  const { ok } = validateDraft(draft);
  if (!ok) {
    preview.textContent = "";
    return;
  }
  try {
    const delta = await client.previewDelta(draft.pce_additive, draft.pce_control);
    preview.textContent = `${delta >= 0 ? "+" : ""}${(delta * 100).toFixed(2)}% relative`;
    preview.dataset.delta = String(delta);
  } catch {
    preview.textContent = "";
  }
}

async function onSubmitResult(event: Event): Promise<void> {
  event.preventDefault();
  clearFieldErrors();
  const draft = readDraft();
  const { ok, errors } = validateDraft(draft);
  if (!ok) {
    for (const [field, message] of Object.entries(errors)) setFieldError(field, message!);
    return; // invalid drafts never leave the client
  }
  try {
    await client.submitResult(draft);
    el<HTMLFormElement>("result-form").reset();
    el<HTMLSpanElement>("delta-preview").textContent = "";
    await pollTick();
  } catch (err) {
    if (err instanceof ApiError && err.status === 422) {
      setFieldError("pce_control", err.body.message);
    } else if (err instanceof ApiError) {
      showBanner(`Result rejected: ${err.body.message}`);
    } else {
      showBanner(`Result submission failed: ${err instanceof Error ? err.message : err}`);
    }
  }
}

async function onRetrain(): Promise<void> {
  if (view.selectedRound === null) return;
  view.retrainInFlight = true;
  renderSummary();
  try {
    const { job_id } = await client.retrain(view.selectedRound);
    const status = await client.waitForJob(job_id);
    if (status.status === "failed") {
      showBanner(`Retrain failed: ${status.error?.message ?? "unknown error"} (${status.error?.code ?? "?"})`);
    } else {
      view.etag = null;
      await pollTick();
    }
  } catch (err) {
    showBanner(`Retrain failed: ${err instanceof Error ? err.message : err}`);
  } finally {
    view.retrainInFlight = false;
    renderSummary();
  }
}

function wire(): void {
  el<HTMLButtonElement>("retrain-btn").addEventListener("click", () => void onRetrain());
  el<HTMLFormElement>("result-form").addEventListener("submit", (e) => void onSubmitResult(e));
  for (const input of ["form-additive", "form-control"]) {
    el<HTMLInputElement>(input).addEventListener("change", () => void onPreview());
  }
  el<HTMLInputElement>("filter-input").addEventListener("input", (e) => {
    view.filter = (e.target as HTMLInputElement).value;
    renderTable();
  });
  el<HTMLInputElement>("shortlist-only").addEventListener("change", (e) => {
    view.shortlistOnly = (e.target as HTMLInputElement).checked;
    renderTable();
  });
  el<HTMLSelectElement>("sort-select").addEventListener("change", (e) => {
    view.sort = (e.target as HTMLSelectElement).value as SortKey;
    renderTable();
  });

  const poller = createPoller(pollTick, POLL_INTERVAL_MS, (err) => {
    showBanner(`Service unreachable — retrying. (${err instanceof Error ? err.message : err})`);
  });
  poller.start();
}

document.addEventListener("DOMContentLoaded", wire);

/** DOM wiring for the console. All numbers on screen come from service
 * responses rendered by views.ts; this file only moves data between forms
 * and the API client. Cohort submission is never optimistic: the button
 * stays disabled until the service confirms the decision.
 */

import { ApiClient, ServiceUnavailableError, TrialTerminatedError } from "./api.js";
import {
  errorBanner,
  renderAudit,
  renderBoundariesPreview,
  renderObd,
  renderOc,
  renderOutcomes,
  renderPriorSensitivity,
  renderRecommendation,
  renderTipping,
  renderWhatIf,
  unavailable,
} from "./views.js";
import {
  buildCreateTrialBody,
  buildDesignConfig,
  buildDoseGrid,
  buildUtilitySpec,
  defaultStrategyMap,
} from "./wizard.js";
import type { EventRecord, ExportBundle, PatientRecord, StrategyMap, Strategy } from "./types.js";
import { ICE_TYPES, SURGERY_REASONS } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let client = new ApiClient("");
let currentTrial: string | null = null;
const pendingEvents: EventRecord[] = [];

function setBanner(html: string): void {
  $("banner").innerHTML = html;
}

function showError(target: string, err: unknown): void {
  if (err instanceof ServiceUnavailableError) {
    $(target).innerHTML = unavailable("this panel");
    setBanner(errorBanner("service unreachable; displays are disabled", true));
  } else if (err instanceof TrialTerminatedError) {
    setBanner(errorBanner(`trial terminated: ${err.message}`, true));
  } else {
    setBanner(errorBanner(String(err)));
  }
}

async function refreshBoundaries(): Promise<void> {
  const phi = Number(($("wiz-phi") as HTMLInputElement).value);
  try {
    const resp = await client.boundaries(phi);
    $("wiz-boundaries").innerHTML = renderBoundariesPreview(resp);
  } catch (err) {
    $("wiz-boundaries").innerHTML = renderBoundariesPreview(null);
  }
}

async function createTrial(): Promise<void> {
  try {
    const amounts = ($("wiz-doses") as HTMLInputElement).value
      .split(",")
      .map((s) => Number(s.trim()))
      .filter((x) => !Number.isNaN(x));
    const psi2 = Number(($("wiz-psi2") as HTMLInputElement).value);
    const psi3 = Number(($("wiz-psi3") as HTMLInputElement).value);
    const titrate = ($("wiz-titration") as HTMLInputElement).checked;
    const body = buildCreateTrialBody(
      ($("wiz-id") as HTMLInputElement).value || undefined,
      buildDoseGrid(amounts),
      buildDesignConfig({
        targetPhi: Number(($("wiz-phi") as HTMLInputElement).value),
        phiT: Number(($("wiz-phit") as HTMLInputElement).value),
        phiE: Number(($("wiz-phie") as HTMLInputElement).value),
        deltaT: Number(($("wiz-deltat") as HTMLInputElement).value),
        deltaE: Number(($("wiz-deltae") as HTMLInputElement).value),
        cohortSize: Number(($("wiz-cohort") as HTMLInputElement).value),
        maxN: Number(($("wiz-maxn") as HTMLInputElement).value),
        perDoseCap: Number(($("wiz-cap") as HTMLInputElement).value),
        assignmentMode: ($("wiz-mode") as HTMLSelectElement).value as never,
        titration: titrate ? { trigger_grade: 2, trigger_dose_index: 5 } : null,
      }),
      buildUtilitySpec(psi2, psi3),
    );
    const created = await client.createTrial(body);
    currentTrial = created.trial_id;
    ($("trial-id") as HTMLInputElement).value = created.trial_id;
    setBanner(errorBanner(`trial ${created.trial_id} created`));
    await refreshRecommendation();
  } catch (err) {
    showError("wiz-boundaries", err);
  }
}

function eventFromForm(): EventRecord {
  const kind = ($("ev-kind") as HTMLSelectElement).value as EventRecord["kind"];
  const day = Number(($("ev-day") as HTMLInputElement).value);
  if (kind === "assessment") {
    return { day, kind, response_grade: ($("ev-grade") as HTMLSelectElement).value as never };
  }
  if (kind === "toxicity") {
    return {
      day,
      kind,
      grade: Number(($("ev-toxgrade") as HTMLInputElement).value),
      dlt: ($("ev-dlt") as HTMLInputElement).checked,
    };
  }
  const iceType = ($("ev-ice") as HTMLSelectElement).value as EventRecord["ice_type"];
  const ev: EventRecord = { day, kind, ice_type: iceType };
  if (iceType === "surgery") {
    ev.reason = ($("ev-reason") as HTMLSelectElement).value as never;
  }
  if (iceType === "dose_switch") {
    ev.new_dose_index = Number(($("ev-newdose") as HTMLInputElement).value);
  }
  return ev;
}

function addEventToDraft(): void {
  pendingEvents.push(eventFromForm());
  pendingEvents.sort((a, b) => a.day - b.day);
  $("ev-draft").textContent = JSON.stringify(pendingEvents, null, 1);
}

function draftPatient(): PatientRecord {
  return {
    patient_id: ($("pat-id") as HTMLInputElement).value || `p${Date.now() % 100000}`,
    dose_index: Number(($("pat-dose") as HTMLInputElement).value),
    events: [...pendingEvents],
  };
}

const cohortDraft: PatientRecord[] = [];

function addPatientToCohort(): void {
  cohortDraft.push(draftPatient());
  pendingEvents.length = 0;
  $("ev-draft").textContent = "";
  $("cohort-draft").textContent = JSON.stringify(cohortDraft, null, 1);
}

async function submitCohort(): Promise<void> {
  if (!currentTrial || cohortDraft.length === 0) return;
  const button = $("cohort-submit") as HTMLButtonElement;
  button.disabled = true; // no optimistic UI: wait for the service
  try {
    const resp = await client.postCohort(currentTrial, cohortDraft);
    cohortDraft.length = 0;
    $("cohort-draft").textContent = "";
    $("cohort-outcomes").innerHTML = renderOutcomes(resp.outcomes);
    await refreshRecommendation();
    setBanner("");
  } catch (err) {
    showError("recommendation", err);
  } finally {
    button.disabled = false;
  }
}

async function refreshRecommendation(): Promise<void> {
  if (!currentTrial) return;
  try {
    const rec = await client.recommendation(currentTrial);
    $("recommendation").innerHTML = renderRecommendation(rec);
    const obd = await client.obd(currentTrial);
    $("obd").innerHTML = renderObd(obd);
  } catch (err) {
    showError("recommendation", err);
  }
}

async function runWhatIf(): Promise<void> {
  if (!currentTrial) return;
  const strategy = ($("whatif-strategy") as HTMLSelectElement).value;
  const maps: StrategyMap[] = [defaultStrategyMap()];
  if (strategy !== "default") {
    const uniform: StrategyMap = { entries: {} };
    for (const t of ICE_TYPES) {
      if (t === "surgery") {
        for (const r of SURGERY_REASONS) uniform.entries[`surgery.${r}`] = strategy as Strategy;
      } else {
        uniform.entries[t] = strategy as Strategy;
      }
    }
    maps.push(uniform);
  }
  try {
    const comparison = await client.whatIf(currentTrial, { maps });
    $("whatif-result").innerHTML = renderWhatIf(comparison);
  } catch (err) {
    showError("whatif-result", err);
  }
}

async function runTipping(): Promise<void> {
  if (!currentTrial) return;
  try {
    const report = await client.tipping(currentTrial, {
      exhaustive: ($("tip-exhaustive") as HTMLInputElement).checked,
    });
    $("tipping-result").innerHTML = renderTipping(report);
  } catch (err) {
    showError("tipping-result", err);
  }
}

async function runPrior(): Promise<void> {
  if (!currentTrial) return;
  try {
    const report = await client.priorSensitivity(currentTrial);
    $("prior-result").innerHTML = renderPriorSensitivity(report);
  } catch (err) {
    showError("prior-result", err);
  }
}

async function submitSimulation(): Promise<void> {
  try {
    const body = JSON.parse(($("sim-body") as HTMLTextAreaElement).value) as Record<string, unknown>;
    const { job_id } = await client.submitSimulation(body);
    $("sim-status").textContent = `job ${job_id} running`;
    const poll = async (): Promise<void> => {
      const status = await client.simulationStatus(job_id);
      if (status.status === "running") {
        setTimeout(() => void poll(), 1000);
        return;
      }
      if (status.status === "failed") {
        $("sim-status").textContent = `job failed: ${status.error}`;
        return;
      }
      $("sim-status").textContent = "";
      $("sim-result").innerHTML = renderOc(status.result ?? null);
    };
    void poll();
  } catch (err) {
    showError("sim-result", err);
  }
}

async function refreshAudit(): Promise<void> {
  if (!currentTrial) return;
  try {
    const { events } = await client.audit(currentTrial);
    $("audit-log").innerHTML = renderAudit(events);
  } catch (err) {
    showError("audit-log", err);
  }
}

async function exportTrial(): Promise<void> {
  if (!currentTrial) return;
  const bundle = await client.exportBundle(currentTrial);
  const blob = new Blob([JSON.stringify(bundle, null, 2)], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = `${currentTrial}.export.json`;
  a.click();
  URL.revokeObjectURL(a.href);
}

async function importTrial(file: File): Promise<void> {
  const bundle = JSON.parse(await file.text()) as ExportBundle;
  const newId = await client.importBundle(bundle);
  currentTrial = newId;
  ($("trial-id") as HTMLInputElement).value = newId;
  setBanner(errorBanner(`imported as ${newId}; recommendations replayed`));
  await refreshRecommendation();
}

export function wire(): void {
  client = new ApiClient(($("base-url") as HTMLInputElement).value);
  $("base-url").addEventListener("change", () => {
    client = new ApiClient(($("base-url") as HTMLInputElement).value);
  });
  for (const id of ["wiz-phi"]) {
    $(id).addEventListener("input", () => void refreshBoundaries());
  }
  $("wiz-create").addEventListener("click", () => void createTrial());
  $("trial-load").addEventListener("click", () => {
    currentTrial = ($("trial-id") as HTMLInputElement).value;
    void refreshRecommendation();
    void refreshAudit();
  });
  $("ev-add").addEventListener("click", addEventToDraft);
  $("pat-add").addEventListener("click", addPatientToCohort);
  $("cohort-submit").addEventListener("click", () => void submitCohort());
  $("whatif-run").addEventListener("click", () => void runWhatIf());
  $("tip-run").addEventListener("click", () => void runTipping());
  $("prior-run").addEventListener("click", () => void runPrior());
  $("sim-run").addEventListener("click", () => void submitSimulation());
  $("audit-refresh").addEventListener("click", () => void refreshAudit());
  $("export-run").addEventListener("click", () => void exportTrial());
  $("import-file").addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) void importTrial(file);
  });
  void refreshBoundaries();
}

if (typeof document !== "undefined" && document.getElementById("banner")) {
  wire();
}

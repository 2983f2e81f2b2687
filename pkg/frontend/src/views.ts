/** HTML renderers for every console panel.
 *
 * All functions are pure string producers so they can be unit-tested
 * without a DOM. Numbers are rendered with fixed decimals straight from
 * service payloads; when the service is unreachable the panels degrade to
 * a no-numbers placeholder (the console owns zero statistics).
 */

import { doseLabel, escapeHtml, fixed1, fixed4 } from "./format.js";
import type {
  AdmissibleSet,
  AuditEvent,
  BoundariesResponse,
  Decision,
  DerivedOutcome,
  ObdReport,
  OperatingCharacteristics,
  PosteriorSummary,
  PriorSensitivityReport,
  RandomizationWeights,
  Recommendation,
  TippingReport,
  WhatIfComparison,
} from "./types.js";

export function unavailable(what: string): string {
  return `<div class="unavailable">service unavailable; ${escapeHtml(what)} cannot be displayed</div>`;
}

export function errorBanner(message: string, blocking = false): string {
  const cls = blocking ? "banner blocking" : "banner";
  return `<div class="${cls}">${escapeHtml(message)}</div>`;
}

export function renderBoundariesPreview(resp: BoundariesResponse | null): string {
  if (!resp) return unavailable("interval boundaries");
  return (
    `<div class="boundaries">escalate at rate &le; <b>${fixed4(resp.lambda_e)}</b>, ` +
    `de-escalate at rate &ge; <b>${fixed4(resp.lambda_d)}</b> ` +
    `(target ${fixed4(resp.target_phi)})</div>`
  );
}

export function renderDecision(decision: Decision | null): string {
  if (!decision) return unavailable("the dosing decision");
  const dose = doseLabel(decision.next_dose);
  const size = decision.cohort_size === null ? "" : ` (cohort of ${decision.cohort_size})`;
  const reasons = decision.rationale
    .map((r) => `<li>${escapeHtml(r)}</li>`)
    .join("");
  return (
    `<div class="decision kind-${decision.kind}">` +
    `<span class="kind">${escapeHtml(decision.kind)}</span>` +
    `<span class="dose">next dose: ${dose}${size}</span>` +
    `<ul class="rationale">${reasons}</ul></div>`
  );
}

function flagBadges(flags: AdmissibleSet["flags"][number]): string {
  const badges: string[] = [];
  if (flags.untested) badges.push('<span class="flag untested">untested</span>');
  if (flags.toxic) badges.push('<span class="flag toxic">toxic</span>');
  if (flags.futile) badges.push('<span class="flag futile">futile</span>');
  if (flags.admissible) badges.push('<span class="flag admissible">admissible</span>');
  return badges.join(" ");
}

export function renderSummariesTable(
  summaries: PosteriorSummary[] | null,
  admissible: AdmissibleSet | null,
): string {
  if (!summaries || !admissible) return unavailable("posterior summaries");
  const byDose = new Map(admissible.flags.map((f) => [f.dose_index, f]));
  const rows = summaries
    .map((s) => {
      const flags = byDose.get(s.dose_index);
      return (
        `<tr><td>${s.dose_index}</td><td>${s.n}</td><td>${s.n_tox}</td>` +
        `<td>${fixed4(s.mean_utility)}</td>` +
        `<td>${fixed4(s.mean_eff)}</td><td>${fixed4(s.mean_tox)}</td>` +
        `<td>${fixed4(s.prob_toxic)}</td><td>${fixed4(s.prob_futile)}</td>` +
        `<td>${flags ? flagBadges(flags) : ""}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="summaries"><thead><tr><th>dose</th><th>n</th><th>tox</th>` +
    `<th>utility</th><th>mean eff</th><th>mean tox</th>` +
    `<th>P(toxic)</th><th>P(futile)</th><th>status</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

/** Horizontal utility bars; widths scale against the score ceiling of 100
 * so the geometry is pure presentation of service-reported values. */
export function renderUtilityBars(summaries: PosteriorSummary[] | null): string {
  if (!summaries) return unavailable("the utility chart");
  const bars = summaries
    .map((s) => {
      const width = Math.max(0, Math.min(100, s.mean_utility));
      return (
        `<div class="bar-row"><span class="bar-label">dose ${s.dose_index}</span>` +
        `<div class="bar-track"><div class="bar-fill" style="width:${width}%"></div></div>` +
        `<span class="bar-value">${fixed4(s.mean_utility)}</span></div>`
      );
    })
    .join("");
  return `<div class="utility-bars">${bars}</div>`;
}

export function renderWeights(weights: RandomizationWeights | null): string {
  if (!weights) return `<div class="weights">no admissible doses to weight</div>`;
  const cells = weights.dose_indices
    .map((d, i) => `<li>dose ${d}: ${fixed4(weights.weights[i])}</li>`)
    .join("");
  return `<ul class="weights">${cells}</ul>`;
}

export function renderRecommendation(rec: Recommendation | null): string {
  if (!rec) return unavailable("the recommendation");
  return (
    renderDecision(rec.decision) +
    renderUtilityBars(rec.summaries) +
    renderSummariesTable(rec.summaries, rec.admissible) +
    renderWeights(rec.weights)
  );
}

export function renderObd(report: ObdReport | null): string {
  if (!report) return unavailable("the selection report");
  const rationale = report.rationale.map((r) => `<li>${escapeHtml(r)}</li>`).join("");
  return (
    `<div class="obd">selected dose: <b>${doseLabel(report.obd)}</b>, ` +
    `estimated MTD: <b>${doseLabel(report.mtd)}</b><ul>${rationale}</ul></div>` +
    renderSummariesTable(report.summaries, report.admissible)
  );
}

function categoryLabel(category: number | "MISSING"): string {
  return category === "MISSING" ? "missing" : String(category);
}

export function renderOutcomes(outcomes: DerivedOutcome[] | null): string {
  if (!outcomes) return unavailable("derived outcomes");
  const rows = outcomes
    .map((o) => {
      const trace = o.strategy_trace
        .map((t) => `${t.ice_type} &rarr; ${t.strategy}: ${escapeHtml(t.effect)}`)
        .join("<br>");
      return (
        `<tr><td>${escapeHtml(o.patient_id)}</td><td>${o.dose_index}</td>` +
        `<td>${categoryLabel(o.category)}</td><td>${o.evaluable ? "yes" : "no"}</td>` +
        `<td class="trace">${trace}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="outcomes"><thead><tr><th>patient</th><th>dose</th>` +
    `<th>category</th><th>evaluable</th><th>event handling</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

export function renderWhatIf(comparison: WhatIfComparison | null): string {
  if (!comparison) return unavailable("the what-if comparison");
  const columns = comparison.columns
    .map((c) => {
      const utilities = c.mean_utilities
        .map((u, i) => `<li>dose ${i + 1}: ${fixed4(u)} (n=${c.per_dose_n[i]})</li>`)
        .join("");
      return (
        `<div class="whatif-col"><h4>${escapeHtml(c.label)}</h4>` +
        `<p class="question">${escapeHtml(c.question)}</p>` +
        `<ul>${utilities}</ul>` +
        `<p class="selection">selection: <b>${doseLabel(c.obd)}</b></p></div>`
      );
    })
    .join("");
  return `<div class="whatif">${columns}</div>`;
}

export function renderTipping(report: TippingReport | null): string {
  if (!report) return unavailable("the tipping-point scan");
  const rows = report.scan
    .map((row) => {
      const utilities = row.mean_utilities.map(fixed4).join(", ");
      return (
        `<tr><td>${row.num_flipped}</td><td>${doseLabel(row.resulting_obd)}</td>` +
        `<td>${utilities}</td></tr>`
      );
    })
    .join("");
  const tip =
    report.tipping_point === null
      ? "selection never changes within the pool"
      : `selection changes after ${report.tipping_point} flip(s)`;
  return (
    `<div class="tipping"><p>baseline selection: <b>${doseLabel(report.baseline_obd)}</b>; ${tip}; ` +
    `flippable patients: ${report.pool_patient_ids.length}</p>` +
    `<table><thead><tr><th>flips</th><th>selection</th><th>utilities</th></tr></thead>` +
    `<tbody>${rows}</tbody></table></div>`
  );
}

export function renderPriorSensitivity(report: PriorSensitivityReport | null): string {
  if (!report) return unavailable("the prior-sensitivity comparison");
  const rows = report.rows
    .map(
      (r) =>
        `<tr><td>${r.dose_index}</td><td>${r.n}</td>` +
        `<td>${fixed4(r.mean_utility_design)}</td>` +
        `<td>${fixed4(r.mean_utility_flat)}</td><td>${fixed4(r.delta)}</td></tr>`,
    )
    .join("");
  const verdict = report.obd_agrees
    ? "selection agrees under both priors"
    : "selection disagrees between priors";
  return (
    `<div class="prior-sensitivity"><p>${verdict}: design prior &rarr; ` +
    `<b>${doseLabel(report.obd_design_prior)}</b>, flat prior &rarr; ` +
    `<b>${doseLabel(report.obd_flat_prior)}</b></p>` +
    `<table><thead><tr><th>dose</th><th>n</th><th>design prior</th>` +
    `<th>flat prior</th><th>delta</th></tr></thead><tbody>${rows}</tbody></table></div>`
  );
}

export function renderOc(oc: OperatingCharacteristics | null): string {
  if (!oc) return unavailable("operating characteristics");
  const doses = Object.keys(oc.obd_selection_pct)
    .filter((k) => k !== "none")
    .sort((a, b) => Number(a) - Number(b));
  const rows = doses
    .map(
      (d, i) =>
        `<tr><td>${d}</td><td>${fixed1(oc.obd_selection_pct[d])}</td>` +
        `<td>${fixed1(oc.mean_patients[i])}</td></tr>`,
    )
    .join("");
  return (
    `<div class="oc"><p>${escapeHtml(oc.scenario_name)} &middot; ${oc.design} &middot; ` +
    `${oc.reps} replications (seed ${oc.master_seed}, ${escapeHtml(oc.rng_algorithm)})</p>` +
    `<table><thead><tr><th>dose</th><th>selection %</th><th>mean patients</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<p>no selection: ${fixed1(oc.obd_selection_pct["none"])}%, ` +
    `mean total n: ${fixed1(oc.mean_total_n)}, ` +
    `safety stops: ${fixed1(oc.early_termination_pct)}%, ` +
    `mean DLT count: ${fixed1(oc.mean_dlt_count)}</p></div>`
  );
}

export function renderAudit(events: AuditEvent[] | null): string {
  if (!events) return unavailable("the audit log");
  const rows = events
    .map((e) => {
      const detail =
        e.kind === "decision_issued"
          ? escapeHtml((e.decision as Decision).kind)
          : e.kind === "cohort_entered"
            ? `${(e.records as unknown[]).length} patient(s)`
            : e.kind === "note"
              ? escapeHtml(String(e.text ?? ""))
              : "";
      return (
        `<tr><td>${e.seq}</td><td>${escapeHtml(e.at)}</td>` +
        `<td>${escapeHtml(e.kind)}</td><td>${detail}</td></tr>`
      );
    })
    .join("");
  return (
    `<table class="audit"><thead><tr><th>#</th><th>at</th><th>event</th><th>detail</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

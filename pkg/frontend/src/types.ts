/** Mirrors of the v1 JSON payloads served by the obdkit HTTP API.
 *
 * Field names and shapes match the service exactly so documents round-trip
 * through the console unchanged.
 */

export interface OutcomeCategory {
  efficacy_flag: 0 | 1;
  toxicity_flag: 0 | 1;
  psi: number;
}

export interface UtilitySpec {
  schema_version: "v1";
  K: number;
  categories: OutcomeCategory[];
}

export interface DoseLevel {
  index: number;
  label: string;
  amount: number;
  unit: string;
}

export interface DoseGrid {
  schema_version: "v1";
  doses: DoseLevel[];
}

export interface TitrationRule {
  trigger_grade: number;
  trigger_dose_index: number;
}

export type AssignmentMode =
  | "deterministic"
  | "adaptive_randomization"
  | "equal_randomization";

export interface DesignConfig {
  schema_version: "v1";
  prior_alpha: number[];
  target_phi: number;
  phi_t: number;
  phi_e: number;
  delta_t: number;
  delta_e: number;
  lambda_e: number | null;
  lambda_d: number | null;
  cohort_size: number;
  max_n: number;
  per_dose_cap: number;
  assignment_mode: AssignmentMode;
  accelerated_titration: TitrationRule | null;
  futility_tail: "lower" | "upper";
}

export type ResponseGrade = "CR" | "PR" | "SD" | "PD" | "NE";

export const ICE_TYPES = [
  "tox_discontinuation",
  "death",
  "additional_therapy",
  "progression_discontinuation",
  "ada_occurrence",
  "dose_switch",
  "surgery",
  "nonadherence",
  "symptomatic_deterioration",
] as const;

export type IceType = (typeof ICE_TYPES)[number];

export const SURGERY_REASONS = [
  "clinician_choice",
  "tumor_shrinkage",
  "external_factors",
] as const;

export interface EventRecord {
  day: number;
  kind: "assessment" | "toxicity" | "ice";
  response_grade?: ResponseGrade;
  grade?: number;
  dlt?: boolean;
  ice_type?: IceType;
  new_dose_index?: number;
  reason?: (typeof SURGERY_REASONS)[number];
}

export interface PatientRecord {
  patient_id: string;
  dose_index: number;
  first_dose_day?: number;
  stratum_label?: string | null;
  baseline_ok?: boolean;
  events: EventRecord[];
}

export type Strategy =
  | "treatment_policy"
  | "composite"
  | "hypothetical"
  | "while_on_treatment"
  | "principal_stratum";

export interface StrategyMap {
  schema_version?: "v1";
  entries: Record<string, Strategy | { strategy: Strategy; favorable?: boolean }>;
  efficacy_success_grades?: string[];
  dlt_window_days?: number;
  declared_stratum?: string | null;
  attribute_to_switched_dose?: boolean;
}

export interface Decision {
  kind: "escalate" | "stay" | "de_escalate" | "eliminate_and_de_escalate" | "terminate";
  next_dose: number | null;
  rationale: string[];
  cohort_size: number | null;
}

export interface PosteriorSummary {
  dose_index: number;
  mean_utility: number;
  mean_tox: number;
  mean_eff: number;
  prob_toxic: number;
  prob_futile: number;
  n: number;
  n_tox: number;
}

export interface DoseFlags {
  dose_index: number;
  toxic: boolean;
  futile: boolean;
  untested: boolean;
  admissible: boolean;
}

export interface AdmissibleSet {
  dose_indices: number[];
  flags: DoseFlags[];
}

export interface RandomizationWeights {
  dose_indices: number[];
  weights: number[];
}

export interface DerivedOutcome {
  patient_id: string;
  dose_index: number;
  category: number | "MISSING";
  evaluable: boolean;
  strategy_trace: { ice_type: string; strategy: string; effect: string }[];
  sensitivity_flag: boolean;
}

export interface Recommendation {
  trial_id: string;
  decision: Decision;
  summaries: PosteriorSummary[];
  admissible: AdmissibleSet;
  weights: RandomizationWeights | null;
  terminated: boolean;
}

export interface CohortResponse {
  outcomes: DerivedOutcome[];
  decision: Decision;
  enrolled: number;
  terminated: boolean;
}

export interface DoseStateDoc {
  dose_index: number;
  counts: number[];
  n_enrolled: number;
}

export interface StateDocument {
  schema_version: "v1";
  trial_id: string;
  config: DesignConfig;
  utility: UtilitySpec;
  grid: DoseGrid;
  strategy_map: StrategyMap;
  current_dose: number;
  last_cohort_dose: number | null;
  enrolled: number;
  terminated: boolean;
  termination_reason: string | null;
  titration_active: boolean;
  dose_states: DoseStateDoc[];
  last_decision: Decision | null;
  records: PatientRecord[];
}

export interface ObdReport {
  trial_id: string;
  obd: number | null;
  mtd: number | null;
  rationale: string[];
  summaries: PosteriorSummary[];
  admissible: AdmissibleSet;
}

export interface AuditEvent {
  seq: number;
  kind: string;
  at: string;
  [key: string]: unknown;
}

export interface WhatIfColumn {
  label: string;
  question: string;
  per_dose_n: number[];
  mean_utilities: number[];
  obd: number | null;
  outcomes: DerivedOutcome[];
}

export interface WhatIfComparison {
  columns: WhatIfColumn[];
}

export interface TippingRow {
  num_flipped: number;
  flip_target: number;
  resulting_obd: number | null;
  mean_utilities: number[];
}

export interface TippingReport {
  baseline_obd: number | null;
  flip_target: number;
  pool_patient_ids: string[];
  scan: TippingRow[];
  tipping_point: number | null;
  exhaustive_tipping_point?: number | null;
}

export interface PriorSensitivityReport {
  rows: {
    dose_index: number;
    n: number;
    mean_utility_design: number;
    mean_utility_flat: number;
    delta: number;
  }[];
  obd_design_prior: number | null;
  obd_flat_prior: number | null;
  obd_agrees: boolean;
}

export interface OperatingCharacteristics {
  schema_version: "v1";
  rng_algorithm: string;
  reps: number;
  master_seed: number;
  design: string;
  scenario_name: string;
  obd_selection_pct: Record<string, number>;
  correct_selection_pct: number;
  mean_patients: number[];
  mean_total_n: number;
  early_termination_pct: number;
  mean_dlt_count: number;
}

export interface SimulationJob {
  job_id: string;
  status: "running" | "done" | "failed";
  result?: OperatingCharacteristics;
  error?: string;
}

export interface BoundariesResponse {
  target_phi: number;
  lambda_e: number;
  lambda_d: number;
}

/** Export bundle: the state document plus the audit log it folds from. */
export interface ExportBundle {
  state: StateDocument;
  events: AuditEvent[];
}

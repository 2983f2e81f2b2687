/** Design-wizard payload builders.
 *
 * These assemble v1 documents from form inputs. The two utility anchors are
 * fixed at 0 and 100 by construction; only the middle scores are elicited.
 * Validation here is structural (fields present, amounts increasing); every
 * statistical check stays on the service.
 */

import type {
  AssignmentMode,
  DesignConfig,
  DoseGrid,
  StrategyMap,
  TitrationRule,
  UtilitySpec,
} from "./types.js";
import type { CreateTrialBody } from "./api.js";

export function buildUtilitySpec(psi2: number, psi3: number): UtilitySpec {
  if (!(psi2 >= 0 && psi2 <= 100) || !(psi3 >= 0 && psi3 <= 100)) {
    throw new Error("elicited scores must lie between the anchors 0 and 100");
  }
  return {
    schema_version: "v1",
    K: 4,
    categories: [
      { efficacy_flag: 0, toxicity_flag: 1, psi: 0 },
      { efficacy_flag: 0, toxicity_flag: 0, psi: psi2 },
      { efficacy_flag: 1, toxicity_flag: 1, psi: psi3 },
      { efficacy_flag: 1, toxicity_flag: 0, psi: 100 },
    ],
  };
}

export function buildDoseGrid(amounts: number[], unit = "mg"): DoseGrid {
  if (amounts.length === 0) throw new Error("at least one dose level is required");
  for (let i = 1; i < amounts.length; i++) {
    if (!(amounts[i] > amounts[i - 1])) {
      throw new Error("dose amounts must be strictly increasing");
    }
  }
  return {
    schema_version: "v1",
    doses: amounts.map((a, i) => ({
      index: i + 1,
      label: `${a} ${unit}`,
      amount: a,
      unit,
    })),
  };
}

export interface WizardConfigInputs {
  targetPhi: number;
  phiT: number;
  phiE: number;
  deltaT: number;
  deltaE: number;
  cohortSize: number;
  maxN: number;
  perDoseCap: number;
  assignmentMode: AssignmentMode;
  titration: TitrationRule | null;
}

export function buildDesignConfig(inputs: WizardConfigInputs): DesignConfig {
  return {
    schema_version: "v1",
    prior_alpha: [0.25, 0.25, 0.25, 0.25],
    target_phi: inputs.targetPhi,
    phi_t: inputs.phiT,
    phi_e: inputs.phiE,
    delta_t: inputs.deltaT,
    delta_e: inputs.deltaE,
    lambda_e: null,
    lambda_d: null,
    cohort_size: inputs.cohortSize,
    max_n: inputs.maxN,
    per_dose_cap: inputs.perDoseCap,
    assignment_mode: inputs.assignmentMode,
    accelerated_titration: inputs.titration,
    futility_tail: "lower",
  };
}

/** The case-study default event-handling map, as served by the backend. */
export function defaultStrategyMap(): StrategyMap {
  return {
    schema_version: "v1",
    entries: {
      tox_discontinuation: "composite",
      death: "composite",
      additional_therapy: "while_on_treatment",
      progression_discontinuation: "composite",
      ada_occurrence: "treatment_policy",
      dose_switch: "treatment_policy",
      "surgery.clinician_choice": "while_on_treatment",
      "surgery.tumor_shrinkage": { strategy: "composite", favorable: true },
      "surgery.external_factors": "hypothetical",
      nonadherence: "treatment_policy",
      symptomatic_deterioration: "hypothetical",
    },
    efficacy_success_grades: ["CR", "PR"],
    dlt_window_days: 28,
    declared_stratum: null,
    attribute_to_switched_dose: false,
  };
}

export function buildCreateTrialBody(
  trialId: string | undefined,
  grid: DoseGrid,
  config: DesignConfig,
  utility: UtilitySpec,
  map?: StrategyMap,
): CreateTrialBody {
  return {
    ...(trialId ? { trial_id: trialId } : {}),
    config,
    utility,
    grid,
    strategy_map: map ?? defaultStrategyMap(),
  };
}

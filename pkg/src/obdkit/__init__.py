"""Utility-based seamless phase I/II dose optimization.

Engine, simulator, sensitivity analyses and a live-conduct service for
trials that select an optimal biological dose from joint efficacy/toxicity
utilities, with configurable handling of intercurrent events.
"""

from .core import (
    DesignConfig,
    DerivedOutcome,
    DoseGrid,
    DoseLevel,
    DoseState,
    OutcomeCategory,
    TitrationRule,
    UtilitySpec,
    classify_outcome,
    record_outcomes,
    states_from_outcomes,
    validate_utility_spec,
)
from .betainc import regularized_incomplete_beta
from .posterior import (
    DirichletPosterior,
    PosteriorSummary,
    QbbPosterior,
    dirichlet_posterior,
    haldane_sensitivity,
    marginal_utility,
    mean_utility,
    prob_eff_below,
    prob_tox_exceeds,
    qbb_posterior,
    summarize,
    theorem1_psi,
)
from .decisions import (
    AdmissibleSet,
    Decision,
    RandomizationWeights,
    admissible_set,
    boin_boundaries,
    boin_toxicity_decision,
    decision_table,
    estimate_mtd,
    isotonic_tox_estimates,
    next_dose,
    randomization_weights,
    select_obd,
    snapshot,
)
from .estimand import (
    Event,
    PatientRecord,
    StrategyEntry,
    StrategyMap,
    build_analysis_set,
    compare_strategies,
    default_strategy_map,
    derive_outcome,
    uniform_strategy_map,
)
from .simulator import (
    OperatingCharacteristics,
    Scenario,
    TrialResult,
    joint_outcome_table,
    operating_characteristics,
    run_trial,
    simulate_patient,
)
from .sensitivity import TippingReport, prior_sensitivity, strategy_sensitivity, tipping_scan

__version__ = "0.1.0"

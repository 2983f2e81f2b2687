"""Exact Bayesian machinery for the multinomial outcome model.

Outcome categories at a dose follow a multinomial whose probability vector
carries a Dirichlet prior, so the posterior is again Dirichlet with the
counts added to the prior. Everything downstream is available in closed
form: the posterior mean utility is linear in the probabilities, marginal
efficacy/toxicity probabilities are Beta by aggregation, and their tail
probabilities reduce to the regularized incomplete beta function. No
sampling is involved anywhere, which makes protocol tables reproducible
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .betainc import regularized_incomplete_beta
from .core import (
    DesignConfig,
    DimensionMismatch,
    DomainError,
    DoseState,
    EmptyDose,
    NonPositivePrior,
    OutcomeCategory,
    UnanchoredUtility,
    UtilitySpec,
)


@dataclass(frozen=True)
class DirichletPosterior:
    """Posterior concentration vector: prior components plus observed counts."""

    alpha_post: tuple[float, ...]

    @property
    def total(self) -> float:
        return sum(self.alpha_post)

    @property
    def K(self) -> int:
        return len(self.alpha_post)


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-dose quantities the decision rules consume.

    ``n`` and ``n_tox`` are the evaluable count and the observed count in
    toxicity-flagged categories; the interval rule runs on their ratio.
    """

    dose_index: int
    mean_utility: float
    mean_tox: float
    mean_eff: float
    prob_toxic: float
    prob_futile: float
    n: int
    n_tox: int = 0

    def to_dict(self) -> dict:
        return {
            "dose_index": self.dose_index,
            "mean_utility": self.mean_utility,
            "mean_tox": self.mean_tox,
            "mean_eff": self.mean_eff,
            "prob_toxic": self.prob_toxic,
            "prob_futile": self.prob_futile,
            "n": self.n,
            "n_tox": self.n_tox,
        }


@dataclass(frozen=True)
class QbbPosterior:
    """Beta posterior of the standardized utility (quasi-beta-binomial form).

    Counts are collapsed to pseudo-events x = sum_k n_k * psi_k / 100; the
    resulting Beta(alpha, beta) has mean equal to the mean utility / 100,
    exactly, so desirability bookkeeping reduces to beta-binomial updates.
    """

    alpha: float
    beta: float
    pseudo_events: float

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


def dirichlet_posterior(state: DoseState, prior: Sequence[float]) -> DirichletPosterior:
    """Conjugate update: add observed category counts to the prior."""
    if any(a <= 0 for a in prior):
        raise NonPositivePrior(f"prior components must be positive, got {tuple(prior)}")
    if len(prior) != len(state.counts):
        raise DimensionMismatch(
            f"prior has {len(prior)} components, state has {len(state.counts)} categories"
        )
    return DirichletPosterior(tuple(a + n for a, n in zip(prior, state.counts)))


def mean_utility(post: DirichletPosterior, spec: UtilitySpec) -> float:
    """Posterior mean of the score-weighted outcome probabilities.

    Linear in the probability vector, so the plug-in of posterior means is
    the exact posterior expectation: sum_k psi_k * alpha_k / sum_k alpha_k.
    """
    if post.K != spec.K:
        raise DimensionMismatch(f"posterior K={post.K} but spec K={spec.K}")
    return sum(p * a for p, a in zip(spec.psi, post.alpha_post)) / post.total


def marginal_utility(mean_eff: float, mean_tox: float, w: float) -> float:
    """Trade-off form: efficacy probability minus w times toxicity probability."""
    if w < 0:
        raise DomainError(f"weight must be non-negative, got {w}")
    return mean_eff - w * mean_tox


def theorem1_psi(w: float) -> UtilitySpec:
    """Score vector under which the mean utility ranks doses exactly like the
    efficacy-minus-w-times-toxicity trade-off.

    The trade-off assigns (-w, 0, 1-w, 1) to the four joint outcomes; the
    affine rescale of that vector onto [0, 100] is (0, 100w/(1+w),
    100/(1+w), 100), and affine maps preserve the argmax.
    """
    if w < 0:
        raise DomainError(f"weight must be non-negative, got {w}")
    return UtilitySpec(
        (
            OutcomeCategory(0, 1, 0.0),
            OutcomeCategory(0, 0, 100.0 * w / (1.0 + w)),
            OutcomeCategory(1, 1, 100.0 / (1.0 + w)),
            OutcomeCategory(1, 0, 100.0),
        )
    )


def _marginal_beta(post: DirichletPosterior, flags: Sequence[int]) -> tuple[float, float]:
    """Aggregate flagged components: the flagged-mass marginal is Beta(A1, A-A1)."""
    a1 = sum(a for a, f in zip(post.alpha_post, flags) if f)
    a0 = post.total - a1
    return a1, a0


def prob_tox_exceeds(post: DirichletPosterior, spec: UtilitySpec, phi_t: float) -> float:
    """Posterior probability that the marginal toxicity rate exceeds phi_t."""
    if not (0.0 <= phi_t <= 1.0):
        raise DomainError(f"phi_t must lie in [0, 1], got {phi_t}")
    a1, a0 = _marginal_beta(post, spec.toxicity_flags)
    return 1.0 - regularized_incomplete_beta(phi_t, a1, a0)


def prob_eff_below(post: DirichletPosterior, spec: UtilitySpec, phi_e: float) -> float:
    """Posterior probability that the marginal efficacy rate falls below phi_e."""
    if not (0.0 <= phi_e <= 1.0):
        raise DomainError(f"phi_e must lie in [0, 1], got {phi_e}")
    a1, a0 = _marginal_beta(post, spec.efficacy_flags)
    return regularized_incomplete_beta(phi_e, a1, a0)


def qbb_posterior(state: DoseState, spec: UtilitySpec, prior: Sequence[float]) -> QbbPosterior:
    """Collapse the Dirichlet update to a Beta on the standardized utility.

    Requires scores anchored so max is 100 and min is 0; the standardization
    divides by 100 and anything else would silently rescale the posterior.
    """
    if min(spec.psi) != 0.0 or max(spec.psi) != 100.0:
        raise UnanchoredUtility(
            f"scores must span [0, 100], got [{min(spec.psi)}, {max(spec.psi)}]"
        )
    if any(a <= 0 for a in prior):
        raise NonPositivePrior(f"prior components must be positive, got {tuple(prior)}")
    if len(prior) != spec.K or len(state.counts) != spec.K:
        raise DimensionMismatch("prior, state, and spec must agree on K")
    x = sum(n * p / 100.0 for n, p in zip(state.counts, spec.psi))
    alpha0 = sum(a * p / 100.0 for a, p in zip(prior, spec.psi))
    beta0 = sum(prior) - alpha0
    return QbbPosterior(alpha=alpha0 + x, beta=beta0 + state.n - x, pseudo_events=x)


def summarize(
    state: DoseState,
    spec: UtilitySpec,
    config: DesignConfig,
    prior: Optional[Sequence[float]] = None,
) -> PosteriorSummary:
    """All per-dose posterior quantities in one pass."""
    prior = config.prior_alpha if prior is None else tuple(prior)
    post = dirichlet_posterior(state, prior)
    at, a0t = _marginal_beta(post, spec.toxicity_flags)
    ae, a0e = _marginal_beta(post, spec.efficacy_flags)
    return PosteriorSummary(
        dose_index=state.dose_index,
        mean_utility=mean_utility(post, spec),
        mean_tox=at / post.total,
        mean_eff=ae / post.total,
        prob_toxic=prob_tox_exceeds(post, spec, config.phi_t),
        prob_futile=prob_eff_below(post, spec, config.phi_e),
        n=state.n,
        n_tox=state.n_flagged(spec.toxicity_flags),
    )


def haldane_sensitivity(
    state: DoseState,
    spec: UtilitySpec,
    config: DesignConfig,
    epsilon: float = 1e-6,
) -> PosteriorSummary:
    """Summary under a near-improper prior (every component = epsilon).

    Approximates the limit of vanishing prior mass, against which the design
    prior's summary can be compared for prior-sensitivity review. Undefined
    without data, hence the guard.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if state.n == 0:
        raise EmptyDose(f"dose {state.dose_index} has no evaluable outcomes")
    return summarize(state, spec, config, prior=(epsilon,) * spec.K)

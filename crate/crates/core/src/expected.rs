//! Monte Carlo estimation of maximum expected utility and expected cost.
//!
//! For a deterministic plan r the estimator averages, over outer draws
//! θ' ~ p(θ | x₀*), the inner maximum of the posterior expected utility after
//! simulating x₁* ~ p(· | θ', r, x₀*). Random designs average plan values by
//! their probabilities, or over sampled plans when the support is too large
//! to enumerate.
//!
//! Outer draw `i` always uses child stream `i` of a seed derived from
//! `MCConfig::seed`, and results are reduced in draw order, so an estimate
//! is reproducible bit for bit regardless of the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostModel};
use crate::dataset::Dataset;
use crate::design::{design_support, sample_plan, Design, DEFAULT_SUPPORT_LIMIT};
use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::inference::{
    self, expected_information, observed_information, point_estimate, posterior, InformationMatrix, Posterior,
    PosteriorMethod, DEFAULT_PARTICLES,
};
use crate::models::{sample_prior, simulate_data_given, ModelSpec, ParameterDraw};
use crate::plan::MeasurementPlan;
use crate::seed::{child_rng, derive_seed, tag, OdosRng};
use crate::utility::{
    a_optimality_utility, d_optimality_utility, neg_posterior_variance, optimal_decision, UtilitySpec,
};

fn default_plan_samples() -> usize {
    100
}

fn default_support_limit() -> usize {
    DEFAULT_SUPPORT_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCConfig {
    pub outer_draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub posterior_method: PosteriorMethod,
    #[serde(default = "default_plan_samples")]
    pub plan_samples: usize,
    #[serde(default = "default_support_limit")]
    pub support_limit: usize,
}

impl MCConfig {
    pub fn new(outer_draws: usize, seed: u64) -> Self {
        Self {
            outer_draws,
            seed,
            posterior_method: PosteriorMethod::ExactIfAvailable,
            plan_samples: default_plan_samples(),
            support_limit: default_support_limit(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_draws == 0 {
            return Err(OdosError::Validation("outer_draws must be at least 1".into()));
        }
        if self.plan_samples == 0 {
            return Err(OdosError::Validation("plan_samples must be at least 1".into()));
        }
        if let PosteriorMethod::Importance { n_particles } = self.posterior_method {
            if n_particles < inference::MIN_PARTICLES {
                return Err(OdosError::Validation(format!(
                    "importance sampling needs at least {} particles",
                    inference::MIN_PARTICLES
                )));
            }
        }
        Ok(())
    }

    fn outer_rng(&self, draw: usize) -> OdosRng {
        child_rng(derive_seed(self.seed, tag::OUTER, 0), draw as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl UtilityEstimate {
    pub fn exact(mean: f64) -> Self {
        Self {
            mean,
            std_error: 0.0,
            n_samples: 1,
        }
    }

    /// Sample mean and its standard error; identical samples give their value exactly.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "no samples");
        if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
            return Self {
                mean: values[0],
                std_error: 0.0,
                n_samples: n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if !mean.is_finite() || n == 1 {
            return Self {
                mean,
                std_error: 0.0,
                n_samples: n,
            };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// The fixed inputs of a design problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub frame: &'a StudyFrame,
    pub model: &'a ModelSpec,
    pub prior_data: &'a Dataset,
}

impl<'a> Problem<'a> {
    pub fn new(frame: &'a StudyFrame, model: &'a ModelSpec, prior_data: &'a Dataset) -> Self {
        Self {
            frame,
            model,
            prior_data,
        }
    }
}

/// Sampler for θ' ~ p(θ | x₀*).
pub(crate) enum CurrentKnowledge {
    Prior,
    Posterior(Posterior),
}

impl CurrentKnowledge {
    pub(crate) fn build(problem: &Problem<'_>, cfg: &MCConfig) -> Result<Self> {
        let has_data = problem.prior_data.observed_count() > 0;
        if !has_data && !problem.model.is_conjugate() {
            return Ok(CurrentKnowledge::Prior);
        }
        let mut rng = child_rng(derive_seed(cfg.seed, tag::PRIOR_POSTERIOR, 0), 0);
        let method = match (cfg.posterior_method, problem.model.is_conjugate()) {
            (PosteriorMethod::ExactIfAvailable, false) => PosteriorMethod::Importance {
                n_particles: DEFAULT_PARTICLES,
            },
            (m, _) => m,
        };
        if !has_data && matches!(method, PosteriorMethod::Importance { .. }) {
            return Ok(CurrentKnowledge::Prior);
        }
        Ok(CurrentKnowledge::Posterior(posterior(
            problem.model,
            problem.frame,
            problem.prior_data,
            method,
            &mut rng,
        )?))
    }

    pub(crate) fn draw(&self, model: &ModelSpec, rng: &mut OdosRng) -> Result<ParameterDraw> {
        match self {
            CurrentKnowledge::Prior => Ok(sample_prior(model, rng)),
            CurrentKnowledge::Posterior(p) => p.sample(model, rng),
        }
    }
}

/// Posterior after x₀* with no new data, p(θ | x₀*).
pub fn current_posterior(problem: &Problem<'_>, cfg: &MCConfig) -> Result<Posterior> {
    match CurrentKnowledge::build(problem, cfg)? {
        CurrentKnowledge::Posterior(p) => Ok(p),
        CurrentKnowledge::Prior => {
            // non-conjugate prior: represent by equally weighted prior draws
            let n = match cfg.posterior_method {
                PosteriorMethod::Importance { n_particles } => n_particles,
                PosteriorMethod::ExactIfAvailable => DEFAULT_PARTICLES,
            };
            let mut rng = child_rng(derive_seed(cfg.seed, tag::PRIOR_POSTERIOR, 0), 0);
            inference::importance_posterior(problem.model, problem.frame, &Dataset::empty(), n, &mut rng)
        }
    }
}

/// Runs `per_draw` for every outer draw in parallel and returns the values in draw order.
pub(crate) fn map_outer<T, F>(cfg: &MCConfig, per_draw: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut OdosRng) -> Result<T> + Sync,
{
    (0..cfg.outer_draws)
        .into_par_iter()
        .map(|i| per_draw(&mut cfg.outer_rng(i)))
        .collect()
}

/// Posterior p(θ | x₁*, x₀*) for one outer draw, or `None` when the utility never needs it.
pub(crate) fn updated_posterior(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    theta: &ParameterDraw,
    cfg: &MCConfig,
    rng: &mut OdosRng,
) -> Result<Posterior> {
    let new = simulate_data_given(problem.model, problem.frame, theta, plan, problem.prior_data, rng)?;
    let all = problem.prior_data.merged(&new)?;
    posterior(problem.model, problem.frame, &all, cfg.posterior_method, rng)
}

fn information_pair(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    theta: &ParameterDraw,
) -> Result<(InformationMatrix, InformationMatrix)> {
    Ok((
        expected_information(problem.model, problem.frame, plan, theta)?,
        observed_information(problem.model, problem.frame, problem.prior_data, theta)?,
    ))
}

fn check_inputs(problem: &Problem<'_>, plan: &MeasurementPlan, utility: &UtilitySpec, cfg: &MCConfig) -> Result<()> {
    cfg.validate()?;
    problem.model.check_plan(plan, problem.frame)?;
    utility.validate(problem.model.param_dim())
}

/// Ū(r, x₀*) for a deterministic plan.
pub fn expected_utility_plan(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<UtilityEstimate> {
    check_inputs(problem, plan, utility, cfg)?;
    if let UtilitySpec::Constant { value } = utility {
        return Ok(UtilityEstimate {
            mean: *value,
            std_error: 0.0,
            n_samples: cfg.outer_draws,
        });
    }
    let current = CurrentKnowledge::build(problem, cfg)?;
    let values = map_outer(cfg, |rng| {
        let theta = current.draw(problem.model, rng)?;
        match utility {
            UtilitySpec::DOptimality => {
                let (new, obs) = information_pair(problem, plan, &theta)?;
                d_optimality_utility(&new, &obs)
            }
            UtilitySpec::AOptimality => {
                let (new, obs) = information_pair(problem, plan, &theta)?;
                a_optimality_utility(&new, &obs)
            }
            UtilitySpec::NegPosteriorVariance { target } => {
                let post = updated_posterior(problem, plan, &theta, cfg, rng)?;
                neg_posterior_variance(&post, target)
            }
            UtilitySpec::DecisionQuadratic { .. } | UtilitySpec::DecisionTable { .. } => {
                let post = updated_posterior(problem, plan, &theta, cfg, rng)?;
                Ok(optimal_decision(&post, utility)?.1)
            }
            UtilitySpec::Constant { .. } => unreachable!("handled above"),
        }
    })?;
    Ok(UtilityEstimate::from_samples(&values))
}

/// Ū(η, x₀*) for a possibly random design.
pub fn expected_utility_design(
    problem: &Problem<'_>,
    design: &Design,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<UtilityEstimate> {
    design.validate(problem.frame)?;
    if let Design::Deterministic(plan) = design {
        return expected_utility_plan(problem, plan, utility, cfg);
    }
    match design_support(design, cfg.support_limit) {
        Ok(support) => {
            // Plans share the outer seed, so their errors are positively
            // correlated; Σ p·se bounds the standard error of the mixture.
            let mut mean = 0.0;
            let mut se = 0.0;
            let mut n_samples = 0;
            for (plan, p) in &support {
                let est = expected_utility_plan(problem, plan, utility, cfg)?;
                mean += p * est.mean;
                se += p * est.std_error;
                n_samples += est.n_samples;
            }
            Ok(UtilityEstimate {
                mean,
                std_error: se,
                n_samples,
            })
        }
        Err(OdosError::SupportTooLarge { .. }) => sampled_design_utility(problem, design, utility, cfg),
        Err(e) => Err(e),
    }
}

/// Two-stage estimator over `cfg.plan_samples` sampled plans, each with its own seed.
///
/// With independent per-plan seeds the spread of the per-plan estimates
/// contains both the between-plan and the within-plan variance, so its
/// standard error is the total-variance standard error of the average.
pub fn sampled_design_utility(
    problem: &Problem<'_>,
    design: &Design,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<UtilityEstimate> {
    cfg.validate()?;
    let plan_seed = derive_seed(cfg.seed, tag::PLAN_SAMPLES, 0);
    let mut means = Vec::with_capacity(cfg.plan_samples);
    let mut within = Vec::with_capacity(cfg.plan_samples);
    let mut n_samples = 0;
    for s in 0..cfg.plan_samples {
        let mut rng = child_rng(plan_seed, s as u64);
        let plan = sample_plan(design, &mut rng);
        let est = expected_utility_plan(problem, &plan, utility, &cfg.with_seed(derive_seed(cfg.seed, tag::PLAN_SAMPLES, s as u64 + 1)))?;
        means.push(est.mean);
        within.push(est.std_error);
        n_samples += est.n_samples;
    }
    let mut est = UtilityEstimate::from_samples(&means);
    if means.len() == 1 {
        est.std_error = within[0];
    }
    est.n_samples = n_samples;
    Ok(est)
}

/// C̄(η, x₀*) for plan-only cost models.
pub fn expected_cost(design: &Design, cost: &CostModel, frame: &StudyFrame, cfg: &MCConfig) -> Result<UtilityEstimate> {
    design.validate(frame)?;
    cost.validate()?;
    match design_support(design, cfg.support_limit) {
        Ok(support) => {
            let mut total = 0.0;
            for (plan, p) in &support {
                total += p * plan_cost(plan, cost, frame)?;
            }
            Ok(UtilityEstimate::exact(total))
        }
        Err(OdosError::SupportTooLarge { .. }) => {
            let mut rng = child_rng(derive_seed(cfg.seed, tag::PLAN_SAMPLES, 0), 0);
            let costs = (0..cfg.plan_samples)
                .map(|_| plan_cost(&sample_plan(design, &mut rng), cost, frame))
                .collect::<Result<Vec<_>>>()?;
            Ok(UtilityEstimate::from_samples(&costs))
        }
        Err(e) => Err(e),
    }
}

/// Plug-in expected utility: data simulated at θ̂₀ and utilities evaluated at θ̂(x₁*, x₀*).
///
/// Decision utilities treat θ̂ as a point-mass posterior. The posterior-variance
/// utility uses the inverse total information at θ̂ as the estimator's variance.
pub fn frequentist_expected_utility(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    utility: &UtilitySpec,
    theta_hat0: &ParameterDraw,
    cfg: &MCConfig,
) -> Result<UtilityEstimate> {
    check_inputs(problem, plan, utility, cfg)?;
    problem.model.check_draw(theta_hat0)?;
    if let UtilitySpec::Constant { value } = utility {
        return Ok(UtilityEstimate {
            mean: *value,
            std_error: 0.0,
            n_samples: cfg.outer_draws,
        });
    }
    let values = map_outer(cfg, |rng| {
        let new = simulate_data_given(problem.model, problem.frame, theta_hat0, plan, problem.prior_data, rng)?;
        let all = problem.prior_data.merged(&new)?;
        let theta = point_estimate(problem.model, problem.frame, &all, theta_hat0)?;
        match utility {
            UtilitySpec::DOptimality => {
                let (new, obs) = information_pair(problem, plan, &theta)?;
                d_optimality_utility(&new, &obs)
            }
            UtilitySpec::AOptimality => {
                let (new, obs) = information_pair(problem, plan, &theta)?;
                a_optimality_utility(&new, &obs)
            }
            UtilitySpec::NegPosteriorVariance { target } => {
                let (new, obs) = information_pair(problem, plan, &theta)?;
                let q = new.dim();
                let total = new.matrix + obs.matrix
                    + nalgebra::DMatrix::identity(q, q) * inference::POINT_ESTIMATE_RIDGE;
                let c = target.coefficients(q)?;
                let cov = total
                    .cholesky()
                    .map(|ch| ch.inverse())
                    .ok_or(OdosError::SingularMatrix { condition: f64::INFINITY })?;
                Ok(-(c.transpose() * cov * &c)[(0, 0)])
            }
            UtilitySpec::DecisionQuadratic { .. } | UtilitySpec::DecisionTable { .. } => {
                let point = Posterior::Particles {
                    draws: vec![theta],
                    weights: vec![1.0],
                    ess: 1.0,
                };
                Ok(optimal_decision(&point, utility)?.1)
            }
            UtilitySpec::Constant { .. } => unreachable!("handled above"),
        }
    })?;
    Ok(UtilityEstimate::from_samples(&values))
}

/// Draws a fresh seed from `rng`; convenience for callers holding a generator.
pub fn seed_from<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.gen()
}

//! Probabilistic models p(x | θ) and priors p(θ).
//!
//! Every model observes a single outcome variable (index [`OUTCOME_VARIABLE`]);
//! values recorded for other variables are carried in datasets but ignored by
//! the likelihood.

pub mod ctmc;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::plan::{MeasurementPlan, Triple};

pub use ctmc::{ctmc_transition_matrix, TransitionMatrix};

pub const OUTCOME_VARIABLE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated gamma prior")
            .sample(rng)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return match self.shape {
                s if s < 1.0 => f64::INFINITY,
                s if s == 1.0 => self.rate.ln(),
                _ => f64::NEG_INFINITY,
            };
        }
        self.shape * self.rate.ln() - statrs::function::gamma::ln_gamma(self.shape)
            + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// x ~ N(θ, σ²) for every observation, θ ~ N(μ₀, τ₀²).
    NormalMean {
        noise_var: f64,
        prior_mean: f64,
        prior_var: f64,
    },
    /// y_i ~ N(w_i'β, σ²) with known covariate rows w_i, β ~ N(b₀, B₀).
    LinReg {
        noise_var: f64,
        prior_mean: Vec<f64>,
        prior_cov: Vec<Vec<f64>>,
        covariates: Vec<Vec<f64>>,
    },
    /// Two-state chain with independent Gamma priors on the intensities.
    TwoStateCtmc {
        lambda_prior: GammaPrior,
        mu_prior: GammaPrior,
        initial: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParameterDraw {
    NormalMean(f64),
    LinReg(DVector<f64>),
    Ctmc { lambda: f64, mu: f64 },
}

impl ParameterDraw {
    pub fn to_vector(&self) -> DVector<f64> {
        match self {
            ParameterDraw::NormalMean(t) => DVector::from_element(1, *t),
            ParameterDraw::LinReg(b) => b.clone(),
            ParameterDraw::Ctmc { lambda, mu } => DVector::from_vec(vec![*lambda, *mu]),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ParameterDraw::NormalMean(_) => 1,
            ParameterDraw::LinReg(b) => b.len(),
            ParameterDraw::Ctmc { .. } => 2,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OdosError::InvalidModel(m));
        match self {
            ModelSpec::NormalMean {
                noise_var,
                prior_mean,
                prior_var,
            } => {
                if !(*noise_var > 0.0) || !noise_var.is_finite() {
                    return bad(format!("noise variance must be positive, got {noise_var}"));
                }
                if !prior_mean.is_finite() || !(*prior_var >= 0.0) || !prior_var.is_finite() {
                    return bad("prior mean must be finite and prior variance non-negative".into());
                }
                Ok(())
            }
            ModelSpec::LinReg {
                noise_var,
                prior_mean,
                prior_cov,
                covariates,
            } => {
                if !(*noise_var > 0.0) || !noise_var.is_finite() {
                    return bad(format!("noise variance must be positive, got {noise_var}"));
                }
                let q = prior_mean.len();
                if q == 0 {
                    return bad("regression needs at least one coefficient".into());
                }
                if prior_cov.len() != q || prior_cov.iter().any(|r| r.len() != q) {
                    return bad(format!("prior covariance must be {q}×{q}"));
                }
                let cov = DMatrix::from_fn(q, q, |i, j| prior_cov[i][j]);
                if (&cov - cov.transpose()).amax() > 1e-12 * (1.0 + cov.amax()) {
                    return bad("prior covariance is not symmetric".into());
                }
                if cov.cholesky().is_none() {
                    return bad("prior covariance is not positive definite".into());
                }
                if covariates.is_empty() {
                    return bad("covariate matrix has no rows".into());
                }
                if let Some(row) = covariates.iter().find(|r| r.len() != q) {
                    return bad(format!("covariate row has {} entries, expected {q}", row.len()));
                }
                if covariates.iter().flatten().any(|w| !w.is_finite()) {
                    return bad("covariates must be finite".into());
                }
                Ok(())
            }
            ModelSpec::TwoStateCtmc {
                lambda_prior,
                mu_prior,
                initial,
            } => {
                for g in [lambda_prior, mu_prior] {
                    if !(g.shape > 0.0 && g.rate > 0.0) || !g.shape.is_finite() || !g.rate.is_finite() {
                        return bad("gamma shape and rate must be positive".into());
                    }
                }
                if initial.iter().any(|p| !(*p >= 0.0))
                    || ((initial[0] + initial[1]) - 1.0).abs() > 1e-12
                {
                    return bad("initial distribution must be a probability vector".into());
                }
                Ok(())
            }
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ModelSpec::NormalMean { .. } => 1,
            ModelSpec::LinReg { prior_mean, .. } => prior_mean.len(),
            ModelSpec::TwoStateCtmc { .. } => 2,
        }
    }

    pub fn is_conjugate(&self) -> bool {
        !matches!(self, ModelSpec::TwoStateCtmc { .. })
    }

    /// Rebuilds a typed draw from a parameter vector.
    pub fn draw_from_vector(&self, v: &DVector<f64>) -> Result<ParameterDraw> {
        if v.len() != self.param_dim() {
            return Err(OdosError::DimensionMismatch {
                expected: self.param_dim(),
                found: v.len(),
            });
        }
        Ok(match self {
            ModelSpec::NormalMean { .. } => ParameterDraw::NormalMean(v[0]),
            ModelSpec::LinReg { .. } => ParameterDraw::LinReg(v.clone()),
            ModelSpec::TwoStateCtmc { .. } => {
                if v[0] < 0.0 || v[1] < 0.0 {
                    return Err(OdosError::InvalidArgument(
                        "CTMC intensities must be non-negative".into(),
                    ));
                }
                ParameterDraw::Ctmc {
                    lambda: v[0],
                    mu: v[1],
                }
            }
        })
    }

    pub fn check_draw(&self, theta: &ParameterDraw) -> Result<()> {
        let ok = matches!(
            (self, theta),
            (ModelSpec::NormalMean { .. }, ParameterDraw::NormalMean(_))
                | (ModelSpec::LinReg { .. }, ParameterDraw::LinReg(_))
                | (ModelSpec::TwoStateCtmc { .. }, ParameterDraw::Ctmc { .. })
        );
        if !ok || theta.dim() != self.param_dim() {
            return Err(OdosError::DimensionMismatch {
                expected: self.param_dim(),
                found: theta.dim(),
            });
        }
        if let ParameterDraw::Ctmc { lambda, mu } = theta {
            if !(*lambda >= 0.0 && *mu >= 0.0) {
                return Err(OdosError::InvalidArgument(
                    "CTMC intensities must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Checks that `plan` only asks for cells this model can generate.
    pub fn check_plan(&self, plan: &MeasurementPlan, frame: &StudyFrame) -> Result<()> {
        plan.validate(frame)?;
        if let Some(t) = plan.iter().find(|t| t.variable != OUTCOME_VARIABLE) {
            return Err(OdosError::IncompatibleData(format!(
                "models observe variable {OUTCOME_VARIABLE} only; plan selects variable {}",
                t.variable
            )));
        }
        if let ModelSpec::LinReg { covariates, .. } = self {
            if let Some(t) = plan.iter().find(|t| t.unit >= covariates.len()) {
                return Err(OdosError::IncompatibleData(format!(
                    "unit {} has no covariate row",
                    t.unit
                )));
            }
        }
        Ok(())
    }

    /// Prior mean and covariance of a conjugate model.
    pub fn gaussian_prior(&self) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            ModelSpec::NormalMean {
                prior_mean,
                prior_var,
                ..
            } => Some((
                DVector::from_element(1, *prior_mean),
                DMatrix::from_element(1, 1, *prior_var),
            )),
            ModelSpec::LinReg {
                prior_mean,
                prior_cov,
                ..
            } => {
                let q = prior_mean.len();
                Some((
                    DVector::from_column_slice(prior_mean),
                    DMatrix::from_fn(q, q, |i, j| prior_cov[i][j]),
                ))
            }
            ModelSpec::TwoStateCtmc { .. } => None,
        }
    }

    pub fn noise_var(&self) -> Option<f64> {
        match self {
            ModelSpec::NormalMean { noise_var, .. } | ModelSpec::LinReg { noise_var, .. } => {
                Some(*noise_var)
            }
            ModelSpec::TwoStateCtmc { .. } => None,
        }
    }

    /// Covariate row of `unit` (regression only).
    pub fn covariate_row(&self, unit: usize) -> Option<DVector<f64>> {
        match self {
            ModelSpec::LinReg { covariates, .. } => {
                covariates.get(unit).map(|r| DVector::from_column_slice(r))
            }
            _ => None,
        }
    }

    /// Log prior density of θ (up to nothing: fully normalized).
    pub fn ln_prior(&self, theta: &ParameterDraw) -> f64 {
        match (self, theta) {
            (ModelSpec::TwoStateCtmc { lambda_prior, mu_prior, .. }, ParameterDraw::Ctmc { lambda, mu }) => {
                lambda_prior.ln_pdf(*lambda) + mu_prior.ln_pdf(*mu)
            }
            _ => {
                let (mean, cov) = self.gaussian_prior().expect("conjugate model");
                let x = theta.to_vector() - mean;
                match cov.clone().cholesky() {
                    Some(ch) => {
                        let q = x.len() as f64;
                        let log_det: f64 = ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
                        -0.5 * (q * (2.0 * std::f64::consts::PI).ln() + log_det + x.dot(&ch.solve(&x)))
                    }
                    None => f64::NAN,
                }
            }
        }
    }
}

/// One draw from p(θ).
pub fn sample_prior<R: Rng + ?Sized>(model: &ModelSpec, rng: &mut R) -> ParameterDraw {
    match model {
        ModelSpec::NormalMean {
            prior_mean,
            prior_var,
            ..
        } => {
            let z: f64 = rng.sample(StandardNormal);
            ParameterDraw::NormalMean(prior_mean + prior_var.sqrt() * z)
        }
        ModelSpec::LinReg { .. } => {
            let (mean, cov) = model.gaussian_prior().expect("conjugate model");
            ParameterDraw::LinReg(sample_mvn(&mean, &cov, rng))
        }
        ModelSpec::TwoStateCtmc {
            lambda_prior,
            mu_prior,
            ..
        } => ParameterDraw::Ctmc {
            lambda: lambda_prior.sample(rng),
            mu: mu_prior.sample(rng),
        },
    }
}

/// Draw from N(mean, cov) for a positive semidefinite `cov`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let root = match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            // semidefinite: symmetric square root through the eigendecomposition
            let eig = cov.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d)
        }
    };
    mean + root * z
}

/// Simulates new data x₁* ~ p(· | θ, r) with no earlier data.
pub fn simulate_data<R: Rng + ?Sized>(
    model: &ModelSpec,
    frame: &StudyFrame,
    theta: &ParameterDraw,
    plan: &MeasurementPlan,
    rng: &mut R,
) -> Result<Dataset> {
    simulate_data_given(model, frame, theta, plan, &Dataset::empty(), rng)
}

/// Simulates x₁* ~ p(· | θ, r, x₀*).
///
/// Only the chain model depends on `prior_data`: a unit's new path continues
/// from its latest state in `prior_data` observed no later than the unit's
/// first new time, and starts from the initial law at the first grid time otherwise.
pub fn simulate_data_given<R: Rng + ?Sized>(
    model: &ModelSpec,
    frame: &StudyFrame,
    theta: &ParameterDraw,
    plan: &MeasurementPlan,
    prior_data: &Dataset,
    rng: &mut R,
) -> Result<Dataset> {
    model.check_draw(theta)?;
    model.check_plan(plan, frame)?;
    let mut data = Dataset::empty();
    match (model, theta) {
        (ModelSpec::NormalMean { noise_var, .. }, ParameterDraw::NormalMean(mean)) => {
            let sd = noise_var.sqrt();
            for t in plan.iter() {
                let z: f64 = rng.sample(StandardNormal);
                data.observe(*t, mean + sd * z);
            }
        }
        (ModelSpec::LinReg { noise_var, covariates, .. }, ParameterDraw::LinReg(beta)) => {
            let sd = noise_var.sqrt();
            for t in plan.iter() {
                let mean: f64 = covariates[t.unit].iter().zip(beta.iter()).map(|(w, b)| w * b).sum();
                let z: f64 = rng.sample(StandardNormal);
                data.observe(*t, mean + sd * z);
            }
        }
        (ModelSpec::TwoStateCtmc { initial, .. }, ParameterDraw::Ctmc { lambda, mu }) => {
            let history = unit_paths(prior_data)?;
            for (unit, slots) in unit_slots(plan) {
                let times: Vec<f64> = slots.iter().map(|&k| frame.time(k)).collect();
                let first = times[0];
                let anchor = history
                    .get(&unit)
                    .and_then(|obs| obs.iter().rev().find(|(k, _)| frame.time(*k) <= first));
                let (state, start) = match anchor {
                    Some(&(k, s)) => (s, frame.time(k)),
                    None => {
                        let s = usize::from(rng.gen::<f64>() >= initial[0]);
                        (s, frame.time(0))
                    }
                };
                let path = ctmc::simulate_path(*lambda, *mu, state, start, &times, rng);
                for (&k, s) in slots.iter().zip(path) {
                    data.observe(Triple::new(unit, OUTCOME_VARIABLE, k), (s + 1) as f64);
                }
            }
        }
        _ => unreachable!("draw checked against model"),
    }
    Ok(data)
}

/// Time indices per unit in ascending order.
fn unit_slots(plan: &MeasurementPlan) -> BTreeMap<usize, Vec<usize>> {
    let mut slots: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for t in plan.iter().filter(|t| t.variable == OUTCOME_VARIABLE) {
        slots.entry(t.unit).or_default().push(t.time_index);
    }
    slots
}

/// Observed chain states per unit as (time index, state index 0/1), time-ordered.
pub(crate) fn unit_paths(data: &Dataset) -> Result<BTreeMap<usize, Vec<(usize, usize)>>> {
    let mut paths: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, x) in data.observed().filter(|(t, _)| t.variable == OUTCOME_VARIABLE) {
        let state = if x == 1.0 {
            0
        } else if x == 2.0 {
            1
        } else {
            return Err(OdosError::IncompatibleData(format!(
                "chain state at unit {} time {} must be 1 or 2, got {x}",
                t.unit, t.time_index
            )));
        };
        paths.entry(t.unit).or_default().push((t.time_index, state));
    }
    Ok(paths)
}

fn check_finite(data: &Dataset) -> Result<()> {
    match data.observed().find(|(_, x)| !x.is_finite()) {
        Some((t, _)) => Err(OdosError::NonFiniteValue {
            unit: t.unit,
            variable: t.variable,
            time: t.time_index,
        }),
        None => Ok(()),
    }
}

/// log p(observed values | θ). Missing cells contribute nothing.
pub fn log_likelihood(
    model: &ModelSpec,
    frame: &StudyFrame,
    theta: &ParameterDraw,
    data: &Dataset,
) -> Result<f64> {
    model.check_draw(theta)?;
    check_finite(data)?;
    let outcomes = data.observed().filter(|(t, _)| t.variable == OUTCOME_VARIABLE);
    match (model, theta) {
        (ModelSpec::NormalMean { noise_var, .. }, ParameterDraw::NormalMean(mean)) => {
            let norm = -0.5 * (2.0 * std::f64::consts::PI * noise_var).ln();
            Ok(outcomes
                .map(|(_, x)| norm - (x - mean).powi(2) / (2.0 * noise_var))
                .sum())
        }
        (ModelSpec::LinReg { noise_var, covariates, .. }, ParameterDraw::LinReg(beta)) => {
            let norm = -0.5 * (2.0 * std::f64::consts::PI * noise_var).ln();
            let mut total = 0.0;
            for (t, y) in outcomes {
                let row = covariates.get(t.unit).ok_or_else(|| {
                    OdosError::IncompatibleData(format!("unit {} has no covariate row", t.unit))
                })?;
                let mean: f64 = row.iter().zip(beta.iter()).map(|(w, b)| w * b).sum();
                total += norm - (y - mean).powi(2) / (2.0 * noise_var);
            }
            Ok(total)
        }
        (ModelSpec::TwoStateCtmc { initial, .. }, ParameterDraw::Ctmc { lambda, mu }) => {
            let t0 = frame.time(0);
            let mut total = 0.0;
            for (_, path) in unit_paths(data)? {
                let (k0, s0) = path[0];
                total += ctmc::marginal(*initial, *lambda, *mu, frame.time(k0) - t0)[s0].ln();
                for w in path.windows(2) {
                    let (ka, sa) = w[0];
                    let (kb, sb) = w[1];
                    let p = ctmc::transition_unchecked(*lambda, *mu, frame.time(kb) - frame.time(ka));
                    total += p.p[sa][sb].ln();
                }
            }
            Ok(total)
        }
        _ => unreachable!("draw checked against model"),
    }
}

//! Posterior computation and information matrices.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::models::{ctmc, log_likelihood, sample_mvn, sample_prior, ModelSpec, ParameterDraw, OUTCOME_VARIABLE};
use crate::plan::MeasurementPlan;
use crate::seed::child_rng;

pub const MIN_PARTICLES: usize = 100;
pub const MIN_ESS: f64 = 10.0;
pub const DEFAULT_PARTICLES: usize = 2_000;
pub const MAX_CONDITION: f64 = 1e12;

/// Posterior over θ.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    ExactNormal {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    /// Self-normalized weighted draws; `ess` is 1/Σw².
    Particles {
        draws: Vec<ParameterDraw>,
        weights: Vec<f64>,
        ess: f64,
    },
}

impl Posterior {
    pub fn dim(&self) -> usize {
        match self {
            Posterior::ExactNormal { mean, .. } => mean.len(),
            Posterior::Particles { draws, .. } => draws[0].dim(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            Posterior::ExactNormal { mean, .. } => mean.clone(),
            Posterior::Particles { draws, weights, .. } => draws
                .iter()
                .zip(weights)
                .fold(DVector::zeros(draws[0].dim()), |acc, (d, w)| acc + d.to_vector() * *w),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Posterior::ExactNormal { cov, .. } => cov.clone(),
            Posterior::Particles { draws, weights, .. } => {
                let mean = self.mean();
                let q = mean.len();
                draws.iter().zip(weights).fold(DMatrix::zeros(q, q), |acc, (d, w)| {
                    let c = d.to_vector() - &mean;
                    acc + &c * c.transpose() * *w
                })
            }
        }
    }

    /// Posterior mean of a linear functional g(θ) = c'θ.
    pub fn functional_mean(&self, coefficients: &DVector<f64>) -> f64 {
        match self {
            Posterior::ExactNormal { mean, .. } => coefficients.dot(mean),
            Posterior::Particles { draws, weights, .. } => draws
                .iter()
                .zip(weights)
                .map(|(d, w)| w * coefficients.dot(&d.to_vector()))
                .sum(),
        }
    }

    /// Posterior variance of c'θ.
    pub fn functional_variance(&self, coefficients: &DVector<f64>) -> f64 {
        match self {
            Posterior::ExactNormal { cov, .. } => (coefficients.transpose() * cov * coefficients)[(0, 0)],
            Posterior::Particles { draws, weights, .. } => {
                let m = self.functional_mean(coefficients);
                draws
                    .iter()
                    .zip(weights)
                    .map(|(d, w)| w * (coefficients.dot(&d.to_vector()) - m).powi(2))
                    .sum()
            }
        }
    }

    /// One draw from the posterior (particle resampling for weighted draws).
    pub fn sample<R: Rng + ?Sized>(&self, model: &ModelSpec, rng: &mut R) -> Result<ParameterDraw> {
        match self {
            Posterior::ExactNormal { mean, cov } => model.draw_from_vector(&sample_mvn(mean, cov, rng)),
            Posterior::Particles { draws, weights, .. } => {
                let index = WeightedIndex::new(weights.iter().copied())
                    .map_err(|e| OdosError::InvalidArgument(format!("particle weights: {e}")))?;
                Ok(draws[index.sample(rng)].clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum PosteriorMethod {
    /// Closed form for conjugate models, importance sampling with
    /// [`DEFAULT_PARTICLES`] particles otherwise.
    #[default]
    ExactIfAvailable,
    Importance { n_particles: usize },
}


fn outcome_values(data: &Dataset) -> impl Iterator<Item = (usize, f64)> + '_ {
    data.observed()
        .filter(|(t, _)| t.variable == OUTCOME_VARIABLE)
        .map(|(t, x)| (t.unit, x))
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

/// Conjugate update of N(μ₀, τ₀²) with known noise variance.
pub fn posterior_normal_mean(model: &ModelSpec, data: &Dataset) -> Result<Posterior> {
    let ModelSpec::NormalMean {
        noise_var,
        prior_mean,
        prior_var,
    } = model
    else {
        return Err(OdosError::InvalidModel("expected the normal-mean model".into()));
    };
    check_finite(data)?;
    let (n, sum) = outcome_values(data).fold((0usize, 0.0), |(n, s), (_, x)| (n + 1, s + x));
    let (mean, var) = if *prior_var == 0.0 {
        (*prior_mean, 0.0)
    } else {
        let var = 1.0 / (1.0 / prior_var + n as f64 / noise_var);
        (var * (prior_mean / prior_var + sum / noise_var), var)
    };
    Ok(Posterior::ExactNormal {
        mean: DVector::from_element(1, mean),
        cov: DMatrix::from_element(1, 1, var),
    })
}

/// Conjugate Gaussian update of β ~ N(b₀, B₀) given outcome rows.
pub fn posterior_linreg(model: &ModelSpec, data: &Dataset) -> Result<Posterior> {
    let ModelSpec::LinReg { noise_var, .. } = model else {
        return Err(OdosError::InvalidModel("expected the regression model".into()));
    };
    check_finite(data)?;
    let (b0, cov0) = model.gaussian_prior().expect("regression prior");
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (unit, y) in outcome_values(data) {
        rows.push(model.covariate_row(unit).ok_or_else(|| {
            OdosError::IncompatibleData(format!("unit {unit} has no covariate row"))
        })?);
        ys.push(y);
    }
    let (mean, cov) = gaussian_update(&b0, &cov0, &rows, &ys, *noise_var)?;
    Ok(Posterior::ExactNormal { mean, cov })
}

/// Posterior of N(mean, cov) after observing y_k = w_k'β + N(0, σ²).
pub fn gaussian_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rows: &[DVector<f64>],
    ys: &[f64],
    noise_var: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.is_empty() {
        return Ok((mean.clone(), cov.clone()));
    }
    let q = mean.len();
    let prior_precision = invert_spd(cov)?;
    let mut precision = prior_precision.clone();
    let mut shift = &prior_precision * mean;
    for (w, y) in rows.iter().zip(ys) {
        precision += w * w.transpose() / noise_var;
        shift += w * (*y / noise_var);
    }
    let post_cov = invert_spd(&precision)?;
    let post_mean = &post_cov * shift;
    debug_assert_eq!(post_mean.len(), q);
    Ok((post_mean, symmetrize(post_cov)))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, refusing ill-conditioned input.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(OdosError::SingularMatrix { condition });
    }
    let inv = m
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(OdosError::SingularMatrix { condition })?;
    Ok(symmetrize(inv))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Self-normalized importance sampling with the prior as proposal.
///
/// Particle `i` is drawn from child stream `i` of a seed taken from `rng`,
/// so the result does not depend on the number of worker threads.
pub fn importance_posterior<R: Rng + ?Sized>(
    model: &ModelSpec,
    frame: &StudyFrame,
    data: &Dataset,
    n_particles: usize,
    rng: &mut R,
) -> Result<Posterior> {
    if n_particles < MIN_PARTICLES {
        return Err(OdosError::InvalidArgument(format!(
            "importance sampling needs at least {MIN_PARTICLES} particles, got {n_particles}"
        )));
    }
    check_finite(data)?;
    let base: u64 = rng.gen();
    let particles: Vec<(ParameterDraw, f64)> = (0..n_particles)
        .into_par_iter()
        .map(|i| {
            let mut prng = child_rng(base, i as u64);
            let theta = sample_prior(model, &mut prng);
            let ll = log_likelihood(model, frame, &theta, data)?;
            Ok((theta, ll))
        })
        .collect::<Result<_>>()?;
    let max = particles.iter().map(|(_, ll)| *ll).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(OdosError::DegenerateWeights { ess: 0.0 });
    }
    let raw: Vec<f64> = particles.iter().map(|(_, ll)| (ll - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut draws = Vec::with_capacity(n_particles);
    let mut weights = Vec::with_capacity(n_particles);
    for ((theta, _), r) in particles.into_iter().zip(raw) {
        if r > 0.0 {
            draws.push(theta);
            weights.push(r / total);
        }
    }
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    if ess < MIN_ESS {
        return Err(OdosError::DegenerateWeights { ess });
    }
    Ok(Posterior::Particles { draws, weights, ess })
}

/// p(θ | data) by the configured method.
pub fn posterior<R: Rng + ?Sized>(
    model: &ModelSpec,
    frame: &StudyFrame,
    data: &Dataset,
    method: PosteriorMethod,
    rng: &mut R,
) -> Result<Posterior> {
    match (method, model) {
        (PosteriorMethod::ExactIfAvailable, ModelSpec::NormalMean { .. }) => posterior_normal_mean(model, data),
        (PosteriorMethod::ExactIfAvailable, ModelSpec::LinReg { .. }) => posterior_linreg(model, data),
        (PosteriorMethod::ExactIfAvailable, ModelSpec::TwoStateCtmc { .. }) => {
            importance_posterior(model, frame, data, DEFAULT_PARTICLES, rng)
        }
        (PosteriorMethod::Importance { n_particles }, _) => {
            importance_posterior(model, frame, data, n_particles, rng)
        }
    }
}

/// Posterior when the plan that produced `data` is also known.
///
/// Missingness by design is ignorable: the plan is checked for consistency
/// with the observed cells and otherwise plays no part in the update.
pub fn posterior_given_plan<R: Rng + ?Sized>(
    model: &ModelSpec,
    frame: &StudyFrame,
    data: &Dataset,
    plan: &MeasurementPlan,
    method: PosteriorMethod,
    rng: &mut R,
) -> Result<Posterior> {
    let observed = data.observed_plan();
    if !observed.iter().all(|t| plan.contains(t)) {
        return Err(OdosError::IncompatibleData(
            "dataset has observations outside the supplied plan".into(),
        ));
    }
    posterior(model, frame, data, method, rng)
}

pub const POINT_ESTIMATE_RIDGE: f64 = 1e-8;

/// Maximum-likelihood point estimate with a 1e-8 ridge penalty.
///
/// `start` seeds the chain model's simplex search and is ignored by the
/// Gaussian models, which have closed forms.
pub fn point_estimate(
    model: &ModelSpec,
    frame: &StudyFrame,
    data: &Dataset,
    start: &ParameterDraw,
) -> Result<ParameterDraw> {
    check_finite(data)?;
    match model {
        ModelSpec::NormalMean { noise_var, .. } => {
            let (n, sum) = outcome_values(data).fold((0usize, 0.0), |(n, s), (_, x)| (n + 1, s + x));
            Ok(ParameterDraw::NormalMean(
                (sum / noise_var) / (n as f64 / noise_var + POINT_ESTIMATE_RIDGE),
            ))
        }
        ModelSpec::LinReg { noise_var, .. } => {
            let q = model.param_dim();
            let mut precision = DMatrix::identity(q, q) * POINT_ESTIMATE_RIDGE;
            let mut shift = DVector::zeros(q);
            for (unit, y) in outcome_values(data) {
                let w = model.covariate_row(unit).ok_or_else(|| {
                    OdosError::IncompatibleData(format!("unit {unit} has no covariate row"))
                })?;
                precision += &w * w.transpose() / *noise_var;
                shift += w * (y / noise_var);
            }
            let beta = precision
                .cholesky()
                .map(|c| c.solve(&shift))
                .ok_or(OdosError::SingularMatrix { condition: f64::INFINITY })?;
            Ok(ParameterDraw::LinReg(beta))
        }
        ModelSpec::TwoStateCtmc { .. } => {
            model.check_draw(start)?;
            let objective = |logs: &[f64]| -> f64 {
                let (lambda, mu) = (logs[0].exp(), logs[1].exp());
                let theta = ParameterDraw::Ctmc { lambda, mu };
                match log_likelihood(model, frame, &theta, data) {
                    Ok(ll) => -(ll - 0.5 * POINT_ESTIMATE_RIDGE * (lambda * lambda + mu * mu)),
                    Err(_) => f64::INFINITY,
                }
            };
            let v = start.to_vector();
            let init = [v[0].max(1e-3).ln(), v[1].max(1e-3).ln()];
            let (best, _) = crate::optim::nelder_mead(objective, &init, 0.5, 2_000, 1e-12);
            Ok(ParameterDraw::Ctmc {
                lambda: best[0].exp(),
                mu: best[1].exp(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    Expected,
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InformationMatrix {
    pub matrix: DMatrix<f64>,
    pub kind: InfoKind,
}

impl InformationMatrix {
    pub fn zeros(dim: usize, kind: InfoKind) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
            kind,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Symmetric within 1e-10 and minimum eigenvalue ≥ −1e-8·trace.
    pub fn is_symmetric_psd(&self) -> bool {
        let m = &self.matrix;
        let scale = 1.0 + m.amax();
        if (m - m.transpose()).amax() > 1e-10 * scale {
            return false;
        }
        let trace = m.trace();
        let min_eig = m.clone().symmetric_eigenvalues().min();
        min_eig >= -1e-8 * trace.abs().max(f64::MIN_POSITIVE)
    }
}

/// Information of one transition observed after lag `dt` from a row state with law `row_law`.
pub fn ctmc_pair_information(lambda: f64, mu: f64, dt: f64, row_law: [f64; 2]) -> DMatrix<f64> {
    let p = ctmc::transition_unchecked(lambda, mu, dt);
    let grad = ctmc::transition_gradient(lambda, mu, dt);
    let mut info = DMatrix::zeros(2, 2);
    for (g, &q) in row_law.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        for h in 0..2 {
            let pgh = p.p[g][h];
            if pgh <= 0.0 {
                continue;
            }
            let d = DVector::from_vec(vec![grad[0][g][h], grad[1][g][h]]);
            info += &d * d.transpose() * (q / pgh);
        }
    }
    info
}

/// Fisher information I_{x₁*}(θ) of the data a plan would produce.
pub fn expected_information(
    model: &ModelSpec,
    frame: &StudyFrame,
    plan: &MeasurementPlan,
    theta: &ParameterDraw,
) -> Result<InformationMatrix> {
    model.check_draw(theta)?;
    model.check_plan(plan, frame)?;
    let q = model.param_dim();
    let matrix = match (model, theta) {
        (ModelSpec::NormalMean { noise_var, .. }, _) => {
            DMatrix::from_element(1, 1, plan.cardinality() as f64 / noise_var)
        }
        (ModelSpec::LinReg { noise_var, .. }, _) => {
            plan.iter().fold(DMatrix::zeros(q, q), |acc, t| {
                let w = model.covariate_row(t.unit).expect("plan checked");
                acc + &w * w.transpose() / *noise_var
            })
        }
        (ModelSpec::TwoStateCtmc { initial, .. }, ParameterDraw::Ctmc { lambda, mu }) => {
            let t0 = frame.time(0);
            let mut info = DMatrix::zeros(2, 2);
            let mut by_unit: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            for t in plan.iter() {
                by_unit.entry(t.unit).or_default().push(frame.time(t.time_index));
            }
            for times in by_unit.values() {
                for w in times.windows(2) {
                    let law = ctmc::marginal(*initial, *lambda, *mu, w[0] - t0);
                    info += ctmc_pair_information(*lambda, *mu, w[1] - w[0], law);
                }
            }
            info
        }
        _ => unreachable!("draw checked against model"),
    };
    Ok(InformationMatrix {
        matrix: symmetrize(matrix),
        kind: InfoKind::Expected,
    })
}

/// Negative Hessian of the log-likelihood at θ.
///
/// Exact for the Gaussian models. For the chain it uses central differences
/// with step 1e-5·(1+|θ_i|), with the stencil moved off the boundary for
/// intensities smaller than the step, and is projected onto the PSD cone.
pub fn observed_information(
    model: &ModelSpec,
    frame: &StudyFrame,
    data: &Dataset,
    theta: &ParameterDraw,
) -> Result<InformationMatrix> {
    model.check_draw(theta)?;
    check_finite(data)?;
    let matrix = match model {
        ModelSpec::NormalMean { .. } | ModelSpec::LinReg { .. } => {
            let plan = data
                .observed_plan()
                .iter()
                .copied()
                .filter(|t| t.variable == OUTCOME_VARIABLE)
                .collect::<MeasurementPlan>();
            return expected_information(model, frame, &plan, theta).map(|i| InformationMatrix {
                matrix: i.matrix,
                kind: InfoKind::Observed,
            });
        }
        ModelSpec::TwoStateCtmc { .. } => {
            if data.observed_count() == 0 {
                DMatrix::zeros(2, 2)
            } else {
                let center = theta.to_vector();
                let steps = center.map(|x| 1e-5 * (1.0 + x.abs()));
                let center = center.zip_map(&steps, |x, h| x.max(h));
                let f = |v: &DVector<f64>| -> Result<f64> {
                    log_likelihood(model, frame, &model.draw_from_vector(v)?, data)
                };
                let hessian = finite_difference_hessian(&f, &center, &steps)?;
                project_psd(symmetrize(-hessian))
            }
        }
    };
    Ok(InformationMatrix {
        matrix,
        kind: InfoKind::Observed,
    })
}

pub(crate) fn finite_difference_hessian<F>(f: &F, x: &DVector<f64>, h: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let f0 = f(x)?;
    let shifted = |moves: &[(usize, f64)]| -> Result<f64> {
        let mut y = x.clone();
        for &(i, s) in moves {
            y[i] += s * h[i];
        }
        f(&y)
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = shifted(&[(i, 1.0)])?;
        let fm = shifted(&[(i, -1.0)])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = shifted(&[(i, 1.0), (j, 1.0)])?;
            let fpm = shifted(&[(i, 1.0), (j, -1.0)])?;
            let fmp = shifted(&[(i, -1.0), (j, 1.0)])?;
            let fmm = shifted(&[(i, -1.0), (j, -1.0)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to zero).
pub(crate) fn project_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return eig.recompose();
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(v * DMatrix::from_diagonal(&clipped) * v.transpose())
}

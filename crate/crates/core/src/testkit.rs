//! Reference implementations used to check the main code paths.
//!
//! Everything here is deliberately naive: closed forms coded directly,
//! full enumeration, tensor-grid quadrature and finite differences. None of
//! it calls into the inference, search or expected-utility modules.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::frame::{Hierarchy, StudyFrame};
use crate::models::{GammaPrior, ModelSpec};
use crate::plan::MeasurementPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub oracle: String,
    pub reference: Vec<f64>,
    pub comparand: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Elementwise check |reference − comparand| ≤ tolerance, scaled by |reference| when `relative`.
    pub fn compare(oracle: &str, reference: Vec<f64>, comparand: Vec<f64>, tolerance: f64, relative: bool) -> Self {
        assert!(tolerance > 0.0);
        let pass = reference.len() == comparand.len()
            && reference.iter().zip(&comparand).all(|(r, c)| {
                let scale = if relative { r.abs().max(f64::MIN_POSITIVE) } else { 1.0 };
                (r - c).abs() <= tolerance * scale
            });
        Self {
            oracle: oracle.to_string(),
            reference,
            comparand,
            tolerance,
            pass,
        }
    }
}

/// Posterior mean and covariance for the Gaussian models by one-observation-at-a-time updates.
pub fn conjugate_oracle(model: &ModelSpec, data: &Dataset) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let outcomes = data.observed().filter(|(t, _)| t.variable == 0);
    match model {
        ModelSpec::NormalMean {
            noise_var,
            prior_mean,
            prior_var,
        } => {
            let (mut m, mut v) = (*prior_mean, *prior_var);
            for (_, y) in outcomes {
                let gain = v / (v + noise_var);
                m += gain * (y - m);
                v -= gain * v;
            }
            Ok((DVector::from_element(1, m), DMatrix::from_element(1, 1, v)))
        }
        ModelSpec::LinReg {
            noise_var,
            prior_mean,
            prior_cov,
            covariates,
        } => {
            let q = prior_mean.len();
            let mut m = DVector::from_column_slice(prior_mean);
            let mut s = DMatrix::from_fn(q, q, |i, j| prior_cov[i][j]);
            for (t, y) in outcomes {
                let x = DVector::from_column_slice(&covariates[t.unit]);
                let sx = &s * &x;
                let denom = noise_var + x.dot(&sx);
                let gain = &sx / denom;
                m += &gain * (y - x.dot(&m));
                s -= &gain * sx.transpose();
            }
            Ok((m, s))
        }
        ModelSpec::TwoStateCtmc { .. } => Err(OdosError::InvalidModel(
            "conjugate oracle covers the Gaussian models only".into(),
        )),
    }
}

/// Best subset of `0..n_items` with at most (or exactly) `k` elements.
///
/// Ties go to the lexicographically smallest sorted index list.
pub fn enumerate_oracle<F>(n_items: usize, k: usize, exact: bool, objective: F) -> Result<(Vec<usize>, f64)>
where
    F: Fn(&[usize]) -> f64,
{
    fn walk<F: Fn(&[usize]) -> f64>(
        next: usize,
        n: usize,
        k: usize,
        exact: bool,
        current: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
        f: &F,
    ) {
        if !exact || current.len() == k {
            let v = f(current);
            let replace = match best {
                None => true,
                Some((b, bv)) => v > *bv || (v == *bv && current.as_slice() < b.as_slice()) || (bv.is_nan() && !v.is_nan()),
            };
            if replace {
                *best = Some((current.clone(), v));
            }
        }
        if current.len() == k {
            return;
        }
        for i in next..n {
            current.push(i);
            walk(i + 1, n, k, exact, current, best, f);
            current.pop();
        }
    }
    let k = k.min(n_items);
    let mut count = 0.0;
    let mut c = 1.0;
    for j in 0..=k {
        if j > 0 {
            c = c * (n_items - j + 1) as f64 / j as f64;
        }
        if !exact || j == k {
            count += c;
        }
    }
    if count > 1e5 {
        return Err(OdosError::SpaceTooLarge {
            size: count,
            limit: 100_000,
        });
    }
    let mut best = None;
    walk(0, n_items, k, exact, &mut Vec::new(), &mut best, &objective);
    Ok(best.expect("at least one subset"))
}

/// exp(Q·dt) for the two-state generator by scaling and squaring a Taylor series.
pub fn naive_transition(lambda: f64, mu: f64, dt: f64) -> [[f64; 2]; 2] {
    let q = [[-lambda * dt, lambda * dt], [mu * dt, -mu * dt]];
    let norm = (lambda + mu) * dt * 2.0;
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let scale = 2f64.powi(s);
    let a = [[q[0][0] / scale, q[0][1] / scale], [q[1][0] / scale, q[1][1] / scale]];
    let mul = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
        let mut z = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                z[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        z
    };
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = [[1.0, 0.0], [0.0, 1.0]];
    for n in 1..30 {
        term = mul(term, a);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = mul(result, result);
    }
    result
}

/// Expected information of one transition over `dt` from the row law, by finite differences.
pub fn fd_pair_information(lambda: f64, mu: f64, dt: f64, row_law: [f64; 2]) -> DMatrix<f64> {
    let hl = 1e-5 * (1.0 + lambda);
    let hm = 1e-5 * (1.0 + mu);
    let p = naive_transition(lambda, mu, dt);
    let pl = naive_transition(lambda + hl, mu, dt);
    let ml = naive_transition(lambda - hl, mu, dt);
    let pm = naive_transition(lambda, mu + hm, dt);
    let mm = naive_transition(lambda, mu - hm, dt);
    let mut info = DMatrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            if p[i][j] <= 0.0 {
                continue;
            }
            let g = DVector::from_vec(vec![
                (pl[i][j] - ml[i][j]) / (2.0 * hl),
                (pm[i][j] - mm[i][j]) / (2.0 * hm),
            ]);
            info += (&g * g.transpose()) * (row_law[i] / p[i][j]);
        }
    }
    info
}

fn state_of(x: f64) -> Result<usize> {
    if x == 1.0 {
        Ok(0)
    } else if x == 2.0 {
        Ok(1)
    } else {
        Err(OdosError::IncompatibleData(format!("chain state must be 1 or 2, got {x}")))
    }
}

fn chain_log_likelihood(
    frame: &StudyFrame,
    initial: [f64; 2],
    paths: &BTreeMap<usize, Vec<(usize, usize)>>,
    lambda: f64,
    mu: f64,
) -> f64 {
    let mut total = 0.0;
    for path in paths.values() {
        let (k0, s0) = path[0];
        let p0 = naive_transition(lambda, mu, frame.time(k0) - frame.time(0));
        total += (initial[0] * p0[0][s0] + initial[1] * p0[1][s0]).ln();
        for w in path.windows(2) {
            let p = naive_transition(lambda, mu, frame.time(w[1].0) - frame.time(w[0].0));
            total += p[w[0].1][w[1].1].ln();
        }
    }
    total
}

fn gamma_ln_pdf(g: &GammaPrior, x: f64) -> f64 {
    if x <= 0.0 {
        return if g.shape == 1.0 && x == 0.0 { g.shape * g.rate.ln() } else { f64::NEG_INFINITY };
    }
    g.shape * g.rate.ln() - ln_gamma(g.shape) + (g.shape - 1.0) * x.ln() - g.rate * x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureMoments {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
}

/// Posterior moments of (λ, μ) by the trapezoid rule on a `resolution`² grid.
///
/// Each axis runs from 0 to the prior mean plus twelve prior standard deviations.
pub fn quadrature_oracle(model: &ModelSpec, frame: &StudyFrame, data: &Dataset, resolution: usize) -> Result<QuadratureMoments> {
    let ModelSpec::TwoStateCtmc {
        lambda_prior,
        mu_prior,
        initial,
    } = model
    else {
        return Err(OdosError::InvalidModel("quadrature oracle covers the chain model only".into()));
    };
    if !(2..=500).contains(&resolution) {
        return Err(OdosError::InvalidArgument("resolution must be in 2..=500".into()));
    }
    let mut paths: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (t, x) in data.observed().filter(|(t, _)| t.variable == 0) {
        paths.entry(t.unit).or_default().push((t.time_index, state_of(x)?));
    }
    let axis = |g: &GammaPrior| {
        let hi = g.shape / g.rate + 12.0 * g.shape.sqrt() / g.rate;
        (0..resolution).map(|i| hi * i as f64 / (resolution - 1) as f64).collect::<Vec<_>>()
    };
    let ls = axis(lambda_prior);
    let ms = axis(mu_prior);
    let mut logw = vec![vec![f64::NEG_INFINITY; resolution]; resolution];
    let mut top = f64::NEG_INFINITY;
    for (a, &l) in ls.iter().enumerate() {
        for (b, &m) in ms.iter().enumerate() {
            let prior = gamma_ln_pdf(lambda_prior, l) + gamma_ln_pdf(mu_prior, m);
            if prior == f64::NEG_INFINITY {
                continue;
            }
            let v = prior + chain_log_likelihood(frame, *initial, &paths, l, m);
            if v.is_finite() {
                logw[a][b] = v;
                top = top.max(v);
            }
        }
    }
    let trap = |i: usize| if i == 0 || i == resolution - 1 { 0.5 } else { 1.0 };
    let (mut z, mut s1, mut s2, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, &l) in ls.iter().enumerate() {
        for (b, &m) in ms.iter().enumerate() {
            let w = trap(a) * trap(b) * (logw[a][b] - top).exp();
            z += w;
            s1 += w * l;
            s2 += w * l * l;
            t1 += w * m;
            t2 += w * m * m;
        }
    }
    let (ml, mm) = (s1 / z, t1 / z);
    Ok(QuadratureMoments {
        mean: [ml, mm],
        variance: [s2 / z - ml * ml, t2 / z - mm * mm],
    })
}

/// Posterior variance of the grand mean under nested random intercepts, by dense GLS.
///
/// `between_var[k - 1]` is the variance of the level-k intercepts.
pub fn gls_oracle(
    hierarchy: &Hierarchy,
    noise_var: f64,
    between_var: &[f64],
    prior_var: f64,
    units: &[usize],
) -> Result<f64> {
    if between_var.len() + 1 != hierarchy.n_levels() {
        return Err(OdosError::DimensionMismatch {
            expected: hierarchy.n_levels() - 1,
            found: between_var.len(),
        });
    }
    let n = units.len();
    if n == 0 {
        return Ok(prior_var);
    }
    let v = DMatrix::from_fn(n, n, |a, b| {
        let mut x = if a == b { noise_var } else { 0.0 };
        for (k, w) in between_var.iter().enumerate() {
            if hierarchy.cluster_of(units[a], k + 1) == hierarchy.cluster_of(units[b], k + 1) {
                x += w;
            }
        }
        x
    });
    let inv = v
        .try_inverse()
        .ok_or(OdosError::SingularMatrix { condition: f64::INFINITY })?;
    let ones = DVector::from_element(n, 1.0);
    let precision = 1.0 / prior_var + ones.dot(&(&inv * &ones));
    Ok(1.0 / precision)
}

/// Utility surface E_prior[log det Σ pair information] for equidistant chain plans.
///
/// Rows follow `n1_values`, columns follow `deltas`. Prior draws come from
/// a private generator seeded with `seed`.
pub fn markov_timing_oracle(
    model: &ModelSpec,
    total: usize,
    n1_values: &[usize],
    deltas: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let ModelSpec::TwoStateCtmc {
        lambda_prior,
        mu_prior,
        initial,
    } = model
    else {
        return Err(OdosError::InvalidModel("markov timing oracle needs the chain model".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gl = Gamma::new(lambda_prior.shape, 1.0 / lambda_prior.rate).map_err(|e| OdosError::InvalidModel(e.to_string()))?;
    let gm = Gamma::new(mu_prior.shape, 1.0 / mu_prior.rate).map_err(|e| OdosError::InvalidModel(e.to_string()))?;
    let thetas: Vec<(f64, f64)> = (0..draws).map(|_| (gl.sample(&mut rng), gm.sample(&mut rng))).collect();
    let mut surface = Vec::with_capacity(n1_values.len());
    for &n1 in n1_values {
        if n1 == 0 || !total.is_multiple_of(n1) {
            return Err(OdosError::InvalidGrid(format!("{total} is not a multiple of {n1}")));
        }
        let units = (total / n1) as f64;
        let mut row = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let mut acc = 0.0;
            for &(l, m) in &thetas {
                let mut info = DMatrix::zeros(2, 2);
                for k in 0..n1.saturating_sub(1) {
                    let p = naive_transition(l, m, k as f64 * delta);
                    let law = [
                        initial[0] * p[0][0] + initial[1] * p[1][0],
                        initial[0] * p[0][1] + initial[1] * p[1][1],
                    ];
                    info += fd_pair_information(l, m, delta, law);
                }
                info *= units;
                acc += info.determinant().ln();
            }
            row.push(acc / draws as f64);
        }
        surface.push(row);
    }
    Ok(surface)
}

/// Index pair of the largest finite entry, scanning rows then columns.
pub fn surface_argmax(surface: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, row) in surface.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((i, j, v));
            }
        }
    }
    best.map(|(i, j, _)| (i, j))
}

/// log det(XᵀX/σ² + I_obs) computed from scratch for a LinReg subset.
pub fn linreg_log_det(covariates: &[Vec<f64>], noise_var: f64, units: &[usize], observed: &[usize]) -> f64 {
    let q = covariates.first().map_or(0, Vec::len);
    let mut m = DMatrix::zeros(q, q);
    for &u in units.iter().chain(observed) {
        let x = DVector::from_column_slice(&covariates[u]);
        m += &x * x.transpose() / noise_var;
    }
    let d = m.determinant();
    if d > 0.0 {
        d.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Units of a plan, as a sorted vector.
pub fn plan_units(plan: &MeasurementPlan) -> Vec<usize> {
    plan.units().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Value;
    use crate::inference::{ctmc_pair_information, posterior_linreg, posterior_normal_mean};
    use crate::models::ctmc::ctmc_transition_matrix;
    use crate::plan::Triple;

    #[test]
    fn conjugate_matches_inference() {
        let frame = StudyFrame::cross_section(4).unwrap();
        let data = Dataset::from_entries(
            &frame,
            (0..4).map(|u| (Triple::new(u, 0, 0), Value::Observed(0.3 * u as f64 - 0.2))),
        )
        .unwrap();
        let nm = ModelSpec::NormalMean {
            noise_var: 1.0,
            prior_mean: 0.0,
            prior_var: 1.0,
        };
        let (m, v) = conjugate_oracle(&nm, &data).unwrap();
        assert!((v[(0, 0)] - 0.2).abs() < 1e-15);
        let p = posterior_normal_mean(&nm, &data).unwrap();
        assert!((p.mean()[0] - m[0]).abs() < 1e-12);
        let lr = ModelSpec::LinReg {
            noise_var: 0.5,
            prior_mean: vec![0.1, -0.2],
            prior_cov: vec![vec![2.0, 0.3], vec![0.3, 1.0]],
            covariates: (0..4).map(|u| vec![1.0, u as f64]).collect(),
        };
        let (m0, c0) = conjugate_oracle(&lr, &Dataset::empty()).unwrap();
        assert_eq!(m0.as_slice(), &[0.1, -0.2]);
        assert_eq!(c0[(0, 1)], 0.3);
        let (m, c) = conjugate_oracle(&lr, &data).unwrap();
        let p = posterior_linreg(&lr, &data).unwrap();
        assert!((p.mean() - m).abs().max() < 1e-12);
        assert!((p.covariance() - c).abs().max() < 1e-12);
    }

    #[test]
    fn enumerate_small_cases() {
        let xs = [0.0, 1.0, 2.0];
        let cov: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let (best, _) = enumerate_oracle(3, 2, true, |s| linreg_log_det(&cov, 1.0, s, &[])).unwrap();
        assert_eq!(best, vec![0, 2]);
        let (all, _) = enumerate_oracle(4, 9, false, |s| s.len() as f64).unwrap();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn naive_transition_agrees_with_closed_form() {
        for &(l, m, dt) in &[(0.3, 1.7, 0.2), (2.0, 0.5, 3.0), (1.0, 1.0, 50.0)] {
            let a = naive_transition(l, m, dt);
            let b = ctmc_transition_matrix(l, m, dt).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[i][j] - b.get(i, j)).abs() < 1e-12);
                }
            }
            let fd = fd_pair_information(l, m, dt, [0.4, 0.6]);
            let an = ctmc_pair_information(l, m, dt, [0.4, 0.6]);
            assert!((&fd - &an).abs().max() <= 1e-6 * an.abs().max());
        }
    }

    #[test]
    fn quadrature_recovers_prior_moments() {
        let frame = StudyFrame::new(1, 1, vec![0.0, 1.0]).unwrap();
        let model = ModelSpec::TwoStateCtmc {
            lambda_prior: GammaPrior { shape: 2.0, rate: 1.0 },
            mu_prior: GammaPrior { shape: 3.0, rate: 2.0 },
            initial: [0.5, 0.5],
        };
        let q = quadrature_oracle(&model, &frame, &Dataset::empty(), 300).unwrap();
        assert!((q.mean[0] - 2.0).abs() < 0.005 * 2.0);
        assert!((q.mean[1] - 1.5).abs() < 0.005 * 1.5);
        assert!((q.variance[0] - 2.0).abs() < 0.005 * 2.0);
        assert!((q.variance[1] - 0.75).abs() < 0.005 * 0.75);
    }

    #[test]
    fn gls_without_clustering_is_iid() {
        let h = Hierarchy::new(6, vec![vec![0, 0, 0, 1, 1, 1]]).unwrap();
        let v = gls_oracle(&h, 1.0, &[0.0], 1.0, &[0, 1, 4]).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        let c = gls_oracle(&h, 1.0, &[0.5], 1.0, &[0, 1]).unwrap();
        assert!((c - 1.0 / (1.0 + 2.0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn report_compare() {
        assert!(OracleReport::compare("x", vec![1.0], vec![1.0 + 1e-13], 1e-12, false).pass);
        assert!(!OracleReport::compare("x", vec![1.0], vec![1.1], 0.05, true).pass);
    }
}

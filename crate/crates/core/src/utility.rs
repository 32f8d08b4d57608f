//! Utility functions, value functions and decision spaces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OdosError, Result};
use crate::inference::{InformationMatrix, Posterior};

/// Scalar target g(θ) = c'θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    Component(usize),
    Linear(Vec<f64>),
}

impl Functional {
    pub fn coefficients(&self, dim: usize) -> Result<DVector<f64>> {
        match self {
            Functional::Component(k) if *k < dim => {
                let mut c = DVector::zeros(dim);
                c[*k] = 1.0;
                Ok(c)
            }
            Functional::Component(k) => Err(OdosError::IndexOutOfBounds {
                what: "parameter component",
                index: *k,
                limit: dim,
            }),
            Functional::Linear(c) if c.len() == dim => Ok(DVector::from_column_slice(c)),
            Functional::Linear(c) => Err(OdosError::DimensionMismatch {
                expected: dim,
                found: c.len(),
            }),
        }
    }
}

/// One decision of a finite decision space with value v(d, θ) = constant + Σ coefficients_k θ_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRow {
    pub label: String,
    #[serde(default)]
    pub constant: f64,
    pub coefficients: Vec<f64>,
}

impl DecisionRow {
    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        self.constant + self.coefficients.iter().zip(theta.iter()).map(|(c, t)| c * t).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionSpace<'a> {
    Finite(&'a [DecisionRow]),
    RealLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    /// U ≡ value.
    Constant { value: f64 },
    /// U = −Var(g(θ) | data).
    NegPosteriorVariance { target: Functional },
    /// U = log det(I_new(θ) + I_obs(θ, x₀*)).
    DOptimality,
    /// U = −tr((I_new(θ) + I_obs(θ, x₀*))⁻¹).
    AOptimality,
    /// Point estimation of g(θ) with v(d, θ) = −(d − g(θ))².
    DecisionQuadratic { target: Functional },
    DecisionTable { decisions: Vec<DecisionRow> },
}

impl UtilitySpec {
    pub fn validate(&self, param_dim: usize) -> Result<()> {
        match self {
            UtilitySpec::Constant { value } if !value.is_finite() => {
                Err(OdosError::Validation("constant utility must be finite".into()))
            }
            UtilitySpec::NegPosteriorVariance { target } | UtilitySpec::DecisionQuadratic { target } => {
                target.coefficients(param_dim).map(|_| ())
            }
            UtilitySpec::DecisionTable { decisions } => {
                if decisions.is_empty() {
                    return Err(OdosError::Validation("decision table is empty".into()));
                }
                for d in decisions {
                    if d.coefficients.len() != param_dim {
                        return Err(OdosError::DimensionMismatch {
                            expected: param_dim,
                            found: d.coefficients.len(),
                        });
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_decision_based(&self) -> bool {
        matches!(self, UtilitySpec::DecisionQuadratic { .. } | UtilitySpec::DecisionTable { .. })
    }

    pub fn is_information_based(&self) -> bool {
        matches!(self, UtilitySpec::DOptimality | UtilitySpec::AOptimality)
    }

    pub fn decision_space(&self) -> Option<DecisionSpace<'_>> {
        match self {
            UtilitySpec::DecisionQuadratic { .. } => Some(DecisionSpace::RealLine),
            UtilitySpec::DecisionTable { decisions } => Some(DecisionSpace::Finite(decisions)),
            _ => None,
        }
    }
}

/// Strictly increasing utility of money U(v) applied on top of a value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskCurve {
    /// U(v) = intercept + slope·v with slope > 0.
    Linear { intercept: f64, slope: f64 },
    /// U(v) = −exp(−risk_aversion·v) with risk_aversion > 0.
    Exponential { risk_aversion: f64 },
}

impl RiskCurve {
    pub const IDENTITY: RiskCurve = RiskCurve::Linear {
        intercept: 0.0,
        slope: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RiskCurve::Linear { intercept, slope } => intercept.is_finite() && *slope > 0.0 && slope.is_finite(),
            RiskCurve::Exponential { risk_aversion } => *risk_aversion > 0.0 && risk_aversion.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(OdosError::Validation(format!("risk curve {self:?} is not strictly increasing")))
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        match self {
            RiskCurve::Linear { intercept, slope } => intercept + slope * v,
            RiskCurve::Exponential { risk_aversion } => -(-risk_aversion * v).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Point(f64),
    Label(String),
}

fn check_dims(a: &InformationMatrix, b: &InformationMatrix) -> Result<DMatrix<f64>> {
    if a.dim() != b.dim() {
        return Err(OdosError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(&a.matrix + &b.matrix)
}

/// log det(I_new + I_obs); −∞ when the sum is singular.
pub fn d_optimality_utility(expected_info: &InformationMatrix, observed_info: &InformationMatrix) -> Result<f64> {
    let total = check_dims(expected_info, observed_info)?;
    Ok(match total.cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    })
}

/// −trace((I_new + I_obs)⁻¹).
pub fn a_optimality_utility(expected_info: &InformationMatrix, observed_info: &InformationMatrix) -> Result<f64> {
    let total = check_dims(expected_info, observed_info)?;
    let inv = total
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(OdosError::SingularMatrix { condition: f64::INFINITY })?;
    Ok(-inv.trace())
}

/// −Var(g(θ)) under the posterior.
pub fn neg_posterior_variance(posterior: &Posterior, target: &Functional) -> Result<f64> {
    let c = target.coefficients(posterior.dim())?;
    Ok(-posterior.functional_variance(&c))
}

/// Inner maximum of the expected utility: max_d E[U(v(d, θ)) | data] with the identity curve.
pub fn optimal_decision(posterior: &Posterior, utility: &UtilitySpec) -> Result<(Decision, f64)> {
    optimal_decision_under(posterior, utility, RiskCurve::IDENTITY, 0.0)
}

/// max_d E[curve(v(d, θ) − shift) | data].
///
/// Ties between table rows go to the lexicographically smallest label.
pub fn optimal_decision_under(
    posterior: &Posterior,
    utility: &UtilitySpec,
    curve: RiskCurve,
    shift: f64,
) -> Result<(Decision, f64)> {
    match utility {
        UtilitySpec::DecisionQuadratic { target } => {
            let c = target.coefficients(posterior.dim())?;
            quadratic_decision(posterior, &c, curve, shift)
        }
        UtilitySpec::DecisionTable { decisions } => {
            let mut best: Option<(&DecisionRow, f64)> = None;
            for row in decisions {
                if row.coefficients.len() != posterior.dim() {
                    return Err(OdosError::DimensionMismatch {
                        expected: posterior.dim(),
                        found: row.coefficients.len(),
                    });
                }
                let value = expected_curve_value(posterior, row, curve, shift);
                let better = match best {
                    None => true,
                    Some((b, bv)) => value > bv || (value == bv && row.label < b.label),
                };
                if better {
                    best = Some((row, value));
                }
            }
            let (row, value) = best.ok_or_else(|| OdosError::Validation("decision table is empty".into()))?;
            Ok((Decision::Label(row.label.clone()), value))
        }
        other => Err(OdosError::InvalidArgument(format!(
            "utility {other:?} has no decision space"
        ))),
    }
}

/// E[curve(v(row, θ) − shift)].
fn expected_curve_value(posterior: &Posterior, row: &DecisionRow, curve: RiskCurve, shift: f64) -> f64 {
    let c = DVector::from_column_slice(&row.coefficients);
    match (curve, posterior) {
        (RiskCurve::Linear { intercept, slope }, _) => {
            intercept + slope * (row.constant + posterior.functional_mean(&c) - shift)
        }
        (RiskCurve::Exponential { risk_aversion: rho }, Posterior::ExactNormal { .. }) => {
            // normal moment generating function
            let m = row.constant + posterior.functional_mean(&c) - shift;
            let s2 = posterior.functional_variance(&c);
            -(-rho * m + 0.5 * rho * rho * s2).exp()
        }
        (curve, Posterior::Particles { draws, weights, .. }) => draws
            .iter()
            .zip(weights)
            .map(|(d, w)| w * curve.apply(row.value(&d.to_vector()) - shift))
            .sum(),
    }
}

fn quadratic_decision(
    posterior: &Posterior,
    c: &DVector<f64>,
    curve: RiskCurve,
    shift: f64,
) -> Result<(Decision, f64)> {
    let mean = posterior.functional_mean(c);
    match curve {
        RiskCurve::Linear { intercept, slope } => {
            let var = posterior.functional_variance(c);
            Ok((Decision::Point(mean), intercept + slope * (-var - shift)))
        }
        RiskCurve::Exponential { risk_aversion: rho } => match posterior {
            Posterior::ExactNormal { .. } => {
                // E exp(ρ(d − g)²) is minimized at the mean; finite only when 2ρs² < 1
                let s2 = posterior.functional_variance(c);
                let value = if 2.0 * rho * s2 < 1.0 {
                    -(rho * shift).exp() / (1.0 - 2.0 * rho * s2).sqrt()
                } else {
                    f64::NEG_INFINITY
                };
                Ok((Decision::Point(mean), value))
            }
            Posterior::Particles { draws, weights, .. } => {
                let g: Vec<f64> = draws.iter().map(|d| c.dot(&d.to_vector())).collect();
                // convex in d: Newton from the posterior mean
                let mut d = mean;
                for _ in 0..100 {
                    let (mut g1, mut g2) = (0.0, 0.0);
                    for (gi, w) in g.iter().zip(weights) {
                        let e = (rho * (d - gi).powi(2)).exp();
                        g1 += w * 2.0 * rho * (d - gi) * e;
                        g2 += w * (2.0 * rho + 4.0 * rho * rho * (d - gi).powi(2)) * e;
                    }
                    let step = g1 / g2;
                    d -= step;
                    if step.abs() <= 1e-14 * (1.0 + d.abs()) {
                        break;
                    }
                }
                let value = g
                    .iter()
                    .zip(weights)
                    .map(|(gi, w)| w * curve.apply(-(d - gi).powi(2) - shift))
                    .sum();
                Ok((Decision::Point(d), value))
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::InfoKind;
    use crate::models::ParameterDraw;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn info(m: DMatrix<f64>) -> InformationMatrix {
        InformationMatrix {
            matrix: m,
            kind: InfoKind::Expected,
        }
    }

    fn exact(mean: f64, var: f64) -> Posterior {
        Posterior::ExactNormal {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, var),
        }
    }

    fn particles(values: &[f64], weights: &[f64]) -> Posterior {
        Posterior::Particles {
            draws: values.iter().map(|&v| ParameterDraw::NormalMean(v)).collect(),
            weights: weights.to_vec(),
            ess: 1.0 / weights.iter().map(|w| w * w).sum::<f64>(),
        }
    }

    #[test]
    fn d_optimality_examples() {
        let i2 = info(DMatrix::identity(2, 2));
        let v = d_optimality_utility(&i2, &i2).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        let obs = info(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let zero = info(DMatrix::zeros(2, 2));
        let v = d_optimality_utility(&zero, &obs).unwrap();
        assert!((v - obs.matrix.determinant().ln()).abs() < 1e-12);
        assert_eq!(d_optimality_utility(&zero, &zero).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            d_optimality_utility(&zero, &info(DMatrix::zeros(3, 3))),
            Err(OdosError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn a_optimality_examples() {
        let i2 = info(DMatrix::identity(2, 2));
        assert!((a_optimality_utility(&i2, &i2).unwrap() + 1.0).abs() < 1e-12);
        let zero = info(DMatrix::zeros(3, 3));
        assert!((a_optimality_utility(&info(DMatrix::identity(3, 3)), &zero).unwrap() + 3.0).abs() < 1e-12);
        assert!(matches!(
            a_optimality_utility(&zero, &zero),
            Err(OdosError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn neg_posterior_variance_examples() {
        let point = particles(&[1.5, 1.5, 1.5], &[0.2, 0.3, 0.5]);
        assert_eq!(neg_posterior_variance(&point, &Functional::Component(0)).unwrap(), 0.0);
        assert_eq!(neg_posterior_variance(&exact(0.0, 0.5), &Functional::Component(0)).unwrap(), -0.5);
        let cov = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 0.4]);
        let p = Posterior::ExactNormal {
            mean: DVector::zeros(2),
            cov: cov.clone(),
        };
        let v = neg_posterior_variance(&p, &Functional::Linear(vec![1.0, 1.0])).unwrap();
        assert!((v + (0.7 + 2.0 * -0.2 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn optimal_decision_examples() {
        let quad = UtilitySpec::DecisionQuadratic {
            target: Functional::Component(0),
        };
        let (d, v) = optimal_decision(&particles(&[3.0], &[1.0]), &quad).unwrap();
        assert_eq!(d, Decision::Point(3.0));
        assert_eq!(v, 0.0);
        let (d, v) = optimal_decision(&exact(1.0, 0.5), &quad).unwrap();
        assert_eq!(d, Decision::Point(1.0));
        assert_eq!(v, -0.5);

        let table = stop_go();
        let (d, v) = optimal_decision(&exact(-0.2, 1.0), &table).unwrap();
        assert_eq!(d, Decision::Label("stop".into()));
        assert_eq!(v, 0.0);
        let (d, v) = optimal_decision(&exact(0.3, 1.0), &table).unwrap();
        assert_eq!(d, Decision::Label("go".into()));
        assert!((v - 0.3).abs() < 1e-15);
    }

    fn stop_go() -> UtilitySpec {
        UtilitySpec::DecisionTable {
            decisions: vec![
                DecisionRow {
                    label: "stop".into(),
                    constant: 0.0,
                    coefficients: vec![0.0],
                },
                DecisionRow {
                    label: "go".into(),
                    constant: 0.0,
                    coefficients: vec![1.0],
                },
            ],
        }
    }

    #[test]
    fn ties_go_to_smallest_label() {
        let (d, _) = optimal_decision(&exact(0.0, 1.0), &stop_go()).unwrap();
        assert_eq!(d, Decision::Label("go".into()));
    }

    #[test]
    fn non_decision_utility_rejected() {
        assert!(optimal_decision(&exact(0.0, 1.0), &UtilitySpec::DOptimality).is_err());
    }

    #[test]
    fn quadratic_value_equals_neg_variance_for_particles() {
        let mut rng = rng_from_seed(4);
        let values: Vec<f64> = (0..500).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let raw: Vec<f64> = (0..500).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let p = particles(&values, &weights);
        let target = Functional::Component(0);
        let (_, v) = optimal_decision(&p, &UtilitySpec::DecisionQuadratic { target: target.clone() }).unwrap();
        assert!((v - neg_posterior_variance(&p, &target).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exponential_quadratic_particles_match_closed_form() {
        // a large equally weighted normal sample approaches the Gaussian closed form
        let mut rng = rng_from_seed(5);
        let n = 200_000;
        let values: Vec<f64> = (0..n).map(|_| 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let p = particles(&values, &vec![1.0 / n as f64; n]);
        let quad = UtilitySpec::DecisionQuadratic {
            target: Functional::Component(0),
        };
        let curve = RiskCurve::Exponential { risk_aversion: 0.5 };
        let (_, v_particles) = optimal_decision_under(&p, &quad, curve, 0.1).unwrap();
        let (_, v_exact) = optimal_decision_under(&exact(0.0, 0.16), &quad, curve, 0.1).unwrap();
        assert!((v_particles - v_exact).abs() < 5e-3, "{v_particles} vs {v_exact}");
    }

    /// Independent brute-force argmax used as an oracle for random tables.
    fn brute_force(values: &[f64], weights: &[f64], rows: &[DecisionRow]) -> (String, f64) {
        let mut scored: Vec<(String, f64)> = rows
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                for i in 0..values.len() {
                    acc += weights[i] * (r.constant + r.coefficients[0] * values[i]);
                }
                (r.label.clone(), acc)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.remove(0)
    }

    #[test]
    fn table_argmax_matches_brute_force_on_random_tables() {
        let mut rng = rng_from_seed(6);
        for case in 0..20 {
            let n = 50;
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let rows: Vec<DecisionRow> = (0..rng.gen_range(1..6))
                .map(|k| DecisionRow {
                    label: format!("d{case}_{k}"),
                    constant: rng.gen_range(-1.0..1.0),
                    coefficients: vec![rng.gen_range(-2.0..2.0)],
                })
                .collect();
            let p = particles(&values, &weights);
            let (d, v) = optimal_decision(&p, &UtilitySpec::DecisionTable { decisions: rows.clone() }).unwrap();
            let (label, value) = brute_force(&values, &weights, &rows);
            assert_eq!(d, Decision::Label(label));
            assert!((v - value).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn affine_transform_keeps_decision(
            consts in proptest::collection::vec(-2.0f64..2.0, 2..5),
            slopes in proptest::collection::vec(-2.0f64..2.0, 5),
            a in -5.0f64..5.0, b in 0.1f64..10.0, mean in -1.0f64..1.0,
        ) {
            let rows: Vec<DecisionRow> = consts.iter().zip(&slopes).enumerate().map(|(k, (c, s))| DecisionRow {
                label: format!("d{k}"), constant: *c, coefficients: vec![*s],
            }).collect();
            let transformed: Vec<DecisionRow> = rows.iter().map(|r| DecisionRow {
                label: r.label.clone(), constant: a + b * r.constant,
                coefficients: r.coefficients.iter().map(|c| b * c).collect(),
            }).collect();
            let p = exact(mean, 0.3);
            let (d1, v1) = optimal_decision(&p, &UtilitySpec::DecisionTable { decisions: rows }).unwrap();
            let (d2, v2) = optimal_decision(&p, &UtilitySpec::DecisionTable { decisions: transformed }).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((v2 - (a + b * v1)).abs() < 1e-9 * (1.0 + v2.abs()));
        }

        #[test]
        fn d_optimality_monotone(
            base in proptest::collection::vec(-1.0f64..1.0, 4),
            inc in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let b = DMatrix::from_row_slice(2, 2, &base);
            let b = &b * b.transpose() + DMatrix::identity(2, 2) * 0.1;
            let i = DMatrix::from_row_slice(2, 2, &inc);
            let pd = &i * i.transpose() + DMatrix::identity(2, 2) * 1e-3;
            let zero = info(DMatrix::zeros(2, 2));
            let before = d_optimality_utility(&info(b.clone()), &zero).unwrap();
            let after_exp = d_optimality_utility(&info(&b + &pd), &zero).unwrap();
            let after_obs = d_optimality_utility(&info(b.clone()), &info(pd.clone())).unwrap();
            prop_assert!(after_exp > before);
            prop_assert!(after_obs > before);
        }
    }
}

//! Value of information: expected-value differences, risk-adjusted prices and eligibility.

use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostModel};
use crate::design::{design_support, Design};
use crate::error::{OdosError, Result};
use crate::expected::{current_posterior, expected_utility_plan, map_outer, updated_posterior, CurrentKnowledge, MCConfig, Problem};
use crate::frame::StudyFrame;
use crate::inference::Posterior;
use crate::plan::MeasurementPlan;
use crate::utility::{optimal_decision, optimal_decision_under, RiskCurve, UtilitySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoiMethod {
    Linear,
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiResult {
    pub value: f64,
    pub baseline: f64,
    pub method: VoiMethod,
    pub std_error: f64,
    /// Set when a negative Monte Carlo value was clamped to zero.
    pub warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eligibility {
    pub eligible: bool,
    pub margin: f64,
}

fn require_decision(utility: &UtilitySpec) -> Result<()> {
    if utility.is_decision_based() {
        Ok(())
    } else {
        Err(OdosError::InvalidArgument(
            "value of information needs a decision-based utility".into(),
        ))
    }
}

fn clamp(raw: f64) -> (f64, bool) {
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// No-new-data value max_d E[v(d, θ) | x₀*].
pub fn baseline_value(problem: &Problem<'_>, utility: &UtilitySpec, cfg: &MCConfig) -> Result<f64> {
    Ok(optimal_decision(&current_posterior(problem, cfg)?, utility)?.1)
}

/// v̄(r, x₀*) − v̄(η₀, x₀*) under a linear utility of value.
pub fn voi_linear(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<VoiResult> {
    require_decision(utility)?;
    cfg.validate()?;
    utility.validate(problem.model.param_dim())?;
    let baseline = baseline_value(problem, utility, cfg)?;
    if plan.is_empty() {
        return Ok(VoiResult {
            value: 0.0,
            baseline,
            method: VoiMethod::Linear,
            std_error: 0.0,
            warning: false,
        });
    }
    let est = expected_utility_plan(problem, plan, utility, cfg)?;
    let (value, warning) = clamp(est.mean - baseline);
    Ok(VoiResult {
        value,
        baseline,
        method: VoiMethod::Linear,
        std_error: est.std_error,
        warning,
    })
}

/// Support-weighted average of per-plan linear VoI for a random design.
pub fn voi_linear_design(
    problem: &Problem<'_>,
    design: &Design,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<VoiResult> {
    design.validate(problem.frame)?;
    let support = design_support(design, cfg.support_limit)?;
    let mut value = 0.0;
    let mut se = 0.0;
    let mut warning = false;
    let mut baseline = 0.0;
    for (plan, p) in &support {
        let r = voi_linear(problem, plan, utility, cfg)?;
        value += p * r.value;
        se += p * r.std_error;
        warning |= r.warning;
        baseline = r.baseline;
    }
    Ok(VoiResult {
        value,
        baseline,
        method: VoiMethod::Linear,
        std_error: se,
        warning,
    })
}

pub const PRICE_TOLERANCE: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 300;

/// Both sides of the indifference equation for a fixed plan, with the
/// post-data posteriors computed once so every evaluation of the left-hand
/// side reuses the same simulated data.
pub struct PriceEquation<'u> {
    posteriors: Vec<Posterior>,
    utility: &'u UtilitySpec,
    curve: RiskCurve,
    rhs: f64,
}

impl<'u> PriceEquation<'u> {
    pub fn new(
        problem: &Problem<'_>,
        plan: &MeasurementPlan,
        utility: &'u UtilitySpec,
        curve: RiskCurve,
        cfg: &MCConfig,
    ) -> Result<Self> {
        require_decision(utility)?;
        curve.validate()?;
        cfg.validate()?;
        problem.model.check_plan(plan, problem.frame)?;
        let now = current_posterior(problem, cfg)?;
        let rhs = optimal_decision_under(&now, utility, curve, 0.0)?.1;
        if !rhs.is_finite() {
            return Err(OdosError::Validation(format!(
                "expected utility under {curve:?} is not finite for the current posterior"
            )));
        }
        let posteriors = if plan.is_empty() {
            vec![now]
        } else {
            let current = CurrentKnowledge::build(problem, cfg)?;
            map_outer(cfg, |rng| {
                let theta = current.draw(problem.model, rng)?;
                updated_posterior(problem, plan, &theta, cfg, rng)
            })?
        };
        Ok(Self {
            posteriors,
            utility,
            curve,
            rhs,
        })
    }

    /// Average over simulated data of max_d E[U(v(d, θ) − price) | x₁*, x₀*].
    pub fn lhs(&self, price: f64) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.posteriors {
            total += optimal_decision_under(p, self.utility, self.curve, price)?.1;
        }
        Ok(total / self.posteriors.len() as f64)
    }

    /// max_d E[U(v(d, θ)) | x₀*].
    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    /// Standard error of the left-hand side at `price`.
    pub fn lhs_std_error(&self, price: f64) -> Result<f64> {
        let values = self
            .posteriors
            .iter()
            .map(|p| optimal_decision_under(p, self.utility, self.curve, price).map(|v| v.1))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::expected::UtilityEstimate::from_samples(&values).std_error)
    }
}

/// Price V solving E[U(v − V) | new data] = U(v) with no new data, by bisection.
pub fn voi_price(
    problem: &Problem<'_>,
    plan: &MeasurementPlan,
    utility: &UtilitySpec,
    curve: RiskCurve,
    cfg: &MCConfig,
) -> Result<VoiResult> {
    let eq = PriceEquation::new(problem, plan, utility, curve, cfg)?;
    let rhs = eq.rhs();
    let baseline = rhs;
    let done = |value: f64, warning: bool| -> Result<VoiResult> {
        let se = eq.lhs_std_error(value)?;
        let slope = match curve {
            RiskCurve::Linear { slope, .. } => slope,
            RiskCurve::Exponential { .. } => {
                // |dLHS/dV| by a central difference
                let h = 1e-6 * (1.0 + value.abs());
                ((eq.lhs(value - h)? - eq.lhs(value + h)?) / (2.0 * h)).abs()
            }
        };
        Ok(VoiResult {
            value,
            baseline,
            method: VoiMethod::Bisection,
            std_error: if slope > 0.0 { se / slope } else { se },
            warning,
        })
    };
    if plan.is_empty() {
        return done(0.0, false);
    }
    let at_zero = eq.lhs(0.0)?;
    if at_zero <= rhs {
        return done(0.0, at_zero < rhs);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while eq.lhs(hi)? >= rhs {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(OdosError::InvalidArgument("price equation has no bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if eq.lhs(mid)? >= rhs {
            lo = mid;
        } else {
            hi = mid;
        }
        let v = 0.5 * (lo + hi);
        if hi - lo <= PRICE_TOLERANCE * 1e-3 * (1.0 + v.abs())
            && (eq.lhs(v)? - rhs).abs() <= PRICE_TOLERANCE * (1.0 + rhs.abs())
        {
            break;
        }
    }
    done(0.5 * (lo + hi), false)
}

/// Eligible only when the value strictly exceeds the cost.
pub fn eligible(value: f64, cost: f64) -> Eligibility {
    Eligibility {
        eligible: value > cost,
        margin: value - cost,
    }
}

pub fn eligibility(plan: &MeasurementPlan, cost: &CostModel, frame: &StudyFrame, voi: &VoiResult) -> Result<Eligibility> {
    Ok(eligible(voi.value, plan_cost(plan, cost, frame)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::models::ModelSpec;
    use crate::utility::{DecisionRow, Functional};

    fn normal() -> ModelSpec {
        ModelSpec::NormalMean {
            noise_var: 1.0,
            prior_mean: 0.0,
            prior_var: 1.0,
        }
    }

    fn quad() -> UtilitySpec {
        UtilitySpec::DecisionQuadratic {
            target: Functional::Component(0),
        }
    }

    #[test]
    fn linear_voi_closed_forms() {
        let frame = StudyFrame::cross_section(100).unwrap();
        let model = normal();
        let empty = Dataset::empty();
        let problem = Problem::new(&frame, &model, &empty);
        let cfg = MCConfig::new(20, 4);
        let null = voi_linear(&problem, &MeasurementPlan::empty(), &quad(), &cfg).unwrap();
        assert_eq!(null.value, 0.0);
        let one = MeasurementPlan::units_at(&frame, [0], 0, 0).unwrap();
        assert!((voi_linear(&problem, &one, &quad(), &cfg).unwrap().value - 0.5).abs() < 1e-12);
        let many = MeasurementPlan::units_at(&frame, 0..99, 0, 0).unwrap();
        assert!((voi_linear(&problem, &many, &quad(), &cfg).unwrap().value - 0.99).abs() < 1e-12);
    }

    #[test]
    fn identity_price_matches_linear() {
        let frame = StudyFrame::cross_section(5).unwrap();
        let model = normal();
        let empty = Dataset::empty();
        let problem = Problem::new(&frame, &model, &empty);
        let u = UtilitySpec::DecisionTable {
            decisions: vec![
                DecisionRow { label: "a".into(), constant: 0.0, coefficients: vec![0.0] },
                DecisionRow { label: "b".into(), constant: 0.0, coefficients: vec![1.0] },
            ],
        };
        let plan = MeasurementPlan::units_at(&frame, 0..3, 0, 0).unwrap();
        let cfg = MCConfig::new(400, 8);
        let lin = voi_linear(&problem, &plan, &u, &cfg).unwrap();
        let price = voi_price(&problem, &plan, &u, RiskCurve::IDENTITY, &cfg).unwrap();
        assert!((lin.value - price.value).abs() <= 2.0 * (lin.std_error + 1e-6));
        // E[max(0, m)] with m ~ N(0, 3/4)
        let exact = (0.75f64).sqrt() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((lin.value - exact).abs() < 4.0 * lin.std_error);
    }

    #[test]
    fn exponential_price_has_closed_form() {
        let frame = StudyFrame::cross_section(2).unwrap();
        let model = normal();
        let empty = Dataset::empty();
        let problem = Problem::new(&frame, &model, &empty);
        let plan = MeasurementPlan::units_at(&frame, [0], 0, 0).unwrap();
        let rho = 0.2;
        let r = voi_price(&problem, &plan, &quad(), RiskCurve::Exponential { risk_aversion: rho }, &MCConfig::new(10, 1)).unwrap();
        let exact = ((1.0 - 2.0 * rho * 0.5) / (1.0 - 2.0 * rho)).ln() / (2.0 * rho);
        assert!((r.value - exact).abs() < 1e-6);
    }

    #[test]
    fn eligibility_is_strict() {
        assert!(eligible(0.5, 0.2).eligible);
        assert!((eligible(0.5, 0.2).margin - 0.3).abs() < 1e-15);
        assert!(!eligible(0.0, 0.1).eligible);
        assert!(!eligible(0.5, 0.5).eligible);
    }

    #[test]
    fn design_voi_averages_support() {
        let frame = StudyFrame::cross_section(4).unwrap();
        let model = normal();
        let empty = Dataset::empty();
        let problem = Problem::new(&frame, &model, &empty);
        let srs = Design::simple_random_sample(&frame, 2, vec![0], 0).unwrap();
        let r = voi_linear_design(&problem, &srs, &quad(), &MCConfig::new(5, 1)).unwrap();
        assert!((r.value - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }
}

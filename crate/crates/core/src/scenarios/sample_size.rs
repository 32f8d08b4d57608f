use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{cost_of, ReportRow, ScenarioReport};
use crate::cost::CostModel;
use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::expected::{expected_utility_plan, MCConfig, Problem, UtilityEstimate};
use crate::frame::StudyFrame;
use crate::models::ModelSpec;
use crate::plan::MeasurementPlan;
use crate::search::binary_search_sample_size;
use crate::seed::{derive_seed, tag};
use crate::utility::{Functional, UtilitySpec};

fn default_curve() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSize {
    pub target_variance: f64,
    pub n_max: usize,
    /// Extra sample sizes reported on the variance curve.
    #[serde(default = "default_curve")]
    pub curve: Vec<usize>,
}

/// Smallest n whose expected posterior variance of the mean is at most the target.
///
/// Each probed n is evaluated by forward simulation with its own derived
/// seed: draw θ from the prior, simulate n observations, update, record the
/// posterior variance, and average.
pub fn run_sample_size(
    model: &ModelSpec,
    spec: &SampleSize,
    cost: Option<&CostModel>,
    cfg: &MCConfig,
) -> Result<ScenarioReport> {
    let ModelSpec::NormalMean { prior_var, .. } = model else {
        return Err(OdosError::InvalidModel("sample-size scenario needs the normal-mean model".into()));
    };
    if !(spec.target_variance > 0.0) {
        return Err(OdosError::Validation("target_variance must be positive".into()));
    }
    let largest = spec.curve.iter().copied().chain([spec.n_max, 1]).max().unwrap_or(1);
    let frame = StudyFrame::cross_section(largest)?;
    let empty = Dataset::empty();
    let problem = Problem::new(&frame, model, &empty);
    let utility = UtilitySpec::NegPosteriorVariance {
        target: Functional::Component(0),
    };
    let plan_of = |n: usize| MeasurementPlan::units_at(&frame, 0..n, 0, 0);
    let objective = |n: usize| -> Result<UtilityEstimate> {
        let seed = derive_seed(cfg.seed, tag::SAMPLE_SIZE, n as u64);
        expected_utility_plan(&problem, &plan_of(n)?, &utility, &cfg.with_seed(seed))
    };
    let row = |n: usize, e: &UtilityEstimate| -> Result<ReportRow> {
        Ok(ReportRow {
            label: format!("n={n}"),
            n_or_delta: n as f64,
            utility: e.mean,
            se: e.std_error,
            cost: cost_of(&plan_of(n)?, cost, &frame)?,
            plan: format!("first {n} units"),
        })
    };

    let mut probed: Vec<(usize, UtilityEstimate)> = Vec::new();
    for &n in &spec.curve {
        if n <= spec.n_max || n <= largest {
            probed.push((n, objective(n)?));
        }
    }
    let search = if spec.target_variance >= *prior_var {
        crate::search::SampleSizeSearch {
            n: 0,
            evaluations: vec![(0, objective(0)?)],
        }
    } else {
        binary_search_sample_size(objective, -spec.target_variance, spec.n_max)?
    };
    probed.extend(search.evaluations.iter().cloned());
    probed.sort_by_key(|(n, _)| *n);
    probed.dedup_by_key(|(n, _)| *n);

    let rows = probed.iter().map(|(n, e)| row(*n, e)).collect::<Result<Vec<_>>>()?;
    let winner = rows.iter().position(|r| r.n_or_delta == search.n as f64);
    let curve: Vec<_> = probed
        .iter()
        .map(|(n, e)| json!({"n": n, "mean_posterior_variance": -e.mean, "se": e.std_error}))
        .collect();
    Ok(ScenarioReport {
        scenario: "sample-size".into(),
        seed: cfg.seed,
        inputs: json!({"model": model, "spec": spec, "mc": cfg}),
        rows,
        winner,
        details: json!({"n": search.n, "target_variance": spec.target_variance, "curve": curve}),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal() -> ModelSpec {
        ModelSpec::NormalMean {
            noise_var: 1.0,
            prior_mean: 0.0,
            prior_var: 1.0,
        }
    }

    #[test]
    fn finds_four_and_reports_curve() {
        let spec = SampleSize {
            target_variance: 0.2,
            n_max: 50,
            curve: default_curve(),
        };
        let r = run_sample_size(&normal(), &spec, None, &MCConfig::new(20, 3)).unwrap();
        assert_eq!(r.details["n"], 4);
        for row in &r.rows {
            assert!((row.utility + 1.0 / (1.0 + row.n_or_delta)).abs() < 1e-9);
        }
        assert_eq!(r.winner_row().unwrap().n_or_delta, 4.0);
    }

    #[test]
    fn prior_already_enough() {
        let spec = SampleSize {
            target_variance: 1.5,
            n_max: 10,
            curve: vec![],
        };
        let r = run_sample_size(&normal(), &spec, None, &MCConfig::new(5, 3)).unwrap();
        assert_eq!(r.details["n"], 0);
    }

    #[test]
    fn unreachable_is_infeasible() {
        let spec = SampleSize {
            target_variance: 0.001,
            n_max: 100,
            curve: vec![],
        };
        let e = run_sample_size(&normal(), &spec, None, &MCConfig::new(5, 3)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}

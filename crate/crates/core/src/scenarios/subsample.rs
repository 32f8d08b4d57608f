use itertools::Itertools;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{best_row, cost_of, describe_units, ReportRow, ScenarioReport};
use crate::cost::CostModel;
use crate::dataset::Dataset;
use crate::design::{binomial, Design};
use crate::error::{OdosError, Result};
use crate::expected::{expected_cost, expected_utility_design, expected_utility_plan, MCConfig, Problem, UtilityEstimate};
use crate::frame::StudyFrame;
use crate::models::{ModelSpec, OUTCOME_VARIABLE};
use crate::plan::{MeasurementPlan, Triple};
use crate::search::{
    design_search_select, exchange_improve, exhaustive_best, greedy_augment, Budget, CandidatePool, ExchangeRule,
    DEFAULT_SPACE_LIMIT,
};
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Srs,
    Extreme,
    GreedyDopt,
    ExchangeDopt,
    ExhaustiveDopt,
    DesignSearch,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Srs => "srs",
            Strategy::Extreme => "extreme",
            Strategy::GreedyDopt => "greedy-dopt",
            Strategy::ExchangeDopt => "exchange-dopt",
            Strategy::ExhaustiveDopt => "exhaustive-dopt",
            Strategy::DesignSearch => "design-search",
        }
    }
}

fn default_space_limit() -> usize {
    DEFAULT_SPACE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleSelection {
    pub n1: usize,
    pub strategies: Vec<Strategy>,
    /// Time index at which the second-stage outcome is measured.
    #[serde(default)]
    pub time_index: usize,
    /// Covariate column used by extreme selection and design search; defaults to the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_column: Option<usize>,
    /// Design-search target values on that column; defaults to alternating pool minimum and maximum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(default = "default_space_limit")]
    pub space_limit: usize,
}

impl SubsampleSelection {
    pub fn new(n1: usize, strategies: Vec<Strategy>) -> Self {
        Self {
            n1,
            strategies,
            time_index: 0,
            covariate_column: None,
            targets: None,
            space_limit: DEFAULT_SPACE_LIMIT,
        }
    }
}

/// What a strategy produced: a fixed plan or a random design.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Plan(MeasurementPlan),
    Random(Design),
}

fn covariate(model: &ModelSpec, unit: usize, column: Option<usize>) -> Result<f64> {
    let row = model
        .covariate_row(unit)
        .ok_or_else(|| OdosError::InvalidModel("selection needs a covariate model".into()))?;
    let c = column.unwrap_or(row.len() - 1);
    row.get(c).copied().ok_or(OdosError::IndexOutOfBounds {
        what: "covariate column",
        index: c,
        limit: row.len(),
    })
}

/// The `n1` units whose covariate lies farthest from the pool median; ties go to smaller indices.
pub fn extreme_selection(values: &[(usize, f64)], n1: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m == 0 {
        0.0
    } else if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    let mut ranked: Vec<(usize, f64)> = values.iter().map(|&(u, v)| (u, (v - median).abs())).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(n1).map(|(u, _)| u).collect();
    chosen.sort_unstable();
    chosen
}

/// Units still open for measurement of the outcome at `time_index`.
pub(crate) fn open_units(frame: &StudyFrame, data: &Dataset, time_index: usize) -> Vec<usize> {
    (0..frame.n_units())
        .filter(|&u| {
            frame.is_admissible(u, OUTCOME_VARIABLE, time_index)
                && data.get(&Triple::new(u, OUTCOME_VARIABLE, time_index)).observed().is_none()
        })
        .collect()
}

/// Applies one strategy to choose `spec.n1` of the open units.
pub fn select_units(
    problem: &Problem<'_>,
    strategy: Strategy,
    spec: &SubsampleSelection,
    utility: &UtilitySpec,
    cfg: &MCConfig,
) -> Result<Selection> {
    let frame = problem.frame;
    let t = spec.time_index;
    frame.check_time(t)?;
    let pool_units = open_units(frame, problem.prior_data, t);
    if spec.n1 > pool_units.len() {
        return Err(OdosError::PoolExhausted(format!(
            "{} units requested but only {} open slots at time index {t}",
            spec.n1,
            pool_units.len()
        )));
    }
    let plan_of = |units: Vec<usize>| MeasurementPlan::units_at(frame, units, OUTCOME_VARIABLE, t);
    let objective = |p: &MeasurementPlan| -> Result<UtilityEstimate> { expected_utility_plan(problem, p, utility, cfg) };
    let pool = || CandidatePool::units(frame, &pool_units, OUTCOME_VARIABLE, t, Budget::Exactly(spec.n1));
    let to_units = |pool: &CandidatePool<'_>, selected: &[usize]| -> Vec<usize> {
        let _ = pool;
        selected.iter().map(|&i| pool_units[i]).collect()
    };
    match strategy {
        Strategy::Srs => {
            if pool_units.len() == frame.n_units() {
                return Ok(Selection::Random(Design::simple_random_sample(
                    frame,
                    spec.n1,
                    vec![OUTCOME_VARIABLE],
                    t,
                )?));
            }
            let size = binomial(pool_units.len(), spec.n1);
            if size > cfg.support_limit as f64 {
                return Err(OdosError::SupportTooLarge {
                    size,
                    limit: cfg.support_limit,
                });
            }
            let plans = pool_units
                .iter()
                .copied()
                .combinations(spec.n1)
                .map(|units| plan_of(units).map(|p| (p, 1.0 / size)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Selection::Random(Design::WeightedPlans(plans)))
        }
        Strategy::Extreme => {
            let values = pool_units
                .iter()
                .map(|&u| covariate(problem.model, u, spec.covariate_column).map(|v| (u, v)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Selection::Plan(plan_of(extreme_selection(&values, spec.n1))?))
        }
        Strategy::GreedyDopt => {
            let pool = pool()?;
            let r = greedy_augment(&pool, objective)?;
            Ok(Selection::Plan(plan_of(to_units(&pool, &r.selected))?))
        }
        Strategy::ExchangeDopt => {
            let pool = pool()?;
            let g = greedy_augment(&pool, objective)?;
            let r = exchange_improve(g, &pool, objective, ExchangeRule::FirstImprovement)?;
            Ok(Selection::Plan(plan_of(to_units(&pool, &r.selected))?))
        }
        Strategy::ExhaustiveDopt => {
            let pool = pool()?;
            let r = exhaustive_best(&pool, objective, spec.space_limit)?;
            Ok(Selection::Plan(plan_of(to_units(&pool, &r.selected))?))
        }
        Strategy::DesignSearch => Ok(Selection::Plan(plan_of(design_search_units(
            problem.model,
            &pool_units,
            spec.n1,
            spec.covariate_column,
            spec.targets.as_deref(),
        )?)?)),
    }
}

/// Units matched to design-search targets on one covariate column, sorted.
///
/// Without explicit targets the points alternate between the pool minimum and maximum,
/// the two-point D-optimal design for a straight line.
pub fn design_search_units(
    model: &ModelSpec,
    pool_units: &[usize],
    n1: usize,
    column: Option<usize>,
    targets: Option<&[f64]>,
) -> Result<Vec<usize>> {
    let values = pool_units
        .iter()
        .map(|&u| covariate(model, u, column).map(|v| (u, DVector::from_element(1, v))))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = match targets {
        Some(t) if t.len() == n1 => t.to_vec(),
        Some(t) => {
            return Err(OdosError::DimensionMismatch {
                expected: n1,
                found: t.len(),
            })
        }
        None => {
            let lo = values.iter().map(|(_, v)| v[0]).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|(_, v)| v[0]).fold(f64::NEG_INFINITY, f64::max);
            (0..n1).map(|i| if i % 2 == 0 { lo } else { hi }).collect()
        }
    };
    let targets: Vec<DVector<f64>> = targets.into_iter().map(|x| DVector::from_element(1, x)).collect();
    let mut units = design_search_select(&targets, &values)?;
    units.sort_unstable();
    Ok(units)
}

/// Utility and expected cost of a selection.
pub(crate) fn evaluate_selection(
    problem: &Problem<'_>,
    selection: &Selection,
    utility: &UtilitySpec,
    cost: Option<&CostModel>,
    cfg: &MCConfig,
) -> Result<(UtilityEstimate, f64, String)> {
    match selection {
        Selection::Plan(p) => Ok((
            expected_utility_plan(problem, p, utility, cfg)?,
            cost_of(p, cost, problem.frame)?,
            describe_units(p),
        )),
        Selection::Random(d) => {
            let est = expected_utility_design(problem, d, utility, cfg)?;
            let c = match cost {
                Some(c) => expected_cost(d, c, problem.frame, cfg)?.mean,
                None => expected_cost(d, &CostModel::PerMeasurement { cost: 1.0 }, problem.frame, cfg)?.mean,
            };
            Ok((est, c, "random design".into()))
        }
    }
}

/// Compares selection strategies for measuring the outcome on `n1` units.
///
/// Every strategy's design is evaluated with the same utility and seed schedule.
pub fn run_subsample_selection(
    frame: &StudyFrame,
    model: &ModelSpec,
    first_stage: &Dataset,
    spec: &SubsampleSelection,
    utility: &UtilitySpec,
    cost: Option<&CostModel>,
    cfg: &MCConfig,
) -> Result<ScenarioReport> {
    if !matches!(model, ModelSpec::LinReg { .. }) {
        return Err(OdosError::InvalidModel("subsample selection needs the regression model".into()));
    }
    if spec.strategies.is_empty() {
        return Err(OdosError::Validation("no strategies given".into()));
    }
    first_stage.validate(frame)?;
    let problem = Problem::new(frame, model, first_stage);
    let mut rows = Vec::new();
    let mut chosen = Vec::new();
    for &s in &spec.strategies {
        let selection = select_units(&problem, s, spec, utility, cfg)?;
        let (est, c, summary) = evaluate_selection(&problem, &selection, utility, cost, cfg)?;
        rows.push(ReportRow {
            label: s.name().into(),
            n_or_delta: spec.n1 as f64,
            utility: est.mean,
            se: est.std_error,
            cost: c,
            plan: summary,
        });
        chosen.push(match selection {
            Selection::Plan(p) => json!(p.units()),
            Selection::Random(_) => serde_json::Value::Null,
        });
    }
    let winner = best_row(&rows);
    Ok(ScenarioReport {
        scenario: "subsample-selection".into(),
        seed: cfg.seed,
        inputs: json!({"model": model, "spec": spec, "utility": utility, "cost": cost, "mc": cfg,
                       "first_stage_observations": first_stage.observed_count()}),
        rows,
        winner,
        details: json!({"selected_units": chosen}),
    })
}

//! Command execution behind the `odos` binary, usable without a process boundary.

use std::path::Path;

use serde_json::{json, Map, Value as Json};

use crate::config::{RunConfig, ScenarioConfig, SearchConfig, SearchStrategy};
use crate::cost::{plan_cost, CostModel};
use crate::dataset::Dataset;
use crate::design::Design;
use crate::error::{OdosError, Result};
use crate::expected::{expected_cost, expected_utility_design, expected_utility_plan, MCConfig, Problem, UtilityEstimate};
use crate::frame::StudyFrame;
use crate::models::OUTCOME_VARIABLE;
use crate::plan::MeasurementPlan;
use crate::scenarios::{self, write_table, ReportRow, ScenarioReport};
use crate::search::{exchange_improve, exhaustive_best, greedy_augment, Budget, CandidatePool, SearchResult};
use crate::utility::{RiskCurve, UtilitySpec};
use crate::voi::{eligible, voi_linear, voi_linear_design, voi_price, VoiResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Evaluate,
    Optimize(OptimizeOverrides),
    Voi,
    Scenario(String),
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Evaluate => "evaluate".into(),
            Command::Optimize(_) => "optimize".into(),
            Command::Voi => "voi".into(),
            Command::Scenario(s) => format!("scenario {s}"),
        }
    }
}

/// Command-line replacements for fields of the search block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizeOverrides {
    pub strategy: Option<SearchStrategy>,
    pub budget_n: Option<usize>,
    pub budget_cost: Option<f64>,
}

/// Result of one command: the report body and the table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Json,
    pub rows: Vec<ReportRow>,
}

struct Context {
    frame: StudyFrame,
    data: Dataset,
    mc: MCConfig,
}

fn context(cfg: &RunConfig, base: &Path) -> Result<Context> {
    let frame = cfg.build_frame()?;
    let data = cfg.dataset(&frame, base)?;
    data.validate(&frame)?;
    Ok(Context {
        frame,
        data,
        mc: cfg.mc_config(),
    })
}

fn require_utility(cfg: &RunConfig, command: &str) -> Result<UtilitySpec> {
    cfg.utility
        .clone()
        .ok_or_else(|| OdosError::Validation(format!("utility block is required for {command}")))
}

fn estimate_json(e: &UtilityEstimate) -> Json {
    json!({"mean": e.mean, "std_error": e.std_error, "n_samples": e.n_samples})
}

/// Runs `command` against `cfg`; `base` anchors relative data paths.
pub fn execute(cfg: &RunConfig, command: &Command, base: &Path) -> Result<RunOutput> {
    match command {
        Command::Evaluate => evaluate(cfg, base),
        Command::Optimize(o) => optimize(cfg, o, base),
        Command::Voi => voi(cfg, base),
        Command::Scenario(name) => scenario(cfg, name, base),
    }
}

fn expected_size(design: &Design, frame: &StudyFrame, mc: &MCConfig) -> Result<f64> {
    Ok(expected_cost(design, &CostModel::PerMeasurement { cost: 1.0 }, frame, mc)?.mean)
}

fn design_cost(cfg: &RunConfig, design: &Design, ctx: &Context) -> Result<Option<UtilityEstimate>> {
    cfg.cost
        .as_ref()
        .map(|c| expected_cost(design, c, &ctx.frame, &ctx.mc))
        .transpose()
}

fn evaluate(cfg: &RunConfig, base: &Path) -> Result<RunOutput> {
    let ctx = context(cfg, base)?;
    let utility = require_utility(cfg, "evaluate")?;
    let design = cfg.build_design(&ctx.frame)?;
    let problem = Problem::new(&ctx.frame, &cfg.model, &ctx.data);
    let est = expected_utility_design(&problem, &design, &utility, &ctx.mc)?;
    let cost = design_cost(cfg, &design, &ctx)?;
    let size = expected_size(&design, &ctx.frame, &ctx.mc)?;
    let rows = vec![ReportRow {
        label: "design".into(),
        n_or_delta: size,
        utility: est.mean,
        se: est.std_error,
        cost: cost.map_or(size, |c| c.mean),
        plan: if design.is_deterministic() { "deterministic".into() } else { "random".into() },
    }];
    Ok(RunOutput {
        report: json!({
            "utility": estimate_json(&est),
            "expected_cost": cost.as_ref().map(estimate_json),
            "expected_measurements": size,
            "support_size": design.support_size(),
        }),
        rows,
    })
}

fn search_config(cfg: &RunConfig, o: &OptimizeOverrides) -> Result<SearchConfig> {
    let mut s = cfg
        .search
        .clone()
        .ok_or_else(|| OdosError::Validation("search block is required for optimize".into()))?;
    if let Some(st) = o.strategy {
        s.strategy = st;
    }
    match (o.budget_n, o.budget_cost) {
        (Some(_), Some(_)) => {
            return Err(OdosError::InvalidArgument("give either --budget-n or --budget-cost, not both".into()))
        }
        (Some(n), None) => s.budget = Budget::AtMost(n),
        (None, Some(c)) => {
            let model = cfg
                .cost
                .clone()
                .ok_or_else(|| OdosError::Validation("--budget-cost needs a cost block".into()))?;
            s.budget = Budget::Cost { limit: c, model };
        }
        (None, None) => {}
    }
    Ok(s)
}

fn optimize(cfg: &RunConfig, o: &OptimizeOverrides, base: &Path) -> Result<RunOutput> {
    let ctx = context(cfg, base)?;
    let utility = require_utility(cfg, "optimize")?;
    let s = search_config(cfg, o)?;
    let problem = Problem::new(&ctx.frame, &cfg.model, &ctx.data);
    let units: Vec<usize> = s.units.clone().unwrap_or_else(|| (0..ctx.frame.n_units()).collect());
    let objective = |p: &MeasurementPlan| expected_utility_plan(&problem, p, &utility, &ctx.mc);
    let result: SearchResult = match s.strategy {
        SearchStrategy::Exhaustive => {
            let pool = CandidatePool::units(&ctx.frame, &units, OUTCOME_VARIABLE, s.time_index, s.budget.clone())?;
            exhaustive_best(&pool, objective, s.space_limit)?
        }
        SearchStrategy::Greedy => {
            let pool = CandidatePool::units(&ctx.frame, &units, OUTCOME_VARIABLE, s.time_index, s.budget.clone())?;
            greedy_augment(&pool, objective)?
        }
        SearchStrategy::GreedyExchange => {
            let pool = CandidatePool::units(&ctx.frame, &units, OUTCOME_VARIABLE, s.time_index, s.budget.clone())?;
            let g = greedy_augment(&pool, objective)?;
            exchange_improve(g, &pool, objective, s.exchange_rule)?
        }
        SearchStrategy::DesignSearch => {
            let n = match &s.budget {
                Budget::AtMost(n) | Budget::Exactly(n) => *n,
                Budget::Cost { .. } => {
                    return Err(OdosError::InvalidArgument("design search needs a cardinality budget".into()))
                }
            };
            let chosen = scenarios::design_search_units(&cfg.model, &units, n, s.covariate_column, s.targets.as_deref())?;
            let plan = MeasurementPlan::units_at(&ctx.frame, chosen, OUTCOME_VARIABLE, s.time_index)?;
            let value = objective(&plan)?;
            let selected = plan.units().iter().filter_map(|u| units.iter().position(|x| x == u)).collect();
            SearchResult {
                plan,
                selected,
                utility: value,
                trace: vec![],
                evaluations: 1,
            }
        }
    };
    let cost = match &cfg.cost {
        Some(c) => plan_cost(&result.plan, c, &ctx.frame)?,
        None => result.plan.cardinality() as f64,
    };
    let mut rows: Vec<ReportRow> = result
        .trace
        .iter()
        .map(|t| ReportRow {
            label: format!("iteration {}", t.iteration),
            n_or_delta: t.cardinality as f64,
            utility: t.utility,
            se: 0.0,
            cost: f64::NAN,
            plan: String::new(),
        })
        .collect();
    rows.push(ReportRow {
        label: "best".into(),
        n_or_delta: result.plan.cardinality() as f64,
        utility: result.utility.mean,
        se: result.utility.std_error,
        cost,
        plan: scenarios_describe(&result.plan),
    });
    Ok(RunOutput {
        report: json!({
            "strategy": s.strategy,
            "budget": s.budget,
            "plan": result.plan,
            "units": result.plan.units(),
            "utility": estimate_json(&result.utility),
            "cost": cost,
            "trace": result.trace,
            "evaluations": result.evaluations,
        }),
        rows,
    })
}

fn scenarios_describe(plan: &MeasurementPlan) -> String {
    let units: Vec<String> = plan.units().iter().map(|u| u.to_string()).collect();
    format!("units [{}]", units.join(" "))
}

fn voi(cfg: &RunConfig, base: &Path) -> Result<RunOutput> {
    let ctx = context(cfg, base)?;
    let utility = require_utility(cfg, "voi")?;
    let design = cfg.build_design(&ctx.frame)?;
    let problem = Problem::new(&ctx.frame, &cfg.model, &ctx.data);
    let curve = cfg.risk_curve.unwrap_or(RiskCurve::IDENTITY);
    let linear = matches!(curve, RiskCurve::Linear { intercept, slope } if intercept == 0.0 && slope == 1.0);
    let result: VoiResult = match (&design, linear) {
        (Design::Deterministic(p), true) => voi_linear(&problem, p, &utility, &ctx.mc)?,
        (Design::Deterministic(p), false) => voi_price(&problem, p, &utility, curve, &ctx.mc)?,
        (_, true) => voi_linear_design(&problem, &design, &utility, &ctx.mc)?,
        (_, false) => {
            return Err(OdosError::InvalidArgument(
                "risk-adjusted prices are available for deterministic designs only".into(),
            ))
        }
    };
    let cost = design_cost(cfg, &design, &ctx)?.map_or(0.0, |c| c.mean);
    let e = eligible(result.value, cost);
    let rows = vec![ReportRow {
        label: "voi".into(),
        n_or_delta: expected_size(&design, &ctx.frame, &ctx.mc)?,
        utility: result.value,
        se: result.std_error,
        cost,
        plan: String::new(),
    }];
    Ok(RunOutput {
        report: json!({
            "value": result.value,
            "baseline": result.baseline,
            "method": result.method,
            "std_error": result.std_error,
            "warning": result.warning,
            "eligible": e.eligible,
            "margin": e.margin,
            "expected_cost": cost,
        }),
        rows,
    })
}

fn scenario(cfg: &RunConfig, name: &str, base: &Path) -> Result<RunOutput> {
    let block = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| OdosError::Validation("scenario block is required".into()))?;
    if block.name() != name {
        return Err(OdosError::Validation(format!(
            "scenario block is {} but the command asks for {name}",
            block.name()
        )));
    }
    let ctx = context(cfg, base)?;
    let utility = cfg.utility.clone().unwrap_or(UtilitySpec::DOptimality);
    let report: ScenarioReport = match block {
        ScenarioConfig::SampleSize(s) => scenarios::run_sample_size(&cfg.model, s, cfg.cost.as_ref(), &ctx.mc)?,
        ScenarioConfig::HierarchicalSizing(s) => {
            let cost = cfg
                .cost
                .as_ref()
                .ok_or_else(|| OdosError::Validation("hierarchical sizing needs a cost block".into()))?;
            let mut r = scenarios::run_hierarchical_sizing(&ctx.frame, &cfg.model, cost, s)?;
            r.seed = cfg.seed;
            r
        }
        ScenarioConfig::SubsampleSelection(s) => {
            scenarios::run_subsample_selection(&ctx.frame, &cfg.model, &ctx.data, s, &utility, cfg.cost.as_ref(), &ctx.mc)?
        }
        ScenarioConfig::MarkovTiming(s) => scenarios::run_markov_timing(&cfg.model, s, &utility, &ctx.mc)?,
        ScenarioConfig::Remeasurement(s) => {
            scenarios::run_remeasurement(&ctx.frame, &cfg.model, &ctx.data, s, &utility, cfg.cost.as_ref(), &ctx.mc)?
        }
    };
    let rows = report.rows.clone();
    Ok(RunOutput {
        report: serde_json::to_value(&report)?,
        rows,
    })
}

/// Wraps a command result with version, seed, command and optional timestamp.
pub fn finalize_report(cfg: &RunConfig, command: &Command, output: &RunOutput, timestamp: Option<u64>) -> Json {
    let mut map = Map::new();
    map.insert("odos_version".into(), json!(VERSION));
    map.insert("command".into(), json!(command.name()));
    map.insert("seed".into(), json!(cfg.seed));
    if let Some(t) = timestamp {
        map.insert("timestamp".into(), json!(t));
    }
    map.insert("result".into(), output.report.clone());
    Json::Object(map)
}

/// Writes `<prefix>.report.json` and `<prefix>.table.csv`.
pub fn write_outputs(prefix: &str, report: &Json, rows: &[ReportRow]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(format!("{prefix}.report.json"), text)?;
    let file = std::fs::File::create(format!("{prefix}.table.csv"))?;
    write_table(rows, file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg(extra: &str) -> RunConfig {
        parse_config(&format!(
            r#"{{"seed": 1, "frame": {{"n_units": 6}},
                "model": {{"normal_mean": {{"noise_var": 1.0, "prior_mean": 0.0, "prior_var": 1.0}}}},
                "mc": {{"outer_draws": 20}}, {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn evaluate_four_unit_plan() {
        let c = cfg(r#""utility": {"neg_posterior_variance": {"target": {"component": 0}}},
            "design": {"deterministic": {"plan": [
                {"unit": 0, "variable": 0, "time_index": 0}, {"unit": 1, "variable": 0, "time_index": 0},
                {"unit": 2, "variable": 0, "time_index": 0}, {"unit": 3, "variable": 0, "time_index": 0}]}}"#);
        let out = execute(&c, &Command::Evaluate, Path::new("")).unwrap();
        assert!((out.report["utility"]["mean"].as_f64().unwrap() + 0.2).abs() < 1e-12);
    }

    #[test]
    fn optimize_zero_budget_gives_empty_plan() {
        let c = cfg(r#""utility": {"neg_posterior_variance": {"target": {"component": 0}}},
            "search": {"strategy": "greedy", "budget": {"at_most": 3}}"#);
        let o = OptimizeOverrides {
            budget_n: Some(0),
            ..Default::default()
        };
        let out = execute(&c, &Command::Optimize(o), Path::new("")).unwrap();
        assert_eq!(out.report["units"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn voi_report_fields() {
        let c = cfg(r#""utility": {"decision_quadratic": {"target": {"component": 0}}},
            "cost": {"per_measurement": {"cost": 0.1}},
            "design": {"deterministic": {"plan": [{"unit": 0, "variable": 0, "time_index": 0}]}}"#);
        let out = execute(&c, &Command::Voi, Path::new("")).unwrap();
        assert!((out.report["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(out.report["eligible"], true);
        assert!((out.report["margin"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    }
}

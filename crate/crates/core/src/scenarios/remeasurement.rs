use serde::{Deserialize, Serialize};
use serde_json::json;

use super::subsample::{evaluate_selection, open_units, select_units, Selection, Strategy, SubsampleSelection};
use super::{ReportRow, ScenarioReport};
use crate::cost::CostModel;
use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::expected::{expected_utility_plan, MCConfig, Problem};
use crate::frame::StudyFrame;
use crate::models::{sample_prior, simulate_data_given, ModelSpec};
use crate::plan::MeasurementPlan;
use crate::search::{greedy_augment, Budget, CandidatePool};
use crate::seed::{child_rng, derive_seed, tag};
use crate::utility::UtilitySpec;

fn default_strategy() -> Strategy {
    Strategy::GreedyDopt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Remeasurement {
    pub rounds: usize,
    pub n1: usize,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Time index of the first round; round r measures at `start_time + r`.
    #[serde(default)]
    pub start_time: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_column: Option<usize>,
}

/// Repeated selection rounds, each folding simulated measurements into the data.
///
/// Round 0 runs with the configured seed, so one round reproduces the
/// corresponding subsample-selection row. Measurements are simulated from a
/// single true parameter drawn from the prior.
pub fn run_remeasurement(
    frame: &StudyFrame,
    model: &ModelSpec,
    first_stage: &Dataset,
    spec: &Remeasurement,
    utility: &UtilitySpec,
    cost: Option<&CostModel>,
    cfg: &MCConfig,
) -> Result<ScenarioReport> {
    if !matches!(model, ModelSpec::LinReg { .. }) {
        return Err(OdosError::InvalidModel("remeasurement needs the regression model".into()));
    }
    if spec.rounds == 0 {
        return Err(OdosError::Validation("rounds must be at least 1".into()));
    }
    if spec.strategy == Strategy::Srs {
        return Err(OdosError::Validation("remeasurement needs a deterministic strategy".into()));
    }
    first_stage.validate(frame)?;
    let truth = sample_prior(model, &mut child_rng(derive_seed(cfg.seed, tag::TRUTH, 0), 0));
    let mut data = first_stage.clone();
    let mut cumulative = MeasurementPlan::empty();
    let mut rows = Vec::new();
    let mut per_round = Vec::new();
    for r in 0..spec.rounds {
        let t = spec.start_time + r;
        if t >= frame.n_times() {
            return Err(OdosError::PoolExhausted(format!("no time slot left for round {r}")));
        }
        let round_cfg = if r == 0 {
            cfg.clone()
        } else {
            cfg.with_seed(derive_seed(cfg.seed, tag::ROUND, r as u64))
        };
        let sel_spec = SubsampleSelection {
            time_index: t,
            covariate_column: spec.covariate_column,
            ..SubsampleSelection::new(spec.n1, vec![spec.strategy])
        };
        let problem = Problem::new(frame, model, &data);
        let selection = select_units(&problem, spec.strategy, &sel_spec, utility, &round_cfg)?;
        let (est, c, summary) = evaluate_selection(&problem, &selection, utility, cost, &round_cfg)?;
        let Selection::Plan(plan) = selection else {
            unreachable!("deterministic strategies return plans")
        };
        rows.push(ReportRow {
            label: format!("round {r}"),
            n_or_delta: r as f64,
            utility: est.mean,
            se: est.std_error,
            cost: c,
            plan: summary,
        });
        per_round.push(json!({"round": r, "time_index": t, "units": plan.units()}));
        let mut rng = child_rng(derive_seed(cfg.seed, tag::ROUND, r as u64), u64::MAX);
        let new = simulate_data_given(model, frame, &truth, &plan, &data, &mut rng)?;
        data = data.merged(&new)?;
        cumulative = cumulative.union(&plan);
    }

    // reference: one round with the combined budget, if the slots allow it
    let final_value = expected_utility_plan(&Problem::new(frame, model, &data), &MeasurementPlan::empty(), utility, cfg)?;
    let combined = spec.rounds * spec.n1;
    let open = open_units(frame, first_stage, spec.start_time);
    let single_round = if combined <= open.len() {
        let problem = Problem::new(frame, model, first_stage);
        let pool = CandidatePool::units(frame, &open, 0, spec.start_time, Budget::Exactly(combined))?;
        let g = greedy_augment(&pool, |p| expected_utility_plan(&problem, p, utility, cfg))?;
        Some(g.utility.mean)
    } else {
        None
    };
    let winner = Some(rows.len() - 1);
    Ok(ScenarioReport {
        scenario: "remeasurement".into(),
        seed: cfg.seed,
        inputs: json!({"model": model, "spec": spec, "utility": utility, "cost": cost, "mc": cfg}),
        rows,
        winner,
        details: json!({
            "rounds": per_round,
            "cumulative_plan": cumulative,
            "truth": truth.to_vector().as_slice(),
            "sequential_final_utility": final_value.mean,
            "single_round_utility": single_round,
            "gap": single_round.map(|s| final_value.mean - s),
        }),
    })
}

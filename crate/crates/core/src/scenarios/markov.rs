use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ReportRow, ScenarioReport};
use crate::dataset::Dataset;
use crate::error::{OdosError, Result};
use crate::expected::{expected_utility_plan, MCConfig, Problem};
use crate::frame::StudyFrame;
use crate::models::{ModelSpec, OUTCOME_VARIABLE};
use crate::plan::MeasurementPlan;
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovTiming {
    /// Total number of observations C₀.
    pub total_observations: usize,
    /// Observations per included unit n₁.
    pub n1_values: Vec<usize>,
    /// Equal spacings Δ between consecutive observations of a unit.
    pub deltas: Vec<f64>,
}

/// Frame with `units` units observed at 0, Δ, …, (n₁ − 1)Δ.
pub fn equidistant_frame(units: usize, n1: usize, delta: f64) -> Result<StudyFrame> {
    StudyFrame::new(units, 1, (0..n1).map(|k| k as f64 * delta).collect())
}

/// Utility surface over (n₁, Δ) for equidistant panels of a two-state chain.
///
/// For each pair, C₀/n₁ units are each observed n₁ times. Every cell uses
/// the same seed, so the prior draws are shared across the surface.
pub fn run_markov_timing(model: &ModelSpec, spec: &MarkovTiming, utility: &UtilitySpec, cfg: &MCConfig) -> Result<ScenarioReport> {
    if !matches!(model, ModelSpec::TwoStateCtmc { .. }) {
        return Err(OdosError::InvalidModel("markov timing needs the two-state chain model".into()));
    }
    if spec.n1_values.is_empty() || spec.deltas.is_empty() {
        return Err(OdosError::InvalidGrid("grid is empty".into()));
    }
    for &n1 in &spec.n1_values {
        if n1 == 0 || !spec.total_observations.is_multiple_of(n1) || spec.total_observations == 0 {
            return Err(OdosError::InvalidGrid(format!(
                "total {} is not a positive multiple of n1 = {n1}",
                spec.total_observations
            )));
        }
    }
    if let Some(d) = spec.deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(OdosError::InvalidGrid(format!("spacing {d} must be positive and finite")));
    }
    let empty = Dataset::empty();
    let mut rows = Vec::new();
    let mut surface = Vec::new();
    for &n1 in &spec.n1_values {
        let units = spec.total_observations / n1;
        let mut line = Vec::new();
        for &delta in &spec.deltas {
            let frame = equidistant_frame(units, n1, delta)?;
            let plan = MeasurementPlan::from_triples(
                &frame,
                (0..units).flat_map(|u| (0..n1).map(move |k| (u, OUTCOME_VARIABLE, k))),
            )?;
            let est = expected_utility_plan(&Problem::new(&frame, model, &empty), &plan, utility, cfg)?;
            line.push(est.mean);
            rows.push(ReportRow {
                label: format!("n1={n1}"),
                n_or_delta: delta,
                utility: est.mean,
                se: est.std_error,
                cost: plan.cardinality() as f64,
                plan: format!("{units} units x {n1} times"),
            });
        }
        surface.push(line);
    }
    let winner = super::best_row(&rows);
    let argmax = winner.map(|w| {
        let (i, j) = (w / spec.deltas.len(), w % spec.deltas.len());
        json!({"n1": spec.n1_values[i], "delta": spec.deltas[j], "row": i, "column": j})
    });
    Ok(ScenarioReport {
        scenario: "markov-timing".into(),
        seed: cfg.seed,
        inputs: json!({"model": model, "spec": spec, "utility": utility, "mc": cfg}),
        rows,
        winner,
        details: json!({"surface": surface, "argmax": argmax}),
    })
}

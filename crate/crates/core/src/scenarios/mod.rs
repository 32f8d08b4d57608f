//! End-to-end study-design scenarios producing tabular reports.

mod hierarchical;
mod markov;
mod remeasurement;
mod sample_size;
mod subsample;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostModel};
use crate::error::Result;
use crate::frame::StudyFrame;
use crate::plan::MeasurementPlan;

pub use hierarchical::{random_intercept_variance, run_hierarchical_sizing, Allocation, HierarchicalSizing};
pub use markov::{equidistant_frame, run_markov_timing, MarkovTiming};
pub use remeasurement::{run_remeasurement, Remeasurement};
pub use sample_size::{run_sample_size, SampleSize};
pub use subsample::{design_search_units, extreme_selection, run_subsample_selection, select_units, Selection, Strategy, SubsampleSelection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub n_or_delta: f64,
    pub utility: f64,
    pub se: f64,
    pub cost: f64,
    /// Short description of the evaluated plan or allocation.
    pub plan: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub inputs: serde_json::Value,
    pub rows: Vec<ReportRow>,
    /// Index into `rows` of the selected configuration.
    pub winner: Option<usize>,
    pub details: serde_json::Value,
}

impl ScenarioReport {
    pub fn winner_row(&self) -> Option<&ReportRow> {
        self.winner.map(|w| &self.rows[w])
    }
}

/// Writes rows as CSV with columns label, n_or_delta, utility, se, cost.
pub fn write_table<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "n_or_delta", "utility", "se", "cost"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.n_or_delta.to_string(),
            r.utility.to_string(),
            r.se.to_string(),
            r.cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Index of the largest utility; ties keep the earliest row.
pub(crate) fn best_row(rows: &[ReportRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.utility.is_nan() {
            continue;
        }
        if best.is_none_or(|b| r.utility > rows[b].utility) {
            best = Some(i);
        }
    }
    best
}

/// Plan cost under `cost`, or the number of measurements when no cost model is given.
pub(crate) fn cost_of(plan: &MeasurementPlan, cost: Option<&CostModel>, frame: &StudyFrame) -> Result<f64> {
    match cost {
        Some(c) => plan_cost(plan, c, frame),
        None => Ok(plan.cardinality() as f64),
    }
}

pub(crate) fn describe_units(plan: &MeasurementPlan) -> String {
    let units: Vec<String> = plan.units().iter().map(|u| u.to_string()).collect();
    format!("units [{}]", units.join(" "))
}

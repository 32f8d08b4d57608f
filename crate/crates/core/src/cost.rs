//! Data-collection cost models.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::plan::MeasurementPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CostModel {
    /// Fixed cost per measured triple.
    PerMeasurement { cost: f64 },
    /// `level_costs[k]` is paid once for every level-k cluster with a selected unit;
    /// level 0 is the unit level.
    Hierarchical { level_costs: Vec<f64> },
    Sum(Vec<CostModel>),
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            CostModel::PerMeasurement { cost } => check_nonnegative(*cost),
            CostModel::Hierarchical { level_costs } => {
                if level_costs.is_empty() {
                    return Err(OdosError::Validation(
                        "hierarchical cost needs at least one level".into(),
                    ));
                }
                level_costs.iter().try_for_each(|&c| check_nonnegative(c))
            }
            CostModel::Sum(parts) => parts.iter().try_for_each(CostModel::validate),
        }
    }

    pub fn needs_hierarchy(&self) -> bool {
        match self {
            CostModel::PerMeasurement { .. } => false,
            CostModel::Hierarchical { .. } => true,
            CostModel::Sum(parts) => parts.iter().any(CostModel::needs_hierarchy),
        }
    }
}

fn check_nonnegative(c: f64) -> Result<()> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(OdosError::Validation(format!(
            "unit costs must be finite and non-negative, got {c}"
        )));
    }
    Ok(())
}

/// Total cost of collecting `plan`.
///
/// For hierarchical costs this is Σ_k c_k · #{level-k clusters containing a selected unit}.
pub fn plan_cost(plan: &MeasurementPlan, cost: &CostModel, frame: &StudyFrame) -> Result<f64> {
    match cost {
        CostModel::PerMeasurement { cost } => Ok(cost * plan.cardinality() as f64),
        CostModel::Hierarchical { level_costs } => {
            let hierarchy = frame.hierarchy().ok_or(OdosError::MissingHierarchy)?;
            if level_costs.len() != hierarchy.n_levels() {
                return Err(OdosError::DimensionMismatch {
                    expected: hierarchy.n_levels(),
                    found: level_costs.len(),
                });
            }
            let units = plan.units();
            Ok(level_costs
                .iter()
                .enumerate()
                .map(|(level, c)| {
                    let active: BTreeSet<usize> = units
                        .iter()
                        .map(|&u| hierarchy.cluster_of(u, level))
                        .collect();
                    c * active.len() as f64
                })
                .sum())
        }
        CostModel::Sum(parts) => parts.iter().map(|p| plan_cost(plan, p, frame)).sum(),
    }
}

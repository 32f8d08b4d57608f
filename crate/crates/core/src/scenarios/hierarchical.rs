use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{best_row, ReportRow, ScenarioReport};
use crate::cost::{plan_cost, CostModel};
use crate::error::{OdosError, Result};
use crate::frame::{Hierarchy, StudyFrame};
use crate::models::ModelSpec;
use crate::plan::MeasurementPlan;

/// Enumeration cap before switching to coordinate ascent.
pub const MAX_ENUMERATED_ALLOCATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchicalSizing {
    /// Intercept variances for levels 1..K−1, lowest first.
    pub between_var: Vec<f64>,
    /// Maximum total cost C₀.
    pub budget: f64,
}

/// Balanced allocation: `per_level[k]` level-k clusters (units when k = 0)
/// inside each chosen level-(k+1) cluster; the last entry counts top-level clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub per_level: Vec<usize>,
}

impl Allocation {
    /// Units inside one chosen level-k cluster.
    fn units_per_cluster(&self, level: usize) -> usize {
        self.per_level[..level].iter().product()
    }

    pub fn total_units(&self) -> usize {
        self.per_level.iter().product()
    }

    fn label(&self) -> String {
        let parts: Vec<String> = self.per_level.iter().rev().map(|a| a.to_string()).collect();
        format!("alloc=({})", parts.join("x"))
    }
}

/// Posterior variance of the grand mean for a balanced allocation.
///
/// Each chosen top cluster holding m units contributes m / (σ² + Σₖ nₖ ωₖ²)
/// to the precision, where nₖ is the number of units in a level-k cluster.
pub fn random_intercept_variance(alloc: &Allocation, noise_var: f64, between_var: &[f64], prior_var: f64) -> f64 {
    let top = alloc.per_level.len() - 1;
    let m = alloc.units_per_cluster(top) as f64;
    let mut denom = noise_var;
    for (k, w) in between_var.iter().enumerate() {
        denom += alloc.units_per_cluster(k + 1) as f64 * w;
    }
    let precision = 1.0 / prior_var + alloc.per_level[top] as f64 * m / denom;
    1.0 / precision
}

/// Largest balanced count available at each level.
fn level_capacity(h: &Hierarchy) -> Vec<usize> {
    let k = h.n_levels();
    let mut cap = Vec::with_capacity(k);
    for level in 0..k - 1 {
        let parents = h.clusters_per_level()[level + 1];
        let min_children = (0..parents).map(|c| h.children(level + 1, c).len()).min().unwrap_or(0);
        cap.push(min_children);
    }
    cap.push(h.clusters_per_level()[k - 1]);
    cap
}

/// Units selected by taking the first clusters in index order at every level.
fn allocation_plan(frame: &StudyFrame, h: &Hierarchy, alloc: &Allocation) -> Result<MeasurementPlan> {
    let top = h.n_levels() - 1;
    let mut clusters: Vec<usize> = (0..alloc.per_level[top]).collect();
    for level in (0..top).rev() {
        let mut next = Vec::new();
        for &c in &clusters {
            next.extend(h.children(level + 1, c).into_iter().take(alloc.per_level[level]));
        }
        clusters = next;
    }
    MeasurementPlan::units_at(frame, clusters, 0, 0)
}

/// Utility-maximizing balanced allocation under a hierarchical cost cap.
///
/// Utility is the negative posterior variance of the grand mean under
/// nested random intercepts with known variances, which is exact, so every
/// row has standard error zero.
pub fn run_hierarchical_sizing(
    frame: &StudyFrame,
    model: &ModelSpec,
    cost: &CostModel,
    spec: &HierarchicalSizing,
) -> Result<ScenarioReport> {
    let ModelSpec::NormalMean {
        noise_var, prior_var, ..
    } = model
    else {
        return Err(OdosError::InvalidModel("hierarchical sizing needs the normal-mean model".into()));
    };
    let h = frame.hierarchy().ok_or(OdosError::MissingHierarchy)?;
    let k = h.n_levels();
    if !(2..=3).contains(&k) {
        return Err(OdosError::Validation(format!("hierarchical sizing supports 2 or 3 levels, got {k}")));
    }
    if !h.is_nested() {
        return Err(OdosError::Validation("hierarchy levels must be nested".into()));
    }
    if spec.between_var.len() != k - 1 {
        return Err(OdosError::DimensionMismatch {
            expected: k - 1,
            found: spec.between_var.len(),
        });
    }
    if spec.between_var.iter().any(|w| !(*w >= 0.0)) {
        return Err(OdosError::Validation("between_var entries must be non-negative".into()));
    }
    if !(*prior_var > 0.0) {
        return Err(OdosError::Validation("hierarchical sizing needs a positive prior variance".into()));
    }
    cost.validate()?;

    let evaluate = |alloc: &Allocation| -> Result<Option<ReportRow>> {
        let plan = allocation_plan(frame, h, alloc)?;
        let c = plan_cost(&plan, cost, frame)?;
        if c > spec.budget {
            return Ok(None);
        }
        Ok(Some(ReportRow {
            label: alloc.label(),
            n_or_delta: alloc.total_units() as f64,
            utility: -random_intercept_variance(alloc, *noise_var, &spec.between_var, *prior_var),
            se: 0.0,
            cost: c,
            plan: super::describe_units(&plan),
        }))
    };

    let cap = level_capacity(h);
    let space: f64 = cap.iter().map(|&c| c as f64).product();
    let mut rows = Vec::new();
    let mut allocations = Vec::new();
    let method;
    if space <= MAX_ENUMERATED_ALLOCATIONS as f64 {
        method = "enumeration";
        // odometer over per_level with every entry in 1..=cap, top level varying slowest
        let mut a = vec![1usize; k];
        if cap.iter().all(|&c| c >= 1) {
            'outer: loop {
                let alloc = Allocation { per_level: a.clone() };
                if let Some(r) = evaluate(&alloc)? {
                    rows.push(r);
                    allocations.push(alloc);
                }
                for i in 0..k {
                    if a[i] < cap[i] {
                        a[i] += 1;
                        continue 'outer;
                    }
                    a[i] = 1;
                }
                break;
            }
        }
    } else {
        method = "coordinate-ascent";
        let start = Allocation { per_level: vec![1; k] };
        if let Some(r) = evaluate(&start)? {
            let mut current = (start, r);
            loop {
                let mut best: Option<(Allocation, ReportRow)> = None;
                for i in 0..k {
                    if current.0.per_level[i] >= cap[i] {
                        continue;
                    }
                    let mut next = current.0.clone();
                    next.per_level[i] += 1;
                    if let Some(r) = evaluate(&next)? {
                        if best.as_ref().is_none_or(|b| r.utility > b.1.utility) {
                            best = Some((next, r));
                        }
                    }
                }
                rows.push(current.1.clone());
                allocations.push(current.0.clone());
                match best {
                    Some(b) if b.1.utility > current.1.utility => current = b,
                    _ => break,
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(OdosError::Infeasible(format!(
            "no allocation with at least one unit costs at most {}",
            spec.budget
        )));
    }
    let winner = best_row(&rows);
    let chosen = winner.map(|w| allocations[w].clone());
    Ok(ScenarioReport {
        scenario: "hierarchical-sizing".into(),
        seed: 0,
        inputs: json!({"model": model, "cost": cost, "spec": spec, "capacity": cap}),
        rows,
        winner,
        details: json!({"method": method, "allocation": chosen}),
    })
}

//! Direct search over deterministic plans built from a pool of disjoint increments.
//!
//! Selections are always kept as sorted increment indices. Every argmax scans
//! candidates in index order and only replaces the incumbent on a strict
//! improvement, which makes ties resolve toward the smallest index and keeps
//! results independent of how evaluations are scheduled.

use itertools::Itertools;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{plan_cost, CostModel};
use crate::design::binomial;
use crate::error::{OdosError, Result};
use crate::expected::UtilityEstimate;
use crate::frame::StudyFrame;
use crate::plan::MeasurementPlan;

pub const DEFAULT_SPACE_LIMIT: usize = 100_000;
pub const EXCHANGE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    /// At most `n` increments.
    AtMost(usize),
    /// Exactly `n` increments; exhaustive search only looks at subsets of this size.
    Exactly(usize),
    /// Plan cost at most `limit`.
    Cost { limit: f64, model: CostModel },
}

#[derive(Debug, Clone)]
pub struct CandidatePool<'a> {
    pub frame: &'a StudyFrame,
    pub increments: Vec<MeasurementPlan>,
    pub budget: Budget,
}

impl<'a> CandidatePool<'a> {
    pub fn new(frame: &'a StudyFrame, increments: Vec<MeasurementPlan>, budget: Budget) -> Result<Self> {
        for (i, a) in increments.iter().enumerate() {
            a.validate(frame)?;
            if a.is_empty() {
                return Err(OdosError::Validation(format!("increment {i} is empty")));
            }
            for (j, b) in increments.iter().enumerate().skip(i + 1) {
                if !a.is_disjoint(b) {
                    return Err(OdosError::Validation(format!("increments {i} and {j} overlap")));
                }
            }
        }
        match &budget {
            Budget::Cost { limit, model } => {
                model.validate()?;
                if !(*limit >= 0.0) {
                    return Err(OdosError::Validation("cost budget must be non-negative".into()));
                }
            }
            Budget::Exactly(n) if *n > increments.len() => {
                return Err(OdosError::PoolExhausted(format!(
                    "{n} increments requested from a pool of {}",
                    increments.len()
                )))
            }
            _ => {}
        }
        Ok(Self {
            frame,
            increments,
            budget,
        })
    }

    /// One single-unit increment per unit, measuring `variable` at `time_index`.
    pub fn units(frame: &'a StudyFrame, units: &[usize], variable: usize, time_index: usize, budget: Budget) -> Result<Self> {
        let increments = units
            .iter()
            .map(|&u| MeasurementPlan::units_at(frame, [u], variable, time_index))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frame, increments, budget)
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn plan_of(&self, selected: &[usize]) -> MeasurementPlan {
        selected
            .iter()
            .fold(MeasurementPlan::empty(), |acc, &i| acc.union(&self.increments[i]))
    }

    pub fn is_feasible(&self, selected: &[usize]) -> Result<bool> {
        match &self.budget {
            Budget::AtMost(n) | Budget::Exactly(n) => Ok(selected.len() <= *n),
            Budget::Cost { limit, model } => Ok(plan_cost(&self.plan_of(selected), model, self.frame)? <= *limit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub cardinality: usize,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub plan: MeasurementPlan,
    pub selected: Vec<usize>,
    pub utility: UtilityEstimate,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
}

fn lex_less(a: &[usize], b: &[usize]) -> bool {
    a < b
}

/// Evaluates every selection in parallel and returns the values in input order.
fn evaluate_all<F>(pool: &CandidatePool<'_>, selections: &[Vec<usize>], objective: &F) -> Result<Vec<UtilityEstimate>>
where
    F: Fn(&MeasurementPlan) -> Result<UtilityEstimate> + Sync,
{
    selections
        .par_iter()
        .map(|s| objective(&pool.plan_of(s)))
        .collect()
}

fn feasible_subsets(pool: &CandidatePool<'_>, limit: usize) -> Result<Vec<Vec<usize>>> {
    let m = pool.len();
    match &pool.budget {
        Budget::AtMost(n) | Budget::Exactly(n) => {
            let top = (*n).min(m);
            let sizes: Vec<usize> = match pool.budget {
                Budget::Exactly(_) => vec![top],
                _ => (0..=top).collect(),
            };
            let size: f64 = sizes.iter().map(|&k| binomial(m, k)).sum();
            if size > limit as f64 {
                return Err(OdosError::SpaceTooLarge { size, limit });
            }
            Ok(sizes.into_iter().flat_map(|k| (0..m).combinations(k)).collect())
        }
        Budget::Cost { .. } => {
            // depth-first in lexicographic order; cost is monotone so infeasible prefixes are pruned
            let mut out = vec![Vec::new()];
            let mut stack: Vec<Vec<usize>> = (0..m).rev().map(|i| vec![i]).collect();
            while let Some(s) = stack.pop() {
                if !pool.is_feasible(&s)? {
                    continue;
                }
                let last = *s.last().unwrap();
                out.push(s.clone());
                if out.len() > limit {
                    return Err(OdosError::SpaceTooLarge {
                        size: out.len() as f64,
                        limit,
                    });
                }
                for j in (last + 1..m).rev() {
                    let mut t = s.clone();
                    t.push(j);
                    stack.push(t);
                }
            }
            Ok(out)
        }
    }
}

/// Best feasible subset by full enumeration.
pub fn exhaustive_best<F>(pool: &CandidatePool<'_>, objective: F, limit: usize) -> Result<SearchResult>
where
    F: Fn(&MeasurementPlan) -> Result<UtilityEstimate> + Sync,
{
    let subsets = feasible_subsets(pool, limit)?;
    let values = evaluate_all(pool, &subsets, &objective)?;
    let mut best = 0;
    for i in 1..subsets.len() {
        let (v, b) = (values[i].mean, values[best].mean);
        if v > b || (v == b && lex_less(&subsets[i], &subsets[best])) || (b.is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    let selected = subsets[best].clone();
    Ok(SearchResult {
        plan: pool.plan_of(&selected),
        trace: vec![TraceEntry {
            iteration: 0,
            cardinality: pool.plan_of(&selected).cardinality(),
            utility: values[best].mean,
        }],
        selected,
        utility: values[best],
        evaluations: subsets.len(),
    })
}

/// Index-ordered argmax with strict improvement.
fn argmax(values: &[UtilityEstimate]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.mean > values[best].mean || (values[best].mean.is_nan() && !v.mean.is_nan()) {
            best = i;
        }
    }
    best
}

/// Adds the best-fitting increment one at a time until nothing else fits.
pub fn greedy_augment<F>(pool: &CandidatePool<'_>, objective: F) -> Result<SearchResult>
where
    F: Fn(&MeasurementPlan) -> Result<UtilityEstimate> + Sync,
{
    let mut selected: Vec<usize> = Vec::new();
    let mut current = objective(&MeasurementPlan::empty())?;
    let mut evaluations = 1;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        cardinality: 0,
        utility: current.mean,
    }];
    loop {
        let mut candidates = Vec::new();
        for i in 0..pool.len() {
            if selected.contains(&i) {
                continue;
            }
            let mut s = selected.clone();
            s.push(i);
            s.sort_unstable();
            if pool.is_feasible(&s)? {
                candidates.push(s);
            }
        }
        if candidates.is_empty() {
            break;
        }
        let values = evaluate_all(pool, &candidates, &objective)?;
        evaluations += values.len();
        let best = argmax(&values);
        selected = candidates.swap_remove(best);
        current = values[best];
        trace.push(TraceEntry {
            iteration: trace.len(),
            cardinality: pool.plan_of(&selected).cardinality(),
            utility: current.mean,
        });
    }
    Ok(SearchResult {
        plan: pool.plan_of(&selected),
        selected,
        utility: current,
        trace,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeRule {
    /// Accept the first replacement that improves by more than the tolerance.
    #[default]
    FirstImprovement,
    /// Per sweep, accept the single best replacement.
    BestImprovement,
}

/// Pairwise swaps between selected and unselected increments until no swap improves.
pub fn exchange_improve<F>(initial: SearchResult, pool: &CandidatePool<'_>, objective: F, rule: ExchangeRule) -> Result<SearchResult>
where
    F: Fn(&MeasurementPlan) -> Result<UtilityEstimate> + Sync,
{
    if !pool.is_feasible(&initial.selected)? {
        return Err(OdosError::InvalidArgument("initial selection violates the budget".into()));
    }
    let mut selected = initial.selected.clone();
    let mut current = initial.utility;
    let mut trace = initial.trace.clone();
    let mut evaluations = initial.evaluations;
    let mut iteration = trace.len();

    let swaps_for = |selected: &[usize], slot: usize| -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        for r in 0..pool.len() {
            if selected.contains(&r) {
                continue;
            }
            let mut s = selected.to_vec();
            s[slot] = r;
            s.sort_unstable();
            if pool.is_feasible(&s)? {
                out.push(s);
            }
        }
        Ok(out)
    };

    loop {
        let mut changed = false;
        match rule {
            ExchangeRule::FirstImprovement => {
                let order = selected.clone();
                for leaving in order {
                    let Some(slot) = selected.iter().position(|&x| x == leaving) else { continue };
                    let candidates = swaps_for(&selected, slot)?;
                    let values = evaluate_all(pool, &candidates, &objective)?;
                    evaluations += values.len();
                    if let Some(k) = values.iter().position(|v| v.mean > current.mean + EXCHANGE_TOLERANCE) {
                        selected = candidates[k].clone();
                        current = values[k];
                        changed = true;
                        trace.push(TraceEntry {
                            iteration,
                            cardinality: pool.plan_of(&selected).cardinality(),
                            utility: current.mean,
                        });
                        iteration += 1;
                    }
                }
            }
            ExchangeRule::BestImprovement => {
                let mut candidates = Vec::new();
                for slot in 0..selected.len() {
                    candidates.extend(swaps_for(&selected, slot)?);
                }
                if !candidates.is_empty() {
                    let values = evaluate_all(pool, &candidates, &objective)?;
                    evaluations += values.len();
                    let k = argmax(&values);
                    if values[k].mean > current.mean + EXCHANGE_TOLERANCE {
                        selected = candidates[k].clone();
                        current = values[k];
                        changed = true;
                        trace.push(TraceEntry {
                            iteration,
                            cardinality: pool.plan_of(&selected).cardinality(),
                            utility: current.mean,
                        });
                        iteration += 1;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(SearchResult {
        plan: pool.plan_of(&selected),
        selected,
        utility: current,
        trace,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSearch {
    pub n: usize,
    /// Every (n, estimate) pair evaluated, in evaluation order.
    pub evaluations: Vec<(usize, UtilityEstimate)>,
}

/// Smallest n ≤ n_max whose objective reaches `target`, for a non-decreasing objective.
pub fn binary_search_sample_size<F>(objective: F, target: f64, n_max: usize) -> Result<SampleSizeSearch>
where
    F: Fn(usize) -> Result<UtilityEstimate>,
{
    let mut evaluations = Vec::new();
    let mut eval = |n: usize| -> Result<f64> {
        let e = objective(n)?;
        evaluations.push((n, e));
        Ok(e.mean)
    };
    if eval(n_max)? < target {
        return Err(OdosError::Infeasible(format!(
            "target {target} is not reached with n = {n_max}"
        )));
    }
    if eval(0)? >= target {
        return Ok(SampleSizeSearch { n: 0, evaluations });
    }
    // invariant: objective(lo) < target ≤ objective(hi)
    let (mut lo, mut hi) = (0usize, n_max);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eval(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SampleSizeSearch { n: hi, evaluations })
}

/// Matches each target point, in order, to the nearest unused unit.
///
/// `units` pairs a unit index with its covariate vector; ties go to the
/// smaller unit index. Returns the chosen unit indices in target order.
pub fn design_search_select(targets: &[DVector<f64>], units: &[(usize, DVector<f64>)]) -> Result<Vec<usize>> {
    if targets.len() > units.len() {
        return Err(OdosError::PoolExhausted(format!(
            "{} target points but only {} units",
            targets.len(),
            units.len()
        )));
    }
    let mut used = vec![false; units.len()];
    let mut chosen = Vec::with_capacity(targets.len());
    for t in targets {
        let mut best: Option<(usize, f64)> = None;
        for (k, (unit, x)) in units.iter().enumerate() {
            if used[k] {
                continue;
            }
            if x.len() != t.len() {
                return Err(OdosError::DimensionMismatch {
                    expected: t.len(),
                    found: x.len(),
                });
            }
            let d = (x - t).norm();
            best = match best {
                Some((b, bd)) if bd < d || (bd == d && units[b].0 < *unit) => Some((b, bd)),
                _ => Some((k, d)),
            };
        }
        let (k, _) = best.ok_or_else(|| OdosError::PoolExhausted("no unit left to match".into()))?;
        used[k] = true;
        chosen.push(units[k].0);
    }
    Ok(chosen)
}

/// Two-point D-optimal design for a straight line on [lo, hi]: alternating endpoints.
///
/// Points are returned as (1, x) rows to match an intercept-plus-slope covariate layout.
pub fn two_point_targets(lo: f64, hi: f64, n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|i| DVector::from_vec(vec![1.0, if i % 2 == 0 { lo } else { hi }]))
        .collect()
}

//! Study populations: units, variables, the time grid and cluster hierarchy.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{OdosError, Result};

/// Nested cluster membership of the units.
///
/// Level 0 is the unit level (every unit is its own cluster); levels
/// `1..n_levels()` are supplied by the caller as one cluster index per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    membership: Vec<Vec<usize>>,
    clusters_per_level: Vec<usize>,
}

impl Hierarchy {
    /// `upper_levels[k][i]` is the cluster of unit `i` on level `k + 1`.
    pub fn new(n_units: usize, upper_levels: Vec<Vec<usize>>) -> Result<Self> {
        let mut membership = Vec::with_capacity(upper_levels.len() + 1);
        membership.push((0..n_units).collect::<Vec<_>>());
        let mut clusters_per_level = vec![n_units];
        for (k, level) in upper_levels.into_iter().enumerate() {
            if level.len() != n_units {
                return Err(OdosError::InvalidFrame(format!(
                    "hierarchy level {} assigns {} units, frame has {}",
                    k + 1,
                    level.len(),
                    n_units
                )));
            }
            let distinct: BTreeSet<usize> = level.iter().copied().collect();
            let n_clusters = distinct.iter().next_back().map_or(0, |m| m + 1);
            if distinct.len() != n_clusters {
                return Err(OdosError::InvalidFrame(format!(
                    "hierarchy level {} has empty clusters (indices must be 0..L-1)",
                    k + 1
                )));
            }
            clusters_per_level.push(n_clusters);
            membership.push(level);
        }
        Ok(Self {
            membership,
            clusters_per_level,
        })
    }

    /// Number of levels K, counting the unit level.
    pub fn n_levels(&self) -> usize {
        self.membership.len()
    }

    pub fn clusters_per_level(&self) -> &[usize] {
        &self.clusters_per_level
    }

    /// Cluster of `unit` on `level` (the indicator z_ikl in functional form).
    pub fn cluster_of(&self, unit: usize, level: usize) -> usize {
        self.membership[level][unit]
    }

    pub fn level(&self, level: usize) -> &[usize] {
        &self.membership[level]
    }

    /// Units of `cluster` on `level`, ascending.
    pub fn members(&self, level: usize, cluster: usize) -> Vec<usize> {
        self.membership[level]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Children of `cluster` on `level` (clusters of `level - 1` inside it), ascending.
    pub fn children(&self, level: usize, cluster: usize) -> Vec<usize> {
        let below = &self.membership[level - 1];
        let set: BTreeSet<usize> = self.membership[level]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| below[i])
            .collect();
        set.into_iter().collect()
    }

    /// True when every cluster lies inside a single cluster of the level above.
    pub fn is_nested(&self) -> bool {
        (1..self.n_levels()).all(|k| {
            let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
            self.membership[k - 1]
                .iter()
                .zip(&self.membership[k])
                .all(|(&child, &up)| *parent.entry(child).or_insert(up) == up)
        })
    }
}

/// The population and measurement opportunities of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyFrame {
    n_units: usize,
    n_variables: usize,
    time_grid: Vec<f64>,
    hierarchy: Option<Hierarchy>,
    /// Per (unit, variable) admissible time indices; pairs not listed admit every time.
    admissible: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl StudyFrame {
    pub fn new(n_units: usize, n_variables: usize, time_grid: Vec<f64>) -> Result<Self> {
        if n_units == 0 {
            return Err(OdosError::InvalidFrame("n_units must be at least 1".into()));
        }
        if n_variables == 0 {
            return Err(OdosError::InvalidFrame(
                "n_variables must be at least 1".into(),
            ));
        }
        if time_grid.is_empty() {
            return Err(OdosError::InvalidFrame("time grid is empty".into()));
        }
        if time_grid.iter().any(|t| !t.is_finite()) {
            return Err(OdosError::InvalidFrame("time grid has non-finite points".into()));
        }
        if time_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OdosError::InvalidFrame(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            n_units,
            n_variables,
            time_grid,
            hierarchy: None,
            admissible: BTreeMap::new(),
        })
    }

    /// Single-variable, single-time frame; the common cross-sectional case.
    pub fn cross_section(n_units: usize) -> Result<Self> {
        Self::new(n_units, 1, vec![0.0])
    }

    pub fn with_hierarchy(mut self, hierarchy: Hierarchy) -> Result<Self> {
        if hierarchy.level(0).len() != self.n_units {
            return Err(OdosError::InvalidFrame(
                "hierarchy does not cover the frame's units".into(),
            ));
        }
        self.hierarchy = Some(hierarchy);
        Ok(self)
    }

    pub fn with_admissible_times(
        mut self,
        unit: usize,
        variable: usize,
        times: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        self.check_unit(unit)?;
        self.check_variable(variable)?;
        let times: BTreeSet<usize> = times.into_iter().collect();
        for &t in &times {
            self.check_time(t)?;
        }
        self.admissible.insert((unit, variable), times);
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_variables(&self) -> usize {
        self.n_variables
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn time(&self, index: usize) -> f64 {
        self.time_grid[index]
    }

    pub fn hierarchy(&self) -> Option<&Hierarchy> {
        self.hierarchy.as_ref()
    }

    pub fn admissible_times(&self) -> &BTreeMap<(usize, usize), BTreeSet<usize>> {
        &self.admissible
    }

    pub fn is_admissible(&self, unit: usize, variable: usize, time: usize) -> bool {
        self.admissible
            .get(&(unit, variable))
            .is_none_or(|times| times.contains(&time))
    }

    pub fn check_unit(&self, unit: usize) -> Result<()> {
        if unit >= self.n_units {
            return Err(OdosError::IndexOutOfBounds {
                what: "unit",
                index: unit,
                limit: self.n_units,
            });
        }
        Ok(())
    }

    pub fn check_variable(&self, variable: usize) -> Result<()> {
        if variable >= self.n_variables {
            return Err(OdosError::IndexOutOfBounds {
                what: "variable",
                index: variable,
                limit: self.n_variables,
            });
        }
        Ok(())
    }

    pub fn check_time(&self, time: usize) -> Result<()> {
        if time >= self.time_grid.len() {
            return Err(OdosError::IndexOutOfBounds {
                what: "time index",
                index: time,
                limit: self.time_grid.len(),
            });
        }
        Ok(())
    }
}

//! Run configuration: strict JSON parsing, validation and round-trip emission.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::dataset::{Dataset, Value};
use crate::design::{Design, DEFAULT_SUPPORT_LIMIT};
use crate::error::{OdosError, Result};
use crate::expected::MCConfig;
use crate::frame::{Hierarchy, StudyFrame};
use crate::inference::PosteriorMethod;
use crate::models::ModelSpec;
use crate::plan::{MeasurementPlan, Triple};
use crate::scenarios::{HierarchicalSizing, MarkovTiming, Remeasurement, SampleSize, SubsampleSelection};
use crate::search::{Budget, ExchangeRule, DEFAULT_SPACE_LIMIT};
use crate::utility::{RiskCurve, UtilitySpec};

fn default_output() -> String {
    "odos".into()
}

fn one() -> usize {
    1
}

fn zero_grid() -> Vec<f64> {
    vec![0.0]
}

fn outcome_only() -> Vec<usize> {
    vec![0]
}

fn default_outer() -> usize {
    1000
}

fn default_plan_samples() -> usize {
    100
}

fn default_support() -> usize {
    DEFAULT_SUPPORT_LIMIT
}

fn default_space() -> usize {
    DEFAULT_SPACE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; every run must be replayable.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
    pub frame: FrameConfig,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_curve: Option<RiskCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_data: Option<PriorData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub mc: McBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub n_units: usize,
    #[serde(default = "one")]
    pub n_variables: usize,
    #[serde(default = "zero_grid")]
    pub time_grid: Vec<f64>,
    /// Cluster memberships for levels 1..K−1, one vector of length n_units per level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub admissible: Vec<AdmissibleTimes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleTimes {
    pub unit: usize,
    pub variable: usize,
    pub time_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorData {
    /// CSV file with header unit,variable,time_index,value; relative paths resolve against the config file.
    Csv(String),
    Entries(Vec<DataEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataEntry {
    pub unit: usize,
    pub variable: usize,
    pub time_index: usize,
    /// `null` marks a missing value.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    Null,
    Deterministic {
        plan: Vec<Triple>,
    },
    SimpleRandomSample {
        sample_size: usize,
        #[serde(default = "outcome_only")]
        variables: Vec<usize>,
        #[serde(default)]
        time_index: usize,
    },
    Weighted {
        plans: Vec<WeightedPlan>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedPlan {
    pub plan: Vec<Triple>,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchStrategy {
    #[serde(rename = "exhaustive")]
    Exhaustive,
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "greedy+exchange")]
    GreedyExchange,
    #[serde(rename = "design-search")]
    DesignSearch,
}

impl std::str::FromStr for SearchStrategy {
    type Err = OdosError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| OdosError::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub strategy: SearchStrategy,
    pub budget: Budget,
    /// Candidate units; all frame units when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<usize>>,
    #[serde(default)]
    pub time_index: usize,
    #[serde(default)]
    pub exchange_rule: ExchangeRule,
    /// Design-search target values on the covariate column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_column: Option<usize>,
    #[serde(default = "default_space")]
    pub space_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    SampleSize(SampleSize),
    HierarchicalSizing(HierarchicalSizing),
    SubsampleSelection(SubsampleSelection),
    MarkovTiming(MarkovTiming),
    Remeasurement(Remeasurement),
}

impl ScenarioConfig {
    /// Subcommand name of the scenario.
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::SampleSize(_) => "sample-size",
            ScenarioConfig::HierarchicalSizing(_) => "hierarchical-sizing",
            ScenarioConfig::SubsampleSelection(_) => "subsample-selection",
            ScenarioConfig::MarkovTiming(_) => "markov-timing",
            ScenarioConfig::Remeasurement(_) => "remeasurement",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(default = "default_outer")]
    pub outer_draws: usize,
    #[serde(default)]
    pub posterior_method: PosteriorMethod,
    #[serde(default = "default_plan_samples")]
    pub plan_samples: usize,
    #[serde(default = "default_support")]
    pub support_limit: usize,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            outer_draws: default_outer(),
            posterior_method: PosteriorMethod::default(),
            plan_samples: default_plan_samples(),
            support_limit: default_support(),
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        OdosError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn emit_config(cfg: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}

/// Reads a configuration file; the returned directory anchors relative data paths.
pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn field<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        OdosError::Validation(m) => OdosError::Validation(format!("{name}: {m}")),
        other => OdosError::Validation(format!("{name}: {other}")),
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let blocks = [self.design.is_some(), self.search.is_some(), self.scenario.is_some()];
        if blocks.iter().filter(|b| **b).count() != 1 {
            return Err(OdosError::Validation(
                "exactly one of design, search or scenario must be present".into(),
            ));
        }
        let frame = field("frame", self.build_frame())?;
        field("model", self.model.validate())?;
        if let Some(u) = &self.utility {
            field("utility", u.validate(self.model.param_dim()))?;
        }
        if let Some(c) = &self.risk_curve {
            field("risk_curve", c.validate())?;
        }
        if let Some(c) = &self.cost {
            field("cost", c.validate())?;
            if c.needs_hierarchy() && frame.hierarchy().is_none() {
                return Err(OdosError::Validation("cost: hierarchical cost needs frame.hierarchy".into()));
            }
        }
        if let Some(PriorData::Entries(_)) = &self.prior_data {
            field("prior_data", self.dataset(&frame, Path::new("")).map(|_| ()))?;
        }
        if let Some(d) = &self.design {
            field("design", self.build_design(&frame).map(|_| ()))?;
            if let DesignConfig::Deterministic { plan } = d {
                let plan = MeasurementPlan::from_triples(&frame, plan.iter().copied());
                field("design.plan", plan.and_then(|p| self.model.check_plan(&p, &frame)))?;
            }
        }
        if let Some(s) = &self.search {
            if let Some(units) = &s.units {
                for &u in units {
                    field("search.units", frame.check_unit(u))?;
                }
            }
            field("search.time_index", frame.check_time(s.time_index))?;
            if let Budget::Cost { model, .. } = &s.budget {
                field("search.budget", model.validate())?;
            }
        }
        field("mc", self.mc_config().validate())?;
        Ok(())
    }

    pub fn mc_config(&self) -> MCConfig {
        MCConfig {
            outer_draws: self.mc.outer_draws,
            seed: self.seed,
            posterior_method: self.mc.posterior_method,
            plan_samples: self.mc.plan_samples,
            support_limit: self.mc.support_limit,
        }
    }

    pub fn build_frame(&self) -> Result<StudyFrame> {
        let f = &self.frame;
        let mut frame = StudyFrame::new(f.n_units, f.n_variables, f.time_grid.clone())?;
        if let Some(levels) = &f.hierarchy {
            frame = frame.with_hierarchy(Hierarchy::new(f.n_units, levels.clone())?)?;
        }
        for a in &f.admissible {
            frame = frame.with_admissible_times(a.unit, a.variable, a.time_indices.iter().copied())?;
        }
        Ok(frame)
    }

    /// Prior data x₀*, empty when the block is absent.
    pub fn dataset(&self, frame: &StudyFrame, base: &Path) -> Result<Dataset> {
        match &self.prior_data {
            None => Ok(Dataset::empty()),
            Some(PriorData::Entries(entries)) => Dataset::from_entries(
                frame,
                entries.iter().map(|e| {
                    (
                        Triple::new(e.unit, e.variable, e.time_index),
                        e.value.map_or(Value::Missing, Value::Observed),
                    )
                }),
            ),
            Some(PriorData::Csv(path)) => {
                let p = base.join(path);
                Dataset::read_csv(frame, std::fs::File::open(&p)?)
            }
        }
    }

    pub fn build_design(&self, frame: &StudyFrame) -> Result<Design> {
        let plan = |triples: &[Triple]| MeasurementPlan::from_triples(frame, triples.iter().copied());
        let design = match self.design.as_ref().ok_or_else(|| OdosError::Validation("design block is required".into()))? {
            DesignConfig::Null => Design::null(),
            DesignConfig::Deterministic { plan: p } => Design::Deterministic(plan(p)?),
            DesignConfig::SimpleRandomSample {
                sample_size,
                variables,
                time_index,
            } => Design::simple_random_sample(frame, *sample_size, variables.clone(), *time_index)?,
            DesignConfig::Weighted { plans } => Design::weighted(
                plans
                    .iter()
                    .map(|w| plan(&w.plan).map(|p| (p, w.probability)))
                    .collect::<Result<Vec<_>>>()?,
            )?,
        };
        design.validate(frame)?;
        Ok(design)
    }
}

//! Designs: probability measures over measurement plans.

use itertools::Itertools;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::plan::{MeasurementPlan, Triple};

pub const DEFAULT_SUPPORT_LIMIT: usize = 1_000_000;
const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// A single plan with probability one. The empty plan is the null design.
    Deterministic(MeasurementPlan),
    /// Uniform `sample_size`-subset of the population, measuring `variables` at one time.
    SimpleRandomSample {
        population: usize,
        sample_size: usize,
        variables: Vec<usize>,
        time_index: usize,
    },
    WeightedPlans(Vec<(MeasurementPlan, f64)>),
}

impl Design {
    pub fn null() -> Self {
        Design::Deterministic(MeasurementPlan::empty())
    }

    pub fn simple_random_sample(
        frame: &StudyFrame,
        sample_size: usize,
        variables: Vec<usize>,
        time_index: usize,
    ) -> Result<Self> {
        if sample_size > frame.n_units() {
            return Err(OdosError::InvalidDesign(format!(
                "sample size {} exceeds population {}",
                sample_size,
                frame.n_units()
            )));
        }
        if variables.is_empty() {
            return Err(OdosError::InvalidDesign(
                "simple random sample needs at least one variable".into(),
            ));
        }
        for &v in &variables {
            frame.check_variable(v)?;
        }
        frame.check_time(time_index)?;
        Ok(Design::SimpleRandomSample {
            population: frame.n_units(),
            sample_size,
            variables,
            time_index,
        })
    }

    /// Mixture over plans; probabilities must be positive and sum to one.
    pub fn weighted(plans: Vec<(MeasurementPlan, f64)>) -> Result<Self> {
        if plans.is_empty() {
            return Err(OdosError::InvalidDesign("weighted design is empty".into()));
        }
        if let Some((_, w)) = plans.iter().find(|(_, w)| !(*w > 0.0) || !w.is_finite()) {
            return Err(OdosError::InvalidDesign(format!(
                "plan probability {w} is not strictly positive"
            )));
        }
        let total: f64 = plans.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(OdosError::InvalidDesign(format!(
                "plan probabilities sum to {total}, not 1"
            )));
        }
        Ok(Design::WeightedPlans(plans))
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Design::Deterministic(_) => true,
            Design::SimpleRandomSample {
                population,
                sample_size,
                ..
            } => *sample_size == 0 || sample_size == population,
            Design::WeightedPlans(p) => p.len() == 1,
        }
    }

    /// Size of R_η (as a float; SRS supports overflow integers quickly).
    pub fn support_size(&self) -> f64 {
        match self {
            Design::Deterministic(_) => 1.0,
            Design::SimpleRandomSample {
                population,
                sample_size,
                ..
            } => binomial(*population, *sample_size),
            Design::WeightedPlans(p) => p.len() as f64,
        }
    }

    /// Checks every plan the design can produce against `frame`.
    pub fn validate(&self, frame: &StudyFrame) -> Result<()> {
        match self {
            Design::Deterministic(p) => p.validate(frame),
            Design::SimpleRandomSample {
                population,
                variables,
                time_index,
                ..
            } => {
                if *population != frame.n_units() {
                    return Err(OdosError::InvalidDesign(format!(
                        "simple random sample population {} differs from frame size {}",
                        population,
                        frame.n_units()
                    )));
                }
                variables.iter().try_for_each(|&v| frame.check_variable(v))?;
                frame.check_time(*time_index)
            }
            Design::WeightedPlans(p) => p.iter().try_for_each(|(plan, _)| plan.validate(frame)),
        }
    }
}

/// Plan measuring `variables` at `time_index` on each of `units`.
fn srs_plan(units: &[usize], variables: &[usize], time_index: usize) -> MeasurementPlan {
    units
        .iter()
        .flat_map(|&u| variables.iter().map(move |&v| Triple::new(u, v, time_index)))
        .collect()
}

/// Full support of `design` with probabilities, enumerating at most `limit` plans.
pub fn design_support(design: &Design, limit: usize) -> Result<Vec<(MeasurementPlan, f64)>> {
    match design {
        Design::Deterministic(p) => Ok(vec![(p.clone(), 1.0)]),
        Design::WeightedPlans(p) => Ok(p.clone()),
        Design::SimpleRandomSample {
            population,
            sample_size,
            variables,
            time_index,
        } => {
            let size = binomial(*population, *sample_size);
            if size > limit as f64 {
                return Err(OdosError::SupportTooLarge { size, limit });
            }
            let prob = 1.0 / size;
            Ok((0..*population)
                .combinations(*sample_size)
                .map(|units| (srs_plan(&units, variables, *time_index), prob))
                .collect())
        }
    }
}

/// Draws one plan with probability η(r).
pub fn sample_plan<R: Rng + ?Sized>(design: &Design, rng: &mut R) -> MeasurementPlan {
    match design {
        Design::Deterministic(p) => p.clone(),
        Design::SimpleRandomSample {
            population,
            sample_size,
            variables,
            time_index,
        } => {
            let mut units = rand::seq::index::sample(rng, *population, *sample_size).into_vec();
            units.sort_unstable();
            srs_plan(&units, variables, *time_index)
        }
        Design::WeightedPlans(plans) => {
            let index = WeightedIndex::new(plans.iter().map(|(_, w)| *w))
                .expect("weighted design has validated positive weights");
            plans[index.sample(rng)].0.clone()
        }
    }
}

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

//! Measurement plans: which (unit, variable, time) cells get measured.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;

/// One measurement opportunity. Time is an index into the frame's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub unit: usize,
    pub variable: usize,
    pub time_index: usize,
}

impl Triple {
    pub const fn new(unit: usize, variable: usize, time_index: usize) -> Self {
        Self {
            unit,
            variable,
            time_index,
        }
    }
}

impl From<(usize, usize, usize)> for Triple {
    fn from((unit, variable, time_index): (usize, usize, usize)) -> Self {
        Self::new(unit, variable, time_index)
    }
}

/// A set of selected triples, i.e. the observational process r.
///
/// Plans are validated against a frame when built from external input;
/// set operations on already-valid plans stay valid. Serialized as a sorted
/// list of triples; deserialized plans must be checked with [`MeasurementPlan::validate`].
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementPlan {
    entries: BTreeSet<Triple>,
}

impl MeasurementPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a plan, rejecting duplicates, out-of-range and inadmissible triples.
    pub fn from_triples<I, T>(frame: &StudyFrame, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<Triple>,
    {
        let mut entries = BTreeSet::new();
        for t in triples {
            let t = t.into();
            validate_triple(frame, &t)?;
            if !entries.insert(t) {
                return Err(OdosError::DuplicateEntry {
                    unit: t.unit,
                    variable: t.variable,
                    time: t.time_index,
                });
            }
        }
        Ok(Self { entries })
    }

    /// Variable `variable` of each listed unit at `time_index`.
    pub fn units_at(
        frame: &StudyFrame,
        units: impl IntoIterator<Item = usize>,
        variable: usize,
        time_index: usize,
    ) -> Result<Self> {
        Self::from_triples(
            frame,
            units
                .into_iter()
                .map(|u| Triple::new(u, variable, time_index)),
        )
    }

    /// Every (unit, variable) pair at one time.
    pub fn full_at(frame: &StudyFrame, time_index: usize) -> Result<Self> {
        Self::from_triples(
            frame,
            (0..frame.n_units()).flat_map(|u| {
                (0..frame.n_variables()).map(move |v| Triple::new(u, v, time_index))
            }),
        )
    }

    /// Plan from triples already known to be valid (e.g. unions of valid plans).
    pub(crate) fn from_set(entries: BTreeSet<Triple>) -> Self {
        Self { entries }
    }

    pub fn cardinality(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.entries.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.entries.iter()
    }

    pub fn entries(&self) -> &BTreeSet<Triple> {
        &self.entries
    }

    /// Distinct units with at least one selected triple, ascending.
    pub fn units(&self) -> BTreeSet<usize> {
        self.entries.iter().map(|t| t.unit).collect()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::from_set(self.entries.union(&other.entries).copied().collect())
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self::from_set(self.entries.intersection(&other.entries).copied().collect())
    }

    pub fn difference(&self, other: &Self) -> Self {
        Self::from_set(self.entries.difference(&other.entries).copied().collect())
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.entries.is_disjoint(&other.entries)
    }

    /// Re-checks every triple against `frame`.
    pub fn validate(&self, frame: &StudyFrame) -> Result<()> {
        self.entries.iter().try_for_each(|t| validate_triple(frame, t))
    }

    /// Reads a plan from CSV with header `unit,variable,time_index`.
    pub fn read_csv<R: Read>(frame: &StudyFrame, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(rdr.headers()?, &["unit", "variable", "time_index"])?;
        let mut triples = Vec::new();
        for record in rdr.deserialize::<Triple>() {
            triples.push(record?);
        }
        Self::from_triples(frame, triples)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "variable", "time_index"])?;
        for t in &self.entries {
            wtr.write_record([
                t.unit.to_string(),
                t.variable.to_string(),
                t.time_index.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl FromIterator<Triple> for MeasurementPlan {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self::from_set(iter.into_iter().collect())
    }
}

pub fn plan_cardinality(plan: &MeasurementPlan) -> usize {
    plan.cardinality()
}

pub(crate) fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().collect();
    if found != expected {
        return Err(OdosError::Validation(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

fn validate_triple(frame: &StudyFrame, t: &Triple) -> Result<()> {
    frame.check_unit(t.unit)?;
    frame.check_variable(t.variable)?;
    frame.check_time(t.time_index)?;
    if !frame.is_admissible(t.unit, t.variable, t.time_index) {
        return Err(OdosError::NotAdmissible {
            unit: t.unit,
            variable: t.variable,
            time: t.time_index,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cardinality_examples() {
        let frame = StudyFrame::new(3, 2, vec![0.0]).unwrap();
        assert_eq!(plan_cardinality(&MeasurementPlan::empty()), 0);
        let p = MeasurementPlan::from_triples(&frame, [(1, 1, 0), (2, 1, 0)]).unwrap();
        assert_eq!(plan_cardinality(&p), 2);
        assert_eq!(MeasurementPlan::full_at(&frame, 0).unwrap().cardinality(), 6);
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        let frame = StudyFrame::new(3, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            MeasurementPlan::from_triples(&frame, [(0, 0, 0), (0, 0, 0)]),
            Err(OdosError::DuplicateEntry { .. })
        ));
        assert!(matches!(
            MeasurementPlan::from_triples(&frame, [(3, 0, 0)]),
            Err(OdosError::IndexOutOfBounds { what: "unit", index: 3, .. })
        ));
        assert!(MeasurementPlan::from_triples(&frame, [(0, 1, 0)]).is_err());
        assert!(MeasurementPlan::from_triples(&frame, [(0, 0, 2)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let frame = StudyFrame::new(4, 2, vec![0.0, 1.0]).unwrap();
        let p = MeasurementPlan::from_triples(&frame, [(0, 1, 1), (3, 0, 0)]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("unit,variable,time_index\n"));
        assert_eq!(MeasurementPlan::read_csv(&frame, buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn csv_rejects_wrong_header() {
        let frame = StudyFrame::cross_section(2).unwrap();
        let bad = "unit,var,time\n0,0,0\n";
        assert!(MeasurementPlan::read_csv(&frame, bad.as_bytes()).is_err());
    }

    fn arb_plan() -> impl Strategy<Value = MeasurementPlan> {
        proptest::collection::btree_set((0usize..5, 0usize..2, 0usize..3), 0..20)
            .prop_map(|s| s.into_iter().map(Triple::from).collect())
    }

    proptest! {
        #[test]
        fn inclusion_exclusion(a in arb_plan(), b in arb_plan()) {
            prop_assert_eq!(
                a.union(&b).cardinality() + a.intersection(&b).cardinality(),
                a.cardinality() + b.cardinality()
            );
        }
    }
}

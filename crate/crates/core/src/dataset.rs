//! Observed values with an explicit missing marker.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use crate::error::{OdosError, Result};
use crate::frame::StudyFrame;
use crate::plan::{check_header, MeasurementPlan, Triple};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Observed(f64),
    Missing,
}

impl Value {
    pub fn observed(self) -> Option<f64> {
        match self {
            Value::Observed(x) => Some(x),
            Value::Missing => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Observed(x) => write!(f, "{x}"),
            Value::Missing => f.write_str("NA"),
        }
    }
}

/// Sparse x*: cells not present are Missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    values: BTreeMap<Triple, Value>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Dataset from `(triple, value)` pairs, validated against `frame`.
    pub fn from_entries<I>(frame: &StudyFrame, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Triple, Value)>,
    {
        let mut values = BTreeMap::new();
        for (t, v) in entries {
            frame.check_unit(t.unit)?;
            frame.check_variable(t.variable)?;
            frame.check_time(t.time_index)?;
            if values.insert(t, v).is_some() {
                return Err(OdosError::DuplicateEntry {
                    unit: t.unit,
                    variable: t.variable,
                    time: t.time_index,
                });
            }
        }
        Ok(Self { values })
    }

    /// Records an observation; callers guarantee the triple is in-bounds.
    pub(crate) fn observe(&mut self, t: Triple, x: f64) {
        self.values.insert(t, Value::Observed(x));
    }

    pub fn get(&self, t: &Triple) -> Value {
        self.values.get(t).copied().unwrap_or(Value::Missing)
    }

    /// Every stored cell, including explicit Missing entries.
    pub fn cells(&self) -> impl Iterator<Item = (&Triple, &Value)> + '_ {
        self.values.iter()
    }

    /// Observed cells in triple order.
    pub fn observed(&self) -> impl Iterator<Item = (Triple, f64)> + '_ {
        self.values
            .iter()
            .filter_map(|(t, v)| v.observed().map(|x| (*t, x)))
    }

    pub fn observed_count(&self) -> usize {
        self.observed().count()
    }

    /// The set of observed triples (the r that would have produced this x*).
    pub fn observed_plan(&self) -> MeasurementPlan {
        self.observed().map(|(t, _)| t).collect()
    }

    /// Union of two datasets; a cell observed in both is an error.
    pub fn merged(&self, other: &Dataset) -> Result<Dataset> {
        let mut values = self.values.clone();
        for (t, v) in &other.values {
            match (values.get(t).copied(), *v) {
                (Some(Value::Observed(_)), Value::Observed(_)) => {
                    return Err(OdosError::DuplicateEntry {
                        unit: t.unit,
                        variable: t.variable,
                        time: t.time_index,
                    })
                }
                (Some(Value::Observed(_)), Value::Missing) => {}
                _ => {
                    values.insert(*t, *v);
                }
            }
        }
        Ok(Dataset { values })
    }

    pub fn validate(&self, frame: &StudyFrame) -> Result<()> {
        for t in self.values.keys() {
            frame.check_unit(t.unit)?;
            frame.check_variable(t.variable)?;
            frame.check_time(t.time_index)?;
        }
        Ok(())
    }

    /// Reads `unit,variable,time_index,value` CSV; `NA` marks a missing value.
    pub fn read_csv<R: Read>(frame: &StudyFrame, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(rdr.headers()?, &["unit", "variable", "time_index", "value"])?;
        let mut entries = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let index = |i: usize| -> Result<usize> {
                field(i).parse().map_err(|_| {
                    OdosError::Validation(format!(
                        "row {}: `{}` is not a valid index",
                        row + 2,
                        field(i)
                    ))
                })
            };
            let triple = Triple::new(index(0)?, index(1)?, index(2)?);
            let value = match field(3) {
                "NA" => Value::Missing,
                s => Value::Observed(s.parse().map_err(|_| {
                    OdosError::Validation(format!("row {}: `{s}` is not a number or NA", row + 2))
                })?),
            };
            entries.push((triple, value));
        }
        Self::from_entries(frame, entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit", "variable", "time_index", "value"])?;
        for (t, v) in &self.values {
            wtr.write_record([
                t.unit.to_string(),
                t.variable.to_string(),
                t.time_index.to_string(),
                v.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_missing_marker() {
        let frame = StudyFrame::new(3, 1, vec![0.0, 1.0]).unwrap();
        let text = "unit,variable,time_index,value\n0,0,0,1.5\n1,0,0,NA\n2,0,1,-3\n";
        let d = Dataset::read_csv(&frame, text.as_bytes()).unwrap();
        assert_eq!(d.get(&Triple::new(0, 0, 0)), Value::Observed(1.5));
        assert_eq!(d.get(&Triple::new(1, 0, 0)), Value::Missing);
        assert_eq!(d.get(&Triple::new(2, 0, 0)), Value::Missing);
        assert_eq!(d.observed_count(), 2);

        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        assert_eq!(Dataset::read_csv(&frame, out.as_slice()).unwrap(), d);
    }

    #[test]
    fn csv_rejects_garbage_and_bounds() {
        let frame = StudyFrame::cross_section(2).unwrap();
        let bad_value = "unit,variable,time_index,value\n0,0,0,abc\n";
        assert!(Dataset::read_csv(&frame, bad_value.as_bytes()).is_err());
        let bad_unit = "unit,variable,time_index,value\n5,0,0,1\n";
        assert!(matches!(
            Dataset::read_csv(&frame, bad_unit.as_bytes()),
            Err(OdosError::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn merge_rejects_double_observation() {
        let mut a = Dataset::empty();
        a.observe(Triple::new(0, 0, 0), 1.0);
        let mut b = Dataset::empty();
        b.observe(Triple::new(1, 0, 0), 2.0);
        let m = a.merged(&b).unwrap();
        assert_eq!(m.observed_count(), 2);
        assert!(m.merged(&a).is_err());
    }

    #[test]
    fn observed_plan_matches_cells() {
        let frame = StudyFrame::cross_section(3).unwrap();
        let d = Dataset::from_entries(
            &frame,
            [
                (Triple::new(0, 0, 0), Value::Observed(1.0)),
                (Triple::new(2, 0, 0), Value::Missing),
            ],
        )
        .unwrap();
        let plan = d.observed_plan();
        assert_eq!(plan.cardinality(), 1);
        assert!(plan.contains(&Triple::new(0, 0, 0)));
    }
}

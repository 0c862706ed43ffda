use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::LocationSet;

/// Observation locations paired with observed field values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub locs: LocationSet,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(locs: LocationSet, values: Vec<f64>) -> Result<Self> {
        if locs.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: locs.len(),
                got: values.len(),
            });
        }
        if locs.is_empty() {
            return Err(Error::InvalidArgument("dataset has no observations".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("observation {i} is not finite")));
        }
        Ok(Dataset { locs, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Applies the same reordering to locations and values.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        Dataset {
            locs: self.locs.permuted(perm),
            values: perm.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

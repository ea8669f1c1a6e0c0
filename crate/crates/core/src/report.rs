//! Evaluation reports: per-metric, per-subset correlation tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::PlccFit;
use crate::error::{Error, Result};

/// Correlations for one (metric, subset) cell. `None` marks an undefined
/// coefficient (fewer than two samples, or a constant vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub srcc: Option<f64>,
    pub krcc: Option<f64>,
    pub plcc: Option<f64>,
    pub n: usize,
    /// How predictions were mapped before PLCC.
    #[serde(default)]
    pub plcc_fit: PlccFit,
    /// True when the metric is lower-is-better and was negated first.
    #[serde(default)]
    pub negated: bool,
}

impl CellStats {
    pub fn is_fully_defined(&self) -> bool {
        self.srcc.is_some() && self.krcc.is_some() && self.plcc.is_some()
    }
}

/// `metric_name -> subset -> cell`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub cells: BTreeMap<String, BTreeMap<String, CellStats>>,
}

impl EvalReport {
    pub fn insert(&mut self, metric: &str, subset: &str, cell: CellStats) {
        self.cells
            .entry(metric.to_string())
            .or_default()
            .insert(subset.to_string(), cell);
    }

    pub fn get(&self, metric: &str, subset: &str) -> Option<&CellStats> {
        self.cells.get(metric)?.get(subset)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.cells.keys().map(String::as_str)
    }

    pub fn merge(&mut self, other: EvalReport) {
        for (metric, subsets) in other.cells {
            self.cells.entry(metric).or_default().extend(subsets);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

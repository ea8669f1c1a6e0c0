//! Correlation of metric scores with MOS on the test fold, per subset.

use std::collections::{BTreeMap, HashMap};

use harmony_core::correlation::{clamp_infinite, krcc, plcc, srcc, PairedSample, PlccFit};
use harmony_core::{CellStats, EvalReport, MetricScore, MosRecord, Subset};

use crate::error::{BenchError, Result};
use crate::split::SplitSpec;

/// A column group of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SubsetFilter {
    All,
    Ngiha,
    Giha,
}

impl SubsetFilter {
    pub const ALL: [SubsetFilter; 3] = [SubsetFilter::All, SubsetFilter::Ngiha, SubsetFilter::Giha];

    pub fn name(self) -> &'static str {
        match self {
            SubsetFilter::All => "all",
            SubsetFilter::Ngiha => "NGIHA",
            SubsetFilter::Giha => "GIHA",
        }
    }

    pub fn admits(self, subset: Subset) -> bool {
        match self {
            SubsetFilter::All => true,
            SubsetFilter::Ngiha => subset == Subset::Ngiha,
            SubsetFilter::Giha => subset == Subset::Giha,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub fit: PlccFit,
    pub subsets: Vec<SubsetFilter>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            fit: PlccFit::Raw,
            subsets: SubsetFilter::ALL.to_vec(),
        }
    }
}

/// Correlations of already-oriented predictions with targets. Fewer than two
/// pairs leaves every coefficient undefined.
pub fn correlate(predictions: Vec<f64>, targets: Vec<f64>, fit: PlccFit) -> CellStats {
    let n = predictions.len();
    let mut cell = CellStats {
        srcc: None,
        krcc: None,
        plcc: None,
        n,
        plcc_fit: fit,
        negated: false,
    };
    if n < 2 {
        return cell;
    }
    let mut predictions = predictions;
    clamp_infinite(&mut predictions);
    let Ok(sample) = PairedSample::new(predictions, targets) else {
        return cell;
    };
    cell.srcc = srcc(&sample).ok();
    cell.krcc = krcc(&sample).ok();
    cell.plcc = plcc(&sample, fit).ok().map(|o| o.value);
    cell
}

/// Scores every metric found in `scores` against MOS over the test fold.
/// Lower-is-better metrics are negated first and the cell records it.
pub fn evaluate(
    scores: &[MetricScore],
    mos: &[MosRecord],
    split: &SplitSpec,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if split.test_ids.is_empty() {
        return Err(BenchError::EmptyTestSet);
    }
    let mos_by_id: HashMap<&str, f64> = mos.iter().map(|m| (m.image_id.as_str(), m.mos)).collect();
    let mut by_metric: BTreeMap<&str, (bool, HashMap<&str, f64>)> = BTreeMap::new();
    for s in scores {
        let entry = by_metric
            .entry(s.metric_name.as_str())
            .or_insert_with(|| (s.higher_is_better, HashMap::new()));
        entry.1.insert(s.image_id.as_str(), s.value);
    }

    let mut report = EvalReport::default();
    for (metric, (higher_is_better, values)) in by_metric {
        let missing: Vec<String> = split
            .test_ids
            .iter()
            .filter(|id| !values.contains_key(id.as_str()) || !mos_by_id.contains_key(id.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(BenchError::MissingPairs {
                metric: metric.to_string(),
                ids: missing,
            });
        }
        let sign = if higher_is_better { 1.0 } else { -1.0 };
        for filter in &opts.subsets {
            let (pred, target): (Vec<f64>, Vec<f64>) = split
                .test_ids
                .iter()
                .filter(|id| {
                    let subset = split.subsets.get(id.as_str()).copied().unwrap_or(Subset::Other);
                    filter.admits(subset)
                })
                .map(|id| (sign * values[id.as_str()], mos_by_id[id.as_str()]))
                .unzip();
            let mut cell = correlate(pred, target, opts.fit);
            cell.negated = !higher_is_better;
            report.insert(metric, filter.name(), cell);
        }
    }
    Ok(report)
}

/// Cells of the `all` column that lack a coefficient.
pub fn undefined_primary_cells(report: &EvalReport) -> Vec<String> {
    report
        .cells
        .iter()
        .filter(|(_, subsets)| {
            subsets
                .get(SubsetFilter::All.name())
                .is_none_or(|c| !c.is_fully_defined())
        })
        .map(|(metric, _)| metric.clone())
        .collect()
}

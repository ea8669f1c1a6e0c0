//! Rank and linear correlation between objective scores and MOS.

mod logistic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use logistic::{fit_logistic4, logistic4, LogisticFit, LOGISTIC_MAX_ITER, LOGISTIC_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("prediction and target lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("sample contains NaN")]
    NotANumber,
    #[error("correlation undefined: a vector is constant")]
    Constant,
}

/// Predictions paired with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    predictions: Vec<f64>,
    targets: Vec<f64>,
}

impl PairedSample {
    pub fn new(predictions: Vec<f64>, targets: Vec<f64>) -> Result<Self, CorrelationError> {
        if predictions.len() != targets.len() {
            return Err(CorrelationError::LengthMismatch(predictions.len(), targets.len()));
        }
        if predictions.len() < 2 {
            return Err(CorrelationError::TooShort {
                needed: 2,
                got: predictions.len(),
            });
        }
        if predictions.iter().chain(&targets).any(|v| v.is_nan()) {
            return Err(CorrelationError::NotANumber);
        }
        Ok(Self { predictions, targets })
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Replaces `+inf` by (largest finite value + 1) and `-inf` by (smallest
/// finite value - 1). A slice with no finite values becomes all zeros.
pub fn clamp_infinite(values: &mut [f64]) {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (1.0, -1.0) };
    for v in values.iter_mut() {
        if *v == f64::INFINITY {
            *v = hi + 1.0;
        } else if *v == f64::NEG_INFINITY {
            *v = lo - 1.0;
        }
    }
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn rank_with_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of two equal-length slices.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank-order correlation (Pearson on tie-averaged ranks).
pub fn srcc(s: &PairedSample) -> Result<f64, CorrelationError> {
    pearson(&rank_with_ties(&s.predictions), &rank_with_ties(&s.targets))
}

/// Number of pairs within runs of equal keys, given keys already sorted.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> i64 {
    let mut total = 0i64;
    let mut run = 0i64;
    let mut prev: Option<T> = None;
    for item in sorted {
        if prev.as_ref() == Some(&item) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
        prev = Some(item);
    }
    total + run * (run - 1) / 2
}

/// Merge sort counting strict inversions.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as i64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b, computed in O(n log n) with Knight's algorithm.
pub fn krcc(s: &PairedSample) -> Result<f64, CorrelationError> {
    let n = s.len() as i64;
    let mut pairs: Vec<(f64, f64)> = s.predictions.iter().copied().zip(s.targets.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(pairs.iter().map(|p| p.0));
    let n3 = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let discordant = count_inversions(&mut ys, &mut buf);
    let n2 = tied_pairs(ys.iter().copied());

    tau_b(n0, n1, n2, n0 - n1 - n2 + n3 - 2 * discordant)
}

/// Tau-b from pair counts: `numerator` is concordant minus discordant pairs.
pub fn tau_b(n0: i64, ties_x: i64, ties_y: i64, numerator: i64) -> Result<f64, CorrelationError> {
    let (dx, dy) = (n0 - ties_x, n0 - ties_y);
    if dx == 0 || dy == 0 {
        return Err(CorrelationError::Constant);
    }
    Ok((numerator as f64 / ((dx as f64) * (dy as f64)).sqrt()).clamp(-1.0, 1.0))
}

/// How predictions are mapped before computing PLCC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlccFit {
    #[default]
    Raw,
    Logistic4,
}

impl fmt::Display for PlccFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlccFit::Raw => "raw",
            PlccFit::Logistic4 => "logistic4",
        })
    }
}

impl FromStr for PlccFit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(PlccFit::Raw),
            "logistic4" => Ok(PlccFit::Logistic4),
            other => Err(format!("unknown PLCC fit `{other}` (raw|logistic4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlccOutcome {
    pub value: f64,
    /// False when the logistic fit hit its iteration cap; `value` is then
    /// computed from the best parameters found.
    pub converged: bool,
    pub fit: Option<LogisticFit>,
}

/// Pearson linear correlation, optionally after a 4-parameter logistic
/// mapping of the predictions onto the targets.
pub fn plcc(s: &PairedSample, fit: PlccFit) -> Result<PlccOutcome, CorrelationError> {
    match fit {
        PlccFit::Raw => Ok(PlccOutcome {
            value: pearson(&s.predictions, &s.targets)?,
            converged: true,
            fit: None,
        }),
        PlccFit::Logistic4 => {
            if s.len() < 5 {
                return Err(CorrelationError::TooShort {
                    needed: 5,
                    got: s.len(),
                });
            }
            let fitted = fit_logistic4(&s.predictions, &s.targets)?;
            let mapped: Vec<f64> = s.predictions.iter().map(|&x| logistic4(&fitted.params, x)).collect();
            let value = pearson(&mapped, &s.targets)?;
            if !fitted.converged {
                log::warn!(
                    "logistic fit stopped after {} iterations without converging",
                    fitted.iterations
                );
            }
            Ok(PlccOutcome {
                value,
                converged: fitted.converged,
                fit: Some(fitted),
            })
        }
    }
}

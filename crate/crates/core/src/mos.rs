//! Raw ratings to MOS: per-image outlier screening, subject rejection,
//! per-subject Z-scoring and rescaling to `[0, 100]`.
//!
//! Order of operations: outliers are detected once over all ratings, then
//! subjects with too many outliers are rejected, and Z-scores are computed
//! from each surviving subject's surviving ratings only.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{MosRecord, RatingRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    /// Band half-width, in standard deviations, for normally distributed images.
    pub normal_sigma: f64,
    /// Band half-width for images failing the normality test.
    pub nonnormal_sigma: f64,
    /// A subject is rejected when strictly more than this fraction of their
    /// ratings are outliers.
    pub subject_outlier_fraction: f64,
    /// Closed kurtosis interval treated as normal.
    pub kurtosis_normal_range: (f64, f64),
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            normal_sigma: 2.0,
            nonnormal_sigma: 20f64.sqrt(),
            subject_outlier_fraction: 0.05,
            kurtosis_normal_range: (2.0, 4.0),
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.kurtosis_normal_range;
        let ok = self.normal_sigma > 0.0
            && self.nonnormal_sigma > 0.0
            && self.subject_outlier_fraction > 0.0
            && self.subject_outlier_fraction < 1.0
            && lo > 0.0
            && hi >= lo;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad cleaning config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    /// Outlier ratings plus every rating of a rejected subject.
    pub removed_ratings: usize,
    pub total_ratings: usize,
    pub outlier_ratings: usize,
    pub rejected_subjects: Vec<String>,
    pub removal_fraction: f64,
    /// Subjects whose surviving ratings have zero spread; their Z-scores are 0.
    pub zero_variance_subjects: Vec<String>,
    /// Images left without any valid rating (no MOS emitted).
    pub missing_images: Vec<String>,
}

/// A single rating as a real number, so that affine rescalings can be studied.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub subject_id: String,
    pub image_id: String,
    pub value: f64,
}

impl From<&RatingRecord> for Vote {
    fn from(r: &RatingRecord) -> Self {
        Vote {
            subject_id: r.subject_id.clone(),
            image_id: r.image_id.clone(),
            value: f64::from(r.rating),
        }
    }
}

pub type VoteKey = (String, String);

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with N - 1 normalization; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Sample kurtosis `m4 / m2^2` from central moments. A constant vector is
/// defined to have kurtosis 3.
pub fn kurtosis(values: &[f64]) -> f64 {
    let m = mean(values);
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 3.0;
    }
    let m4 = values.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

/// Kurtosis test for the per-image rating distribution. Fewer than two
/// ratings give no basis to reject normality.
pub fn is_normal_distribution(values: &[f64], cfg: &CleaningConfig) -> bool {
    if values.len() < 2 {
        return true;
    }
    let (lo, hi) = cfg.kurtosis_normal_range;
    (lo..=hi).contains(&kurtosis(values))
}

/// Strictly outside `mean ± k·std`; a value on the boundary is kept.
pub fn exceeds_band(value: f64, mean: f64, std: f64, k: f64) -> bool {
    (value - mean).abs() > k * std
}

fn group_by_image(votes: &[Vote]) -> BTreeMap<&str, Vec<&Vote>> {
    let mut map: BTreeMap<&str, Vec<&Vote>> = BTreeMap::new();
    for v in votes {
        map.entry(v.image_id.as_str()).or_default().push(v);
    }
    map
}

/// Flags `(subject_id, image_id)` pairs whose rating lies outside the
/// per-image band.
pub fn detect_outliers(votes: &[Vote], cfg: &CleaningConfig) -> BTreeSet<VoteKey> {
    let mut flagged = BTreeSet::new();
    for (image, group) in group_by_image(votes) {
        let values: Vec<f64> = group.iter().map(|v| v.value).collect();
        let k = if is_normal_distribution(&values, cfg) {
            cfg.normal_sigma
        } else {
            cfg.nonnormal_sigma
        };
        let (m, s) = (mean(&values), sample_std(&values));
        for v in group {
            if exceeds_band(v.value, m, s, k) {
                flagged.insert((v.subject_id.clone(), image.to_string()));
            }
        }
    }
    flagged
}

/// Subjects whose outlier share strictly exceeds the configured fraction.
pub fn reject_subjects(votes: &[Vote], outliers: &BTreeSet<VoteKey>, cfg: &CleaningConfig) -> Vec<String> {
    let mut totals: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for v in votes {
        let entry = totals.entry(v.subject_id.as_str()).or_default();
        entry.0 += 1;
        if outliers.contains(&(v.subject_id.clone(), v.image_id.clone())) {
            entry.1 += 1;
        }
    }
    totals
        .into_iter()
        .filter(|&(_, (total, bad))| bad as f64 / total as f64 > cfg.subject_outlier_fraction)
        .map(|(s, _)| s.to_string())
        .collect()
}

/// Maps an averaged Z-score to the `[0, 100]` scale.
pub fn z_to_mos(z: f64) -> f64 {
    (100.0 * (z + 3.0) / 6.0).clamp(0.0, 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosComputation {
    /// Sorted by image id; `n_removed` is left at zero.
    pub records: Vec<MosRecord>,
    pub zero_variance_subjects: Vec<String>,
}

/// Z-scores each vote against its subject's mean and standard deviation,
/// averages per image and rescales. Subjects with zero spread contribute Z = 0.
pub fn compute_mos(votes: &[Vote]) -> MosComputation {
    let mut by_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for v in votes {
        by_subject.entry(v.subject_id.as_str()).or_default().push(v.value);
    }
    let mut zero_variance = Vec::new();
    let stats: BTreeMap<&str, (f64, f64)> = by_subject
        .iter()
        .map(|(&s, vals)| {
            let sd = sample_std(vals);
            if sd == 0.0 {
                log::warn!("subject `{s}` has no rating spread; using z = 0 for all their votes");
                zero_variance.push(s.to_string());
            }
            (s, (mean(vals), sd))
        })
        .collect();

    let records = group_by_image(votes)
        .into_iter()
        .map(|(image, group)| {
            let z_sum: f64 = group
                .iter()
                .map(|v| {
                    let (mu, sd) = stats[v.subject_id.as_str()];
                    if sd == 0.0 {
                        0.0
                    } else {
                        (v.value - mu) / sd
                    }
                })
                .sum();
            MosRecord {
                image_id: image.to_string(),
                mos: z_to_mos(z_sum / group.len() as f64),
                n_valid: group.len(),
                n_removed: 0,
            }
        })
        .collect();
    MosComputation {
        records,
        zero_variance_subjects: zero_variance,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosOutcome {
    pub records: Vec<MosRecord>,
    pub summary: CleaningSummary,
}

/// Full cleaning pipeline from raw ratings.
pub fn run_pipeline(ratings: &[RatingRecord], cfg: &CleaningConfig) -> Result<MosOutcome> {
    let votes: Vec<Vote> = ratings.iter().map(Vote::from).collect();
    run_pipeline_votes(&votes, cfg)
}

pub fn run_pipeline_votes(votes: &[Vote], cfg: &CleaningConfig) -> Result<MosOutcome> {
    cfg.validate()?;
    let mut seen = HashSet::with_capacity(votes.len());
    for v in votes {
        if !seen.insert((v.subject_id.as_str(), v.image_id.as_str())) {
            return Err(Error::DuplicateRating {
                subject_id: v.subject_id.clone(),
                image_id: v.image_id.clone(),
            });
        }
    }

    let outliers = detect_outliers(votes, cfg);
    let rejected = reject_subjects(votes, &outliers, cfg);
    let rejected_set: HashSet<&str> = rejected.iter().map(String::as_str).collect();

    let mut removed_per_image: BTreeMap<&str, usize> = BTreeMap::new();
    let mut survivors = Vec::with_capacity(votes.len());
    for v in votes {
        let removed = rejected_set.contains(v.subject_id.as_str())
            || outliers.contains(&(v.subject_id.clone(), v.image_id.clone()));
        let counter = removed_per_image.entry(v.image_id.as_str()).or_default();
        if removed {
            *counter += 1;
        } else {
            survivors.push(v.clone());
        }
    }

    let computed = compute_mos(&survivors);
    let mut records = computed.records;
    for r in &mut records {
        r.n_removed = removed_per_image[r.image_id.as_str()];
    }
    let present: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let missing_images: Vec<String> = removed_per_image
        .keys()
        .filter(|id| !present.contains(*id))
        .map(|id| id.to_string())
        .collect();
    for id in &missing_images {
        log::warn!("image `{id}` has no valid ratings left; no MOS emitted");
    }

    let removed = votes.len() - survivors.len();
    Ok(MosOutcome {
        records,
        summary: CleaningSummary {
            removed_ratings: removed,
            total_ratings: votes.len(),
            outlier_ratings: outliers.len(),
            rejected_subjects: rejected,
            removal_fraction: if votes.is_empty() {
                0.0
            } else {
                removed as f64 / votes.len() as f64
            },
            zero_variance_subjects: computed.zero_variance_subjects,
            missing_images,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(s: &str, i: &str, v: f64) -> Vote {
        Vote {
            subject_id: s.into(),
            image_id: i.into(),
            value: v,
        }
    }

    #[test]
    fn kurtosis_of_two_point_mass_is_one() {
        let v = [1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
        assert!((kurtosis(&v) - 1.0).abs() < 1e-12);
        assert!(!is_normal_distribution(&v, &CleaningConfig::default()));
    }

    #[test]
    fn constant_vector_counts_as_normal() {
        let v = [3.0; 8];
        assert_eq!(kurtosis(&v), 3.0);
        assert!(is_normal_distribution(&v, &CleaningConfig::default()));
        assert!(is_normal_distribution(&[2.0], &CleaningConfig::default()));
    }

    #[test]
    fn bell_shaped_ratings_are_normal() {
        // 21 votes with counts 2,3,11,3,2 over the scale; kurtosis 3.0372
        // from the direct moment formula.
        let counts = [2, 3, 11, 3, 2];
        let v: Vec<f64> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n((i + 1) as f64, n))
            .collect();
        assert_eq!(v.len(), 21);
        assert!((kurtosis(&v) - 3.0372).abs() < 1e-4);
        assert!(is_normal_distribution(&v, &CleaningConfig::default()));
    }

    #[test]
    fn unanimous_image_has_no_outliers() {
        let votes: Vec<_> = (0..10).map(|s| vote(&format!("s{s}"), "a", 4.0)).collect();
        assert!(detect_outliers(&votes, &CleaningConfig::default()).is_empty());
    }

    #[test]
    fn boundary_is_not_an_outlier() {
        assert!(!exceeds_band(5.0, 3.0, 1.0, 2.0));
        assert!(exceeds_band(5.0 + 1e-9, 3.0, 1.0, 2.0));
    }

    #[test]
    fn lone_dissenter_among_twenty_stays_within_sqrt20_band() {
        // One 1 among twenty 5s: kurtosis ~19 (not normal), so the band is
        // sqrt(20)·s. The dissenter sits at (n-1)/sqrt(n)·s ~ 4.36 s from the
        // mean, which can never exceed sqrt(20)·s for n = 21.
        let mut votes: Vec<_> = (0..20).map(|s| vote(&format!("s{s}"), "a", 5.0)).collect();
        votes.push(vote("odd", "a", 1.0));
        let values: Vec<f64> = votes.iter().map(|v| v.value).collect();
        assert!(kurtosis(&values) > 4.0);
        assert!((sample_std(&values) - 0.8729).abs() < 1e-3);
        assert!(detect_outliers(&votes, &CleaningConfig::default()).is_empty());

        // The same dissent is flagged when the normal-band multiplier applies.
        let cfg = CleaningConfig {
            kurtosis_normal_range: (2.0, 100.0),
            ..CleaningConfig::default()
        };
        let flagged = detect_outliers(&votes, &cfg);
        assert_eq!(flagged.len(), 1);
        assert!(flagged.contains(&("odd".to_string(), "a".to_string())));
    }

    fn subject_with_outliers(n_outliers: usize) -> (Vec<Vote>, BTreeSet<VoteKey>) {
        let votes: Vec<_> = (0..1350).map(|i| vote("s", &format!("i{i}"), 3.0)).collect();
        let outliers = (0..n_outliers).map(|i| ("s".to_string(), format!("i{i}"))).collect();
        (votes, outliers)
    }

    #[test]
    fn subject_rejection_threshold() {
        let cfg = CleaningConfig::default();
        let (v, o) = subject_with_outliers(0);
        assert!(reject_subjects(&v, &o, &cfg).is_empty());
        let (v, o) = subject_with_outliers(67);
        assert!(reject_subjects(&v, &o, &cfg).is_empty());
        let (v, o) = subject_with_outliers(68);
        assert_eq!(reject_subjects(&v, &o, &cfg), vec!["s".to_string()]);
    }

    #[test]
    fn two_by_two_fixture() {
        let votes = vec![
            vote("s1", "A", 1.0),
            vote("s1", "B", 5.0),
            vote("s2", "A", 2.0),
            vote("s2", "B", 4.0),
        ];
        let out = compute_mos(&votes);
        assert_eq!(out.records[0].image_id, "A");
        assert!((out.records[0].mos - 38.215).abs() < 1e-3);
        assert!((out.records[1].mos - 61.785).abs() < 1e-3);
    }

    #[test]
    fn z_endpoints() {
        assert_eq!(z_to_mos(-3.0), 0.0);
        assert_eq!(z_to_mos(0.0), 50.0);
        assert_eq!(z_to_mos(3.0), 100.0);
        assert_eq!(z_to_mos(4.0), 100.0);
        assert_eq!(z_to_mos(-7.0), 0.0);
    }

    #[test]
    fn flat_subject_maps_to_fifty() {
        let votes: Vec<_> = (0..4).map(|i| vote("s", &format!("i{i}"), 3.0)).collect();
        let out = compute_mos(&votes);
        assert!(out.records.iter().all(|r| r.mos == 50.0));
        assert_eq!(out.zero_variance_subjects, vec!["s".to_string()]);
    }

    #[test]
    fn duplicates_are_rejected() {
        let votes = vec![vote("s", "a", 1.0), vote("s", "a", 2.0)];
        assert!(matches!(
            run_pipeline_votes(&votes, &CleaningConfig::default()),
            Err(Error::DuplicateRating { .. })
        ));
    }

    #[test]
    fn image_losing_every_vote_is_missing() {
        // a single subject rejected for outliers leaves their only image empty
        let cfg = CleaningConfig {
            subject_outlier_fraction: 0.01,
            ..CleaningConfig::default()
        };
        let mut votes = Vec::new();
        for s in 0..12 {
            votes.push(vote(&format!("s{s}"), "shared", 3.0 + (s % 3) as f64 - 1.0));
        }
        votes.push(vote("s0", "only-s0", 2.0));
        votes.push(vote("s11", "shared2", 5.0));
        let out = run_pipeline_votes(&votes, &cfg).unwrap();
        assert!(out.records.iter().all(|r| r.n_valid >= 1));
        assert_eq!(
            out.summary.total_ratings,
            out.summary.removed_ratings + out.records.iter().map(|r| r.n_valid).sum::<usize>()
        );
    }
}

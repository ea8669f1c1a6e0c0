//! Session identity and per-subject presentation order.

use chrono::{DateTime, Duration, Utc};
use harmony_core::DatasetManifest;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SESSION_MINUTES: i64 = 30;

pub const CRITERIA_TEXT: &str = "harmonization effectiveness, content authenticity, and foreground detail preservation";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the ordered image ids, so sessions over different
/// sub-manifests never collide.
pub fn manifest_fingerprint(manifest: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    for e in &manifest.entries {
        h.update(e.image_id.as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize()[..8])
}

fn mix(tag: &str, seed: u64, subject_id: &str, extra: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    h.update((subject_id.len() as u64).to_le_bytes());
    h.update(subject_id.as_bytes());
    h.update(extra.as_bytes());
    h.finalize().into()
}

pub fn session_id(seed: u64, subject_id: &str, fingerprint: &str) -> String {
    hex(&mix("session", seed, subject_id, fingerprint)[..12])
}

/// Presentation order for one subject: the manifest ids shuffled by a
/// generator keyed on both the seed and the subject.
pub fn permutation(image_ids: &[String], seed: u64, subject_id: &str) -> Vec<String> {
    let mut rng = ChaCha8Rng::from_seed(mix("order", seed, subject_id, ""));
    let mut order = image_ids.to_vec();
    order.shuffle(&mut rng);
    order
}

/// What is persisted about a session besides its ratings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub subject_id: String,
    pub seed: u64,
    pub manifest: String,
    pub started_at: DateTime<Utc>,
    pub max_minutes: i64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub meta: SessionMeta,
    pub assignment: Vec<String>,
    /// Ratings given so far, aligned with the assignment prefix.
    pub ratings: Vec<u8>,
}

impl Session {
    pub fn cursor(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor() == self.assignment.len()
    }

    pub fn expires_at(&self) -> DateTime<Utc> {
        self.meta.started_at + Duration::minutes(self.meta.max_minutes)
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now > self.expires_at()
    }

    pub fn current(&self) -> Option<&str> {
        self.assignment.get(self.cursor()).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub subject_id: String,
    pub progress: Progress,
    pub started_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub max_duration_minutes: i64,
    pub expired: bool,
    pub complete: bool,
    /// True when an existing session was picked up instead of a new one.
    pub resumed: bool,
}

impl Session {
    pub fn summary(&self, now: DateTime<Utc>, resumed: bool) -> SessionSummary {
        SessionSummary {
            session_id: self.meta.session_id.clone(),
            subject_id: self.meta.subject_id.clone(),
            progress: self.progress(),
            started_at: self.meta.started_at,
            expires_at: self.expires_at(),
            max_duration_minutes: self.meta.max_minutes,
            expired: self.is_expired(now),
            complete: self.is_complete(),
            resumed,
        }
    }

    pub fn progress(&self) -> Progress {
        Progress {
            done: self.cursor(),
            total: self.assignment.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub image_id: String,
    pub harmonized_url: String,
    pub composite_url: String,
    pub reference_url: String,
}

impl Triplet {
    pub fn for_image(image_id: &str) -> Self {
        let url = |role: &str| format!("/img/{image_id}/{role}");
        Self {
            image_id: image_id.to_string(),
            harmonized_url: url("harmonized"),
            composite_url: url("composite"),
            reference_url: url("reference"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextItem {
    pub done: bool,
    pub progress: Progress,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub item: Option<Triplet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub image_id: String,
    pub rating: u8,
    /// The same rating had already been stored; nothing was appended.
    pub duplicate: bool,
    pub progress: Progress,
}

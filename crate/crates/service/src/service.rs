//! Session bookkeeping independent of the HTTP layer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use harmony_core::{DatasetManifest, ImageRole, RatingRecord};

use crate::clock::Clock;
use crate::error::{Result, ServiceError};
use crate::session::{
    manifest_fingerprint, permutation, session_id, Ack, NextItem, Session, SessionMeta, SessionSummary, Triplet,
    CRITERIA_TEXT, DEFAULT_SESSION_MINUTES,
};
use crate::store::{sidecar_path, RatingsLog, Sidecar};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub manifest: DatasetManifest,
    pub ratings_path: PathBuf,
    pub seed: u64,
    pub session_minutes: i64,
}

impl ServiceConfig {
    pub fn new(manifest: DatasetManifest, ratings_path: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            manifest,
            ratings_path: ratings_path.into(),
            seed,
            session_minutes: DEFAULT_SESSION_MINUTES,
        }
    }
}

#[derive(Default)]
struct Registry {
    sessions: HashMap<String, Arc<Mutex<Session>>>,
    by_subject: HashMap<String, String>,
}

pub struct RatingService {
    manifest: DatasetManifest,
    image_ids: Vec<String>,
    fingerprint: String,
    seed: u64,
    session_minutes: i64,
    clock: Arc<dyn Clock>,
    registry: RwLock<Registry>,
    log: Mutex<RatingsLog>,
    sidecar: Mutex<Sidecar>,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn check_subject(subject_id: &str) -> Result<()> {
    if subject_id.trim().is_empty() {
        return Err(ServiceError::InvalidSubject("must not be empty".into()));
    }
    if subject_id.chars().count() > 128 || subject_id.chars().any(char::is_control) {
        return Err(ServiceError::InvalidSubject(
            "at most 128 characters, no control characters".into(),
        ));
    }
    Ok(())
}

impl RatingService {
    /// Opens the ratings file and sidecar and restores every session that
    /// belongs to this manifest, with its cursor taken from the CSV.
    pub fn open(cfg: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        if cfg.manifest.is_empty() {
            return Err(ServiceError::Corrupt("the manifest has no images".into()));
        }
        if cfg.session_minutes <= 0 {
            return Err(ServiceError::Corrupt("session length must be positive".into()));
        }
        let image_ids: Vec<String> = cfg.manifest.entries.iter().map(|e| e.image_id.clone()).collect();
        let fingerprint = manifest_fingerprint(&cfg.manifest);
        let (log, rows) = RatingsLog::open(&cfg.ratings_path)?;
        let mut sidecar = Sidecar::open(sidecar_path(&cfg.ratings_path))?;

        let mut rows_by_session: HashMap<&str, Vec<&RatingRecord>> = HashMap::new();
        for r in &rows {
            rows_by_session.entry(r.session_id.as_str()).or_default().push(r);
        }

        // A session with rows but no sidecar entry (sidecar lost) is rebuilt
        // when its id matches what this server would have issued.
        let known: std::collections::HashSet<String> = sidecar.entries.iter().map(|m| m.session_id.clone()).collect();
        let mut orphans: Vec<&str> = rows_by_session
            .keys()
            .copied()
            .filter(|s| !known.contains(*s))
            .collect();
        orphans.sort_unstable();
        for sid in orphans {
            let first = rows_by_session[sid][0];
            if session_id(cfg.seed, &first.subject_id, &fingerprint) != sid {
                continue;
            }
            let started_at = DateTime::parse_from_rfc3339(&first.timestamp)
                .map_err(|e| ServiceError::Corrupt(format!("session {sid}: bad timestamp: {e}")))?
                .with_timezone(&Utc);
            log::warn!("rebuilding metadata of session {sid} from the ratings file");
            sidecar.push(SessionMeta {
                session_id: sid.to_string(),
                subject_id: first.subject_id.clone(),
                seed: cfg.seed,
                manifest: fingerprint.clone(),
                started_at,
                max_minutes: cfg.session_minutes,
            })?;
        }

        let mut registry = Registry::default();
        for meta in sidecar.entries.iter().filter(|m| m.manifest == fingerprint) {
            let assignment = permutation(&image_ids, meta.seed, &meta.subject_id);
            let mut ratings = Vec::new();
            for (k, r) in rows_by_session
                .get(meta.session_id.as_str())
                .into_iter()
                .flatten()
                .enumerate()
            {
                if assignment.get(k) != Some(&r.image_id) || r.subject_id != meta.subject_id {
                    return Err(ServiceError::Corrupt(format!(
                        "row {k} of session {} does not follow its assignment",
                        meta.session_id
                    )));
                }
                ratings.push(r.rating);
            }
            registry
                .by_subject
                .insert(meta.subject_id.clone(), meta.session_id.clone());
            registry.sessions.insert(
                meta.session_id.clone(),
                Arc::new(Mutex::new(Session {
                    meta: meta.clone(),
                    assignment,
                    ratings,
                })),
            );
        }
        log::info!(
            "{} images, {} restored sessions, ratings at {}",
            image_ids.len(),
            registry.sessions.len(),
            log.path().display()
        );
        Ok(Self {
            manifest: cfg.manifest,
            image_ids,
            fingerprint,
            seed: cfg.seed,
            session_minutes: cfg.session_minutes,
            clock,
            registry: RwLock::new(registry),
            log: Mutex::new(log),
            sidecar: Mutex::new(sidecar),
        })
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.registry
            .read()
            .unwrap()
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Starts a session for the subject, or resumes the one they already have
    /// on this manifest.
    pub fn start_session(&self, subject_id: &str) -> Result<SessionSummary> {
        check_subject(subject_id)?;
        let now = self.clock.now();
        let mut reg = self.registry.write().unwrap();
        if let Some(id) = reg.by_subject.get(subject_id) {
            let s = reg.sessions[id].lock().unwrap();
            return Ok(s.summary(now, true));
        }
        let meta = SessionMeta {
            session_id: session_id(self.seed, subject_id, &self.fingerprint),
            subject_id: subject_id.to_string(),
            seed: self.seed,
            manifest: self.fingerprint.clone(),
            started_at: now,
            max_minutes: self.session_minutes,
        };
        self.sidecar.lock().unwrap().push(meta.clone())?;
        let session = Session {
            assignment: permutation(&self.image_ids, self.seed, subject_id),
            ratings: Vec::new(),
            meta,
        };
        let summary = session.summary(now, false);
        reg.by_subject
            .insert(subject_id.to_string(), summary.session_id.clone());
        reg.sessions
            .insert(summary.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(summary)
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary> {
        let s = self.lookup(id)?;
        let s = s.lock().unwrap();
        Ok(s.summary(self.clock.now(), false))
    }

    /// Full assignment of a session, for auditing.
    pub fn assignment(&self, id: &str) -> Result<Vec<String>> {
        Ok(self.lookup(id)?.lock().unwrap().assignment.clone())
    }

    pub fn next_item(&self, id: &str) -> Result<NextItem> {
        let s = self.lookup(id)?;
        let s = s.lock().unwrap();
        if s.is_expired(self.clock.now()) {
            return Err(ServiceError::Expired(id.to_string()));
        }
        Ok(match s.current() {
            None => NextItem {
                done: true,
                progress: s.progress(),
                item: None,
                criteria_text: None,
            },
            Some(image_id) => NextItem {
                done: false,
                progress: s.progress(),
                item: Some(Triplet::for_image(image_id)),
                criteria_text: Some(CRITERIA_TEXT.to_string()),
            },
        })
    }

    /// Records a rating for the current item. Resending a rating that was
    /// already stored acknowledges again without writing, even after expiry,
    /// so a client that lost an ack can always recover.
    pub fn submit_rating(&self, id: &str, image_id: &str, rating: i64) -> Result<Ack> {
        let s = self.lookup(id)?;
        if !(1..=5).contains(&rating) {
            return Err(ServiceError::RatingRange(rating));
        }
        let rating = rating as u8;
        let mut s = s.lock().unwrap();
        if let Some(pos) = s.assignment[..s.cursor()].iter().position(|x| x == image_id) {
            let previous = s.ratings[pos];
            if previous != rating {
                return Err(ServiceError::AlreadyRated {
                    image_id: image_id.to_string(),
                    previous,
                });
            }
            return Ok(Ack {
                image_id: image_id.to_string(),
                rating,
                duplicate: true,
                progress: s.progress(),
            });
        }
        let now = self.clock.now();
        if s.is_expired(now) {
            return Err(ServiceError::Expired(id.to_string()));
        }
        let Some(expected) = s.current() else {
            return Err(ServiceError::Complete(id.to_string()));
        };
        if expected != image_id {
            return Err(ServiceError::OutOfOrder {
                expected: expected.to_string(),
                got: image_id.to_string(),
            });
        }
        let record = RatingRecord {
            subject_id: s.meta.subject_id.clone(),
            image_id: image_id.to_string(),
            session_id: s.meta.session_id.clone(),
            rating,
            timestamp: timestamp(now),
        };
        self.log.lock().unwrap().append(&record)?;
        s.ratings.push(rating);
        Ok(Ack {
            image_id: image_id.to_string(),
            rating,
            duplicate: false,
            progress: s.progress(),
        })
    }

    pub fn image_path(&self, image_id: &str, role: &str) -> Result<PathBuf> {
        let missing = || ServiceError::UnknownImage {
            image_id: image_id.to_string(),
            role: role.to_string(),
        };
        let role = ImageRole::parse(role).ok_or_else(missing)?;
        let entry = self.manifest.get(image_id).ok_or_else(missing)?;
        Ok(self.manifest.image_path(entry, role))
    }
}

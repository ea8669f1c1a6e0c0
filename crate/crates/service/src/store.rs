//! Durable storage: the append-only ratings CSV and the session sidecar.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use harmony_core::records::{parse_ratings, write_rating_row, RATINGS_HEADER};
use harmony_core::RatingRecord;

use crate::error::{io, Result};
use crate::session::SessionMeta;

/// Single appender for the ratings file. Every row is synced to disk before
/// `append` returns.
#[derive(Debug)]
pub struct RatingsLog {
    path: PathBuf,
    file: File,
}

impl RatingsLog {
    /// Opens (or creates) the file and returns the rows already in it. A torn
    /// final line left by a crash mid-write is cut off; it was never acknowledged.
    pub fn open(path: &Path) -> Result<(Self, Vec<RatingRecord>)> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| io(path, e))?;
        if bytes.is_empty() {
            let header = format!("{}\n", RATINGS_HEADER.join(","));
            file.write_all(header.as_bytes()).map_err(|e| io(path, e))?;
            file.sync_all().map_err(|e| io(path, e))?;
            return Ok((
                Self {
                    path: path.to_path_buf(),
                    file,
                },
                Vec::new(),
            ));
        }
        if bytes.last() != Some(&b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            log::warn!(
                "{}: dropping {} bytes of an incomplete row",
                path.display(),
                bytes.len() - keep
            );
            file.set_len(keep as u64).map_err(|e| io(path, e))?;
            file.seek(SeekFrom::End(0)).map_err(|e| io(path, e))?;
            file.sync_all().map_err(|e| io(path, e))?;
            bytes.truncate(keep);
        }
        let rows = parse_ratings(bytes.as_slice(), path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            rows,
        ))
    }

    pub fn append(&mut self, record: &RatingRecord) -> Result<()> {
        let mut row = Vec::with_capacity(96);
        write_rating_row(&mut row, record)?;
        self.file.write_all(&row).map_err(|e| io(&self.path, e))?;
        self.file.sync_data().map_err(|e| io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Session metadata kept next to the ratings file. Entries belonging to
/// other manifests are preserved untouched.
#[derive(Debug)]
pub struct Sidecar {
    path: PathBuf,
    pub entries: Vec<SessionMeta>,
}

pub fn sidecar_path(ratings: &Path) -> PathBuf {
    let mut name = ratings.file_name().unwrap_or_default().to_os_string();
    name.push(".sessions.json");
    ratings.with_file_name(name)
}

impl Sidecar {
    pub fn open(path: PathBuf) -> Result<Self> {
        let entries = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(&path, e)),
        };
        Ok(Self { path, entries })
    }

    /// Adds an entry and rewrites the file atomically.
    pub fn push(&mut self, meta: SessionMeta) -> Result<()> {
        self.entries.push(meta);
        let write = || -> Result<()> {
            let tmp = self.path.with_extension("json.tmp");
            let mut f = File::create(&tmp).map_err(|e| io(&tmp, e))?;
            f.write_all(serde_json::to_string_pretty(&self.entries)?.as_bytes())
                .and_then(|_| f.sync_all())
                .map_err(|e| io(&tmp, e))?;
            std::fs::rename(&tmp, &self.path).map_err(|e| io(&self.path, e))
        };
        write().inspect_err(|_| {
            self.entries.pop();
        })
    }
}

//! CSV record types: raw ratings, cleaned MOS and per-image metric scores.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RATINGS_HEADER: [&str; 5] = ["subject_id", "image_id", "session_id", "rating", "timestamp"];
pub const MOS_HEADER: [&str; 4] = ["image_id", "mos", "n_valid", "n_removed"];
pub const SCORES_HEADER: [&str; 3] = ["image_id", "metric", "value"];

/// One vote of one annotator on one image, on the 1..=5 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject_id: String,
    pub image_id: String,
    pub session_id: String,
    pub rating: u8,
    pub timestamp: String,
}

/// Aggregated opinion score for one image after cleaning, in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub image_id: String,
    pub mos: f64,
    pub n_valid: usize,
    pub n_removed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricScore {
    pub metric_name: String,
    pub image_id: String,
    pub value: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    image_id: String,
    metric: String,
    value: f64,
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn read_rows<T, R>(reader: R, origin: &Path, header: &[&str]) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let found = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
    check_header(origin, &found, header)?;
    rdr.deserialize()
        .map(|row| row.map_err(|e| csv_error(origin, e)))
        .collect()
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn parse_ratings(reader: impl Read, origin: &Path) -> Result<Vec<RatingRecord>> {
    // Ratings are parsed as wide integers first so that out-of-range votes
    // produce a domain error rather than a generic overflow message.
    #[derive(Deserialize)]
    struct Raw {
        subject_id: String,
        image_id: String,
        session_id: String,
        rating: i64,
        timestamp: String,
    }
    let rows: Vec<Raw> = read_rows(reader, origin, &RATINGS_HEADER)?;
    rows.into_iter()
        .map(|r| {
            if !(1..=5).contains(&r.rating) {
                return Err(Error::RatingOutOfRange {
                    image_id: r.image_id,
                    rating: r.rating,
                });
            }
            Ok(RatingRecord {
                subject_id: r.subject_id,
                image_id: r.image_id,
                session_id: r.session_id,
                rating: r.rating as u8,
                timestamp: r.timestamp,
            })
        })
        .collect()
}

pub fn read_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    parse_ratings(open(path)?, path)
}

/// Serializes one ratings row (no header, LF terminated).
pub fn write_rating_row(writer: impl Write, record: &RatingRecord) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.serialize(record)
        .and_then(|_| w.flush().map_err(Into::into))
        .map_err(|e| csv_error(Path::new("<ratings>"), e))
}

pub fn write_ratings(path: impl AsRef<Path>, records: &[RatingRecord]) -> Result<()> {
    write_rows(path.as_ref(), &RATINGS_HEADER, records)
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_rows_to(&mut buf, header, rows)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_rows_to<T: Serialize>(writer: impl Write, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let origin = Path::new("<csv>");
    w.write_record(header).map_err(|e| csv_error(origin, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(origin, e))?;
    }
    w.flush().map_err(|e| Error::io(origin, e))
}

pub fn read_mos(path: impl AsRef<Path>) -> Result<Vec<MosRecord>> {
    let path = path.as_ref();
    read_rows(open(path)?, path, &MOS_HEADER)
}

pub fn write_mos_to(writer: impl Write, records: &[MosRecord]) -> Result<()> {
    write_rows_to(writer, &MOS_HEADER, records)
}

pub fn write_mos(path: impl AsRef<Path>, records: &[MosRecord]) -> Result<()> {
    write_rows(path.as_ref(), &MOS_HEADER, records)
}

/// Reads a scores file. Orientation is looked up from the metric registry,
/// defaulting to higher-is-better for names it does not know.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<MetricScore>> {
    let path = path.as_ref();
    let rows: Vec<ScoreRow> = read_rows(open(path)?, path, &SCORES_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|r| MetricScore {
            higher_is_better: crate::metrics::higher_is_better(&r.metric),
            metric_name: r.metric,
            image_id: r.image_id,
            value: r.value,
        })
        .collect())
}

pub fn write_scores_to(writer: impl Write, scores: &[MetricScore]) -> Result<()> {
    let rows: Vec<ScoreRow> = scores
        .iter()
        .map(|s| ScoreRow {
            image_id: s.image_id.clone(),
            metric: s.metric_name.clone(),
            value: s.value,
        })
        .collect();
    write_rows_to(writer, &SCORES_HEADER, &rows)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[MetricScore]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_scores_to(&mut buf, scores)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

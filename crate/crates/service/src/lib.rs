//! Local rating service for subjective studies. Each annotator gets a
//! seeded permutation of the manifest, rates one triplet at a time, and
//! every acknowledged rating is already on disk in the ratings CSV.

pub mod clock;
pub mod error;
pub mod http;
pub mod service;
pub mod session;
pub mod store;

pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use service::{RatingService, ServiceConfig};
pub use session::{permutation, session_id, Ack, NextItem, SessionSummary, CRITERIA_TEXT};

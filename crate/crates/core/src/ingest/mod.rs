//! Dataset parsing, static/class filtering and the canonical `.trkz` store.
//!
//! Column layouts follow the public documentation of each dataset family;
//! see `docs/datasets.md` in the repository for the exact columns read.

mod csvtable;
mod highd;
mod ind;
mod interaction;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::types::{AgentClass, Track, TrackRecord};

pub use store::{read_store, read_store_file, write_store, write_store_file, CanonicalStore, StoreHeader, STORE_VERSION};

/// Default static-vehicle threshold, meters of displacement over the whole track.
pub const DEFAULT_MIN_DISPLACEMENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// inD and rounD, which share one file layout.
    IndFamily,
    Highd,
    Interaction,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::IndFamily => "ind_family",
            Self::Highd => "highd",
            Self::Interaction => "interaction",
        }
    }

    pub fn heading_source(self) -> HeadingSource {
        match self {
            Self::Highd => HeadingSource::DistanceHeadway,
            _ => HeadingSource::Degrees,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ind_family" | "ind" | "round" => Ok(Self::IndFamily),
            "highd" => Ok(Self::Highd),
            "interaction" => Ok(Self::Interaction),
            _ => Err(format!("unknown dataset kind `{s}`")),
        }
    }
}

/// What the `heading_deg` slot of every record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadingSource {
    Degrees,
    /// highD has no heading column; minimal distance headway (meters) is
    /// stored verbatim in its place.
    DistanceHeadway,
}

/// A named byte stream, typically one file of a recording.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl SourceFile {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.into(),
        }
    }

    pub fn read(path: &Path, base: &Path) -> std::io::Result<Self> {
        let name = path
            .strip_prefix(base)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        Ok(Self::new(name, std::fs::read(path)?))
    }

    pub(crate) fn basename(&self) -> &str {
        self.name.rsplit('/').next().unwrap_or(&self.name)
    }

    pub(crate) fn parent_dir(&self) -> Option<&str> {
        let mut parts = self.name.rsplit('/');
        parts.next();
        parts.next()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Abort on the first malformed row instead of reporting and skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRow {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

/// Row accounting for one parse: `rows_in == records_out + malformed.len()`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_in: usize,
    pub records_out: usize,
    pub malformed: Vec<MalformedRow>,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub kind: DatasetKind,
    pub tracks: Vec<Track>,
    pub sample_hz: BTreeMap<String, f64>,
    pub report: ParseReport,
}

impl Parsed {
    pub fn into_store(self) -> CanonicalStore {
        CanonicalStore {
            header: StoreHeader {
                version: STORE_VERSION,
                kind: self.kind,
                heading_source: self.kind.heading_source(),
                sample_hz: self.sample_hz,
            },
            tracks: self.tracks,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: required column `{column}` not found in header")]
    UnknownColumn { file: String, column: String },
    #[error("recording {recording}: missing metadata ({what})")]
    MissingMetadata { recording: String, what: String },
    #[error("{file}:{line}: malformed row: {reason}")]
    MalformedRow { file: String, line: u64, reason: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Store(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One raw row after column extraction, before grouping into tracks.
pub(crate) struct RawRow {
    pub recording_id: String,
    pub record: TrackRecord,
    pub file: String,
    pub line: u64,
}

/// Per-track attributes from metadata files.
pub(crate) struct TrackMeta {
    pub location_id: String,
    pub class: AgentClass,
}

/// Collects rows and malformed-row reports while enforcing strict mode.
pub(crate) struct RowSink {
    pub strict: bool,
    pub rows_in: usize,
    pub rows: Vec<RawRow>,
    pub malformed: Vec<MalformedRow>,
}

impl RowSink {
    pub fn new(opts: ParseOptions) -> Self {
        Self {
            strict: opts.strict,
            rows_in: 0,
            rows: Vec::new(),
            malformed: Vec::new(),
        }
    }

    pub fn reject(&mut self, file: &str, line: u64, reason: String) -> Result<(), IngestError> {
        if self.strict {
            return Err(IngestError::MalformedRow {
                file: file.to_string(),
                line,
                reason,
            });
        }
        self.malformed.push(MalformedRow {
            file: file.to_string(),
            line,
            reason,
        });
        Ok(())
    }
}

/// Parses one dataset family's files into tracks, one per `(recording, track id)`.
pub fn parse_dataset(kind: DatasetKind, files: &[SourceFile], opts: ParseOptions) -> Result<Parsed, IngestError> {
    let mut sink = RowSink::new(opts);
    let (meta, sample_hz) = match kind {
        DatasetKind::IndFamily => ind::parse(files, &mut sink)?,
        DatasetKind::Highd => highd::parse(files, &mut sink)?,
        DatasetKind::Interaction => interaction::parse(files, &mut sink)?,
    };
    assemble(kind, sink, meta, sample_hz)
}

fn assemble(
    kind: DatasetKind,
    mut sink: RowSink,
    meta: HashMap<(String, i64), TrackMeta>,
    sample_hz: BTreeMap<String, f64>,
) -> Result<Parsed, IngestError> {
    let mut groups: BTreeMap<(String, i64), Vec<RawRow>> = BTreeMap::new();
    for row in std::mem::take(&mut sink.rows) {
        groups
            .entry((row.recording_id.clone(), row.record.track_id))
            .or_default()
            .push(row);
    }

    let mut tracks = Vec::with_capacity(groups.len());
    let mut records_out = 0;
    for ((recording_id, track_id), mut rows) in groups {
        let hz = *sample_hz
            .get(&recording_id)
            .ok_or_else(|| IngestError::MissingMetadata {
                recording: recording_id.clone(),
                what: "frame rate".into(),
            })?;
        // ties broken by source position so the kept duplicate is deterministic
        rows.sort_by(|a, b| {
            a.record
                .frame
                .cmp(&b.record.frame)
                .then_with(|| a.file.cmp(&b.file))
                .then(a.line.cmp(&b.line))
        });
        let mut records: Vec<TrackRecord> = Vec::with_capacity(rows.len());
        for row in rows {
            if records.last().is_some_and(|r| r.frame == row.record.frame) {
                sink.reject(
                    &row.file,
                    row.line,
                    format!("duplicate frame {} for track {}", row.record.frame, track_id),
                )?;
                continue;
            }
            records.push(row.record);
        }
        let (location_id, agent_class) = match meta.get(&(recording_id.clone(), track_id)) {
            Some(m) => (m.location_id.clone(), m.class),
            None => (String::new(), AgentClass::Other),
        };
        records_out += records.len();
        tracks.push(Track {
            track_id,
            recording_id,
            location_id,
            agent_class,
            sample_hz: hz,
            records,
        });
    }

    sink.malformed.sort_by(|a, b| a.file.cmp(&b.file).then(a.line.cmp(&b.line)));
    Ok(Parsed {
        kind,
        tracks,
        sample_hz,
        report: ParseReport {
            rows_in: sink.rows_in,
            records_out,
            malformed: sink.malformed,
        },
    })
}

/// Largest distance from the first record to any record of the track.
pub fn max_displacement(track: &Track) -> f64 {
    let Some(first) = track.records.first() else {
        return 0.0;
    };
    track
        .records
        .iter()
        .map(|r| (r.x - first.x).hypot(r.y - first.y))
        .fold(0.0, f64::max)
}

/// Drops tracks that never move `min_displacement` meters away from their start.
pub fn filter_static(tracks: Vec<Track>, min_displacement: f64) -> Vec<Track> {
    assert!(min_displacement >= 0.0, "min_displacement must be non-negative");
    tracks
        .into_iter()
        .filter(|t| min_displacement == 0.0 || max_displacement(t) >= min_displacement)
        .collect()
}

/// # Panics
/// Panics if `allowed` is empty.
pub fn filter_class(tracks: Vec<Track>, allowed: &BTreeSet<AgentClass>) -> Vec<Track> {
    assert!(!allowed.is_empty(), "class filter needs at least one class");
    tracks
        .into_iter()
        .filter(|t| allowed.contains(&t.agent_class))
        .collect()
}

pub fn vehicle_classes() -> BTreeSet<AgentClass> {
    AgentClass::VEHICLES.into_iter().collect()
}

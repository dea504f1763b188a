//! Canonical `.trkz` track store: plain-text JSON header, length-prefixed
//! little-endian body, SHA-256 trailer.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetKind, HeadingSource, IngestError};
use crate::container::{self, BodyReader, BodyWriter, ContainerError};
use crate::types::{AgentClass, Track, TrackRecord};

pub const STORE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TRKZ";
// frame, track id, x, y, vx, vy, heading
const RECORD_BYTES: usize = 7 * 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub version: u32,
    pub kind: DatasetKind,
    pub heading_source: HeadingSource,
    /// Sample rate of every recording in the store.
    pub sample_hz: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalStore {
    pub header: StoreHeader,
    pub tracks: Vec<Track>,
}

impl CanonicalStore {
    pub fn recordings(&self) -> impl Iterator<Item = &str> {
        self.header.sample_hz.keys().map(String::as_str)
    }
}

pub fn write_store<W: Write>(store: &CanonicalStore, mut sink: W) -> Result<(), IngestError> {
    let header = serde_json::to_string_pretty(&store.header).expect("header serializes");
    let mut body = BodyWriter::default();
    body.u64(store.tracks.len() as u64);
    for t in &store.tracks {
        body.i64(t.track_id);
        body.str(&t.recording_id);
        body.str(&t.location_id);
        body.u8(t.agent_class.code());
        body.f64(t.sample_hz);
        body.u64(t.records.len() as u64);
        for r in &t.records {
            body.i64(r.frame);
            body.i64(r.track_id);
            body.f64s(&[r.x, r.y, r.vx, r.vy, r.heading_deg]);
        }
    }
    sink.write_all(&container::encode(MAGIC, STORE_VERSION, &header, &body.buf))?;
    Ok(())
}

pub fn read_store<R: Read>(mut source: R) -> Result<CanonicalStore, IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let decoded = container::decode(&bytes, MAGIC, STORE_VERSION)?;
    let header: StoreHeader = serde_json::from_str(&decoded.header)
        .map_err(|e| ContainerError::Corrupt(format!("header: {e}")))?;
    if header.version != STORE_VERSION {
        return Err(ContainerError::VersionMismatch {
            found: header.version,
            supported: STORE_VERSION,
        }
        .into());
    }

    let mut r = BodyReader::new(decoded.body);
    let n = r.count(8)?;
    let mut tracks = Vec::with_capacity(n);
    for _ in 0..n {
        let track_id = r.i64()?;
        let recording_id = r.str()?;
        let location_id = r.str()?;
        let agent_class = AgentClass::from_code(r.u8()?)
            .ok_or_else(|| ContainerError::Corrupt("unknown agent class code".into()))?;
        let sample_hz = r.f64()?;
        let m = r.count(RECORD_BYTES)?;
        let mut records = Vec::with_capacity(m);
        for _ in 0..m {
            let frame = r.i64()?;
            let tid = r.i64()?;
            let v = r.f64s(5)?;
            records.push(TrackRecord {
                frame,
                track_id: tid,
                x: v[0],
                y: v[1],
                vx: v[2],
                vy: v[3],
                heading_deg: v[4],
            });
        }
        tracks.push(Track {
            track_id,
            recording_id,
            location_id,
            agent_class,
            sample_hz,
            records,
        });
    }
    r.finish()?;
    Ok(CanonicalStore { header, tracks })
}

pub fn write_store_file(store: &CanonicalStore, path: &Path) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    write_store(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_store_file(path: &Path) -> Result<CanonicalStore, IngestError> {
    read_store(std::fs::File::open(path)?)
}

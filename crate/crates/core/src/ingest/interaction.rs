//! INTERACTION layout: `<location>/vehicle_tracks_NNN.csv` and
//! `<location>/pedestrian_tracks_NNN.csv` (or the same names flattened as
//! `<location>_vehicle_tracks_NNN.csv`).
//!
//! The recording id is `<location>_NNN`. There is no per-recording metadata
//! file; all recordings are sampled at 10 Hz (`timestamp_ms` steps of 100).
//! Pedestrian ids such as `P7` map to `PEDESTRIAN_ID_OFFSET + 7`, and since
//! pedestrian files carry no yaw, their heading is the velocity direction.

use std::collections::{BTreeMap, HashMap};

use super::csvtable::{parse_f64, parse_i64, parse_str, Table};
use super::ind::Metadata;
use super::{IngestError, RawRow, RowSink, SourceFile, TrackMeta};
use crate::types::{canonical_degrees, AgentClass, TrackRecord};

pub const INTERACTION_HZ: f64 = 10.0;
pub const PEDESTRIAN_ID_OFFSET: i64 = 1_000_000;

const KINDS: [&str; 2] = ["vehicle_tracks_", "pedestrian_tracks_"];

/// `(location, recording id)` from a file name, if it is a tracks file.
fn identify(f: &SourceFile) -> Option<Result<(String, String), IngestError>> {
    let base = f.basename();
    let stem = base.strip_suffix(".csv")?;
    let (before, number) = KINDS.iter().find_map(|k| {
        let pos = stem.find(k)?;
        Some((&stem[..pos], &stem[pos + k.len()..]))
    })?;
    let location = if before.is_empty() {
        f.parent_dir().map(str::to_string)
    } else {
        Some(before.trim_end_matches('_').to_string())
    };
    Some(match location {
        Some(loc) if !loc.is_empty() => Ok((loc.clone(), format!("{loc}_{number}"))),
        _ => Err(IngestError::MissingMetadata {
            recording: f.name.clone(),
            what: "location (parent directory or name prefix)".into(),
        }),
    })
}

fn parse_track_id(raw: &str) -> Result<i64, String> {
    if let Some(n) = raw.strip_prefix('P') {
        return n
            .parse::<i64>()
            .map(|n| PEDESTRIAN_ID_OFFSET + n)
            .map_err(|_| format!("bad pedestrian id `{raw}`"));
    }
    raw.parse::<i64>().map_err(|_| format!("bad track id `{raw}`"))
}

pub(super) fn parse(files: &[SourceFile], sink: &mut RowSink) -> Result<Metadata, IngestError> {
    let mut meta = HashMap::new();
    let mut rates = BTreeMap::new();
    for f in files {
        let Some(id) = identify(f) else { continue };
        let (location, recording_id) = id?;
        rates.insert(recording_id.clone(), INTERACTION_HZ);

        let table = Table::read(f)?;
        let has_yaw = table.has_column("psi_rad");
        let mut names = vec!["track_id", "frame_id", "agent_type", "x", "y", "vx", "vy"];
        if has_yaw {
            names.push("psi_rad");
        }
        let cols = table.columns(&names)?;
        for (line, row) in table.rows() {
            sink.rows_in += 1;
            let parsed = (|| -> Result<(TrackRecord, AgentClass), String> {
                let track_id = parse_track_id(&parse_str(row, &cols, 0, "track_id")?)?;
                let frame = parse_i64(row, &cols, 1, "frame_id")?;
                if frame < 0 {
                    return Err(format!("negative frame {frame}"));
                }
                let class = AgentClass::from_label(&parse_str(row, &cols, 2, "agent_type")?);
                let vx = parse_f64(row, &cols, 5, "vx")?;
                let vy = parse_f64(row, &cols, 6, "vy")?;
                let heading = if has_yaw {
                    parse_f64(row, &cols, 7, "psi_rad")?.to_degrees()
                } else {
                    vy.atan2(vx).to_degrees()
                };
                Ok((
                    TrackRecord {
                        frame,
                        track_id,
                        x: parse_f64(row, &cols, 3, "x")?,
                        y: parse_f64(row, &cols, 4, "y")?,
                        vx,
                        vy,
                        heading_deg: canonical_degrees(heading),
                    },
                    class,
                ))
            })();
            match parsed {
                Ok((record, class)) => {
                    meta.entry((recording_id.clone(), record.track_id))
                        .or_insert_with(|| TrackMeta {
                            location_id: location.clone(),
                            class,
                        });
                    sink.rows.push(RawRow {
                        recording_id: recording_id.clone(),
                        record,
                        file: table.file.clone(),
                        line: *line,
                    });
                }
                Err(reason) => sink.reject(&table.file, *line, reason)?,
            }
        }
    }
    Ok((meta, rates))
}

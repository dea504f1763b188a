//! inD / rounD layout: `NN_tracks.csv`, `NN_tracksMeta.csv`, `NN_recordingMeta.csv`.

use std::collections::{BTreeMap, HashMap};

use super::csvtable::{parse_f64, parse_i64, parse_str, Table};
use super::{IngestError, RawRow, RowSink, SourceFile, TrackMeta};
use crate::types::{canonical_degrees, AgentClass, TrackRecord};

const TRACKS: &str = "_tracks.csv";
const TRACKS_META: &str = "_tracksMeta.csv";
const RECORDING_META: &str = "_recordingMeta.csv";

#[derive(Default)]
struct Group<'a> {
    tracks: Option<&'a SourceFile>,
    tracks_meta: Option<&'a SourceFile>,
    recording_meta: Option<&'a SourceFile>,
}

pub(crate) type Metadata = (HashMap<(String, i64), TrackMeta>, BTreeMap<String, f64>);

pub(crate) fn recording_key(id: i64) -> String {
    format!("{id:02}")
}

pub(super) fn parse(files: &[SourceFile], sink: &mut RowSink) -> Result<Metadata, IngestError> {
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for f in files {
        let name = f.name.as_str();
        // longest suffix first: `_tracksMeta.csv` also ends with `.csv`
        if let Some(p) = name.strip_suffix(TRACKS_META) {
            groups.entry(p.to_string()).or_default().tracks_meta = Some(f);
        } else if let Some(p) = name.strip_suffix(RECORDING_META) {
            groups.entry(p.to_string()).or_default().recording_meta = Some(f);
        } else if let Some(p) = name.strip_suffix(TRACKS) {
            groups.entry(p.to_string()).or_default().tracks = Some(f);
        }
    }

    let mut meta = HashMap::new();
    let mut rates = BTreeMap::new();
    for (prefix, g) in groups {
        let Some(tracks_file) = g.tracks else { continue };
        let rec_file = g.recording_meta.ok_or_else(|| IngestError::MissingMetadata {
            recording: prefix.clone(),
            what: "recordingMeta file".into(),
        })?;
        let tmeta_file = g.tracks_meta.ok_or_else(|| IngestError::MissingMetadata {
            recording: prefix.clone(),
            what: "tracksMeta file".into(),
        })?;

        let rec = Table::read(rec_file)?;
        let cols = rec.columns(&["recordingId", "locationId", "frameRate"])?;
        let (_, row) = rec.rows().next().ok_or_else(|| IngestError::MissingMetadata {
            recording: prefix.clone(),
            what: "empty recordingMeta".into(),
        })?;
        let bad = |reason: String| IngestError::MissingMetadata {
            recording: prefix.clone(),
            what: reason,
        };
        let recording_id = recording_key(parse_i64(row, &cols, 0, "recordingId").map_err(bad)?);
        let location_id = parse_str(row, &cols, 1, "locationId").map_err(bad)?;
        let hz = parse_f64(row, &cols, 2, "frameRate").map_err(bad)?;
        if hz <= 0.0 {
            return Err(bad(format!("frame rate {hz} is not positive")));
        }
        rates.insert(recording_id.clone(), hz);

        let tm = Table::read(tmeta_file)?;
        let cols = tm.columns(&["trackId", "class"])?;
        for (_, row) in tm.rows() {
            let (Ok(id), Ok(class)) = (parse_i64(row, &cols, 0, "trackId"), parse_str(row, &cols, 1, "class")) else {
                continue;
            };
            meta.insert(
                (recording_id.clone(), id),
                TrackMeta {
                    location_id: location_id.clone(),
                    class: AgentClass::from_label(&class),
                },
            );
        }

        let table = Table::read(tracks_file)?;
        let cols = table.columns(&[
            "trackId",
            "frame",
            "xCenter",
            "yCenter",
            "heading",
            "xVelocity",
            "yVelocity",
        ])?;
        for (line, row) in table.rows() {
            sink.rows_in += 1;
            let parsed = (|| -> Result<TrackRecord, String> {
                let frame = parse_i64(row, &cols, 1, "frame")?;
                if frame < 0 {
                    return Err(format!("negative frame {frame}"));
                }
                Ok(TrackRecord {
                    track_id: parse_i64(row, &cols, 0, "trackId")?,
                    frame,
                    x: parse_f64(row, &cols, 2, "xCenter")?,
                    y: parse_f64(row, &cols, 3, "yCenter")?,
                    heading_deg: canonical_degrees(parse_f64(row, &cols, 4, "heading")?),
                    vx: parse_f64(row, &cols, 5, "xVelocity")?,
                    vy: parse_f64(row, &cols, 6, "yVelocity")?,
                })
            })();
            match parsed {
                Ok(record) => sink.rows.push(RawRow {
                    recording_id: recording_id.clone(),
                    record,
                    file: table.file.clone(),
                    line: *line,
                }),
                Err(reason) => sink.reject(&table.file, *line, reason)?,
            }
        }
    }
    Ok((meta, rates))
}

//! highD layout: `NN_tracks.csv`, `NN_tracksMeta.csv`, `NN_recordingMeta.csv`.
//!
//! Positions are bounding-box centers (`x + width/2`, `y + height/2`). The
//! dataset has no heading; the `dhw` column is stored in the heading slot as-is.

use std::collections::{BTreeMap, HashMap};

use super::csvtable::{parse_f64, parse_i64, parse_str, Table};
use super::ind::{recording_key, Metadata};
use super::{IngestError, RawRow, RowSink, SourceFile, TrackMeta};
use crate::types::{AgentClass, TrackRecord};

#[derive(Default)]
struct Group<'a> {
    tracks: Option<&'a SourceFile>,
    tracks_meta: Option<&'a SourceFile>,
    recording_meta: Option<&'a SourceFile>,
}

pub(super) fn parse(files: &[SourceFile], sink: &mut RowSink) -> Result<Metadata, IngestError> {
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for f in files {
        let name = f.name.as_str();
        if let Some(p) = name.strip_suffix("_tracksMeta.csv") {
            groups.entry(p.to_string()).or_default().tracks_meta = Some(f);
        } else if let Some(p) = name.strip_suffix("_recordingMeta.csv") {
            groups.entry(p.to_string()).or_default().recording_meta = Some(f);
        } else if let Some(p) = name.strip_suffix("_tracks.csv") {
            groups.entry(p.to_string()).or_default().tracks = Some(f);
        }
    }

    let mut meta = HashMap::new();
    let mut rates = BTreeMap::new();
    for (prefix, g) in groups {
        let Some(tracks_file) = g.tracks else { continue };
        let missing = |what: &str| IngestError::MissingMetadata {
            recording: prefix.clone(),
            what: what.into(),
        };
        let rec = Table::read(g.recording_meta.ok_or_else(|| missing("recordingMeta file"))?)?;
        let cols = rec.columns(&["id", "frameRate", "locationId"])?;
        let (_, row) = rec.rows().next().ok_or_else(|| missing("empty recordingMeta"))?;
        let recording_id = recording_key(parse_i64(row, &cols, 0, "id").map_err(|e| missing(&e))?);
        let hz = parse_f64(row, &cols, 1, "frameRate").map_err(|e| missing(&e))?;
        if hz <= 0.0 {
            return Err(missing("non-positive frame rate"));
        }
        let location_id = parse_str(row, &cols, 2, "locationId").map_err(|e| missing(&e))?;
        rates.insert(recording_id.clone(), hz);

        let tm = Table::read(g.tracks_meta.ok_or_else(|| missing("tracksMeta file"))?)?;
        let cols = tm.columns(&["id", "class"])?;
        for (_, row) in tm.rows() {
            let (Ok(id), Ok(class)) = (parse_i64(row, &cols, 0, "id"), parse_str(row, &cols, 1, "class")) else {
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
            "frame",
            "id",
            "x",
            "y",
            "width",
            "height",
            "xVelocity",
            "yVelocity",
            "dhw",
        ])?;
        for (line, row) in table.rows() {
            sink.rows_in += 1;
            let parsed = (|| -> Result<TrackRecord, String> {
                let frame = parse_i64(row, &cols, 0, "frame")?;
                if frame < 0 {
                    return Err(format!("negative frame {frame}"));
                }
                let width = parse_f64(row, &cols, 4, "width")?;
                let height = parse_f64(row, &cols, 5, "height")?;
                Ok(TrackRecord {
                    frame,
                    track_id: parse_i64(row, &cols, 1, "id")?,
                    x: parse_f64(row, &cols, 2, "x")? + width / 2.0,
                    y: parse_f64(row, &cols, 3, "y")? + height / 2.0,
                    vx: parse_f64(row, &cols, 6, "xVelocity")?,
                    vy: parse_f64(row, &cols, 7, "yVelocity")?,
                    heading_deg: parse_f64(row, &cols, 8, "dhw")?,
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

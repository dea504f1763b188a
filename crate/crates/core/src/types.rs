//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Road-user class. Unknown dataset labels map to [`AgentClass::Other`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Car,
    Truck,
    Van,
    Bus,
    Trailer,
    Motorcycle,
    Bicycle,
    Pedestrian,
    Other,
}

impl AgentClass {
    pub const ALL: [AgentClass; 9] = [
        AgentClass::Car,
        AgentClass::Truck,
        AgentClass::Van,
        AgentClass::Bus,
        AgentClass::Trailer,
        AgentClass::Motorcycle,
        AgentClass::Bicycle,
        AgentClass::Pedestrian,
        AgentClass::Other,
    ];

    /// Motorized road users.
    pub const VEHICLES: [AgentClass; 6] = [
        AgentClass::Car,
        AgentClass::Truck,
        AgentClass::Van,
        AgentClass::Bus,
        AgentClass::Trailer,
        AgentClass::Motorcycle,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Lenient mapping of dataset labels (`"truck_bus"`, `"Car"`, ...).
    pub fn from_label(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().as_str() {
            "car" => Self::Car,
            "truck" | "truck_bus" => Self::Truck,
            "van" => Self::Van,
            "bus" => Self::Bus,
            "trailer" => Self::Trailer,
            "motorcycle" | "motorbike" => Self::Motorcycle,
            "bicycle" | "bike" | "cyclist" => Self::Bicycle,
            "pedestrian" | "pedestrian/bicycle" | "ped" => Self::Pedestrian,
            _ => Self::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::Truck => "truck",
            Self::Van => "van",
            Self::Bus => "bus",
            Self::Trailer => "trailer",
            Self::Motorcycle => "motorcycle",
            Self::Bicycle => "bicycle",
            Self::Pedestrian => "pedestrian",
            Self::Other => "other",
        }
    }
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown agent class `{s}`"))
    }
}

/// One timestamped sample of one agent: `frame, track, x, y, vx, vy, heading`.
///
/// `vx`/`vy` are carried from the source files but never used as model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: i64,
    pub track_id: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Degrees in `[0, 360)`. For highway recordings this slot carries the
    /// distance headway in meters instead.
    pub heading_deg: f64,
}

/// Full trajectory of one agent in one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: i64,
    pub recording_id: String,
    pub location_id: String,
    pub agent_class: AgentClass,
    pub sample_hz: f64,
    pub records: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("record {index}: frame {frame} does not increase on the previous frame")]
    NonMonotonicFrames { index: usize, frame: i64 },
    #[error("record {index}: heading {heading} outside [0, 360)")]
    HeadingOutOfRange { index: usize, heading: f64 },
    #[error("record {index}: non-finite coordinate")]
    NonFiniteCoordinate { index: usize },
    #[error("record {index}: negative frame {frame}")]
    NegativeFrame { index: usize, frame: i64 },
    #[error("record {index}: track id {found} differs from track id {expected}")]
    ForeignRecord {
        index: usize,
        expected: i64,
        found: i64,
    },
    #[error("sample rate {0} Hz is not positive")]
    NonPositiveRate(f64),
}

impl Track {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every violated invariant, in record order. Empty means valid.
    pub fn violations(&self, heading_is_angle: bool) -> Vec<TrackError> {
        let mut errors = Vec::new();
        if !(self.sample_hz > 0.0 && self.sample_hz.is_finite()) {
            errors.push(TrackError::NonPositiveRate(self.sample_hz));
        }
        for (index, r) in self.records.iter().enumerate() {
            if r.track_id != self.track_id {
                errors.push(TrackError::ForeignRecord {
                    index,
                    expected: self.track_id,
                    found: r.track_id,
                });
            }
            if r.frame < 0 {
                errors.push(TrackError::NegativeFrame {
                    index,
                    frame: r.frame,
                });
            }
            if index > 0 && r.frame <= self.records[index - 1].frame {
                errors.push(TrackError::NonMonotonicFrames {
                    index,
                    frame: r.frame,
                });
            }
            if !(r.x.is_finite() && r.y.is_finite()) {
                errors.push(TrackError::NonFiniteCoordinate { index });
            }
            let heading_ok = if heading_is_angle {
                (0.0..360.0).contains(&r.heading_deg)
            } else {
                r.heading_deg.is_finite()
            };
            if !heading_ok {
                errors.push(TrackError::HeadingOutOfRange {
                    index,
                    heading: r.heading_deg,
                });
            }
        }
        errors
    }
}

/// Returns the track unchanged if it is well-formed, otherwise every violation.
pub fn validate_track(track: Track) -> Result<Track, Vec<TrackError>> {
    let errors = track.violations(true);
    if errors.is_empty() {
        Ok(track)
    } else {
        Err(errors)
    }
}

/// Brings any finite angle in degrees into `[0, 360)`.
pub fn canonical_degrees(deg: f64) -> f64 {
    let d = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

/// Per-step model feature: velocity increments plus optional normalized heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVec {
    pub dvx: f64,
    pub dvy: f64,
    pub heading: Option<f64>,
}

impl FeatureVec {
    pub fn planar(dvx: f64, dvy: f64) -> Self {
        Self {
            dvx,
            dvy,
            heading: None,
        }
    }

    pub fn oriented(dvx: f64, dvy: f64, heading: f64) -> Self {
        Self {
            dvx,
            dvy,
            heading: Some(heading),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_slice(&vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        if self.heading.is_some() {
            3
        } else {
            2
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match i {
            0 => self.dvx,
            1 => self.dvy,
            2 => self.heading.expect("feature index 2 on a planar feature"),
            _ => panic!("feature index {i} out of range"),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i)).collect()
    }

    /// # Panics
    /// Panics unless `v` has 2 or 3 entries.
    pub fn from_slice(v: &[f64]) -> Self {
        match v {
            [a, b] => Self::planar(*a, *b),
            [a, b, h] => Self::oriented(*a, *b, *h),
            _ => panic!("feature vectors have 2 or 3 components, got {}", v.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dvx.is_finite() && self.dvy.is_finite() && self.heading.is_none_or(f64::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub recording_id: String,
    pub track_id: i64,
    pub start_frame: i64,
}

/// One observed/future pair cut from a contiguous track segment.
///
/// Feature `i` of a segment is the increment from sample `i` to `i + 1`, so
/// `last_obs_position` is the sample reached by the last observed increment
/// and the ground-truth future positions follow from the target increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub obs: Vec<FeatureVec>,
    pub target: Vec<FeatureVec>,
    pub last_obs_position: [f64; 2],
    pub dt: f64,
    pub provenance: Provenance,
}

impl WindowSample {
    pub fn feature_dim(&self) -> usize {
        self.obs.first().map_or(2, FeatureVec::dim)
    }

    /// Absolute positions after each target step.
    pub fn future_positions(&self) -> Vec<[f64; 2]> {
        integrate(self.last_obs_position, &self.target, self.dt)
    }

    /// Absolute positions of the observed segment, `obs.len() + 1` points
    /// ending at `last_obs_position`.
    pub fn observed_positions(&self) -> Vec<[f64; 2]> {
        let mut pts = vec![self.last_obs_position];
        let mut p = self.last_obs_position;
        for f in self.obs.iter().rev() {
            p = [p[0] - f.dvx * self.dt, p[1] - f.dvy * self.dt];
            pts.push(p);
        }
        pts.reverse();
        pts
    }

    pub fn is_finite(&self) -> bool {
        self.obs.iter().chain(&self.target).all(FeatureVec::is_finite)
            && self.last_obs_position.iter().all(|v| v.is_finite())
    }
}

/// Cumulative sum of velocity features times `dt`, starting after `start`.
pub fn integrate(start: [f64; 2], velocities: &[FeatureVec], dt: f64) -> Vec<[f64; 2]> {
    let mut p = start;
    velocities
        .iter()
        .map(|f| {
            p = [p[0] + f.dvx * dt, p[1] + f.dvy * dt];
            p
        })
        .collect()
}

/// Per-feature mean and standard deviation of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(frames: &[i64], headings: &[f64]) -> Track {
        Track {
            track_id: 3,
            recording_id: "00".into(),
            location_id: "1".into(),
            agent_class: AgentClass::Car,
            sample_hz: 25.0,
            records: frames
                .iter()
                .zip(headings)
                .map(|(&frame, &h)| TrackRecord {
                    frame,
                    track_id: 3,
                    x: frame as f64,
                    y: 0.0,
                    vx: 0.0,
                    vy: 0.0,
                    heading_deg: h,
                })
                .collect(),
        }
    }

    #[test]
    fn well_formed_track_is_ok() {
        let t = track(&[0, 1, 2], &[0.0, 10.0, 359.9]);
        assert_eq!(validate_track(t.clone()), Ok(t));
    }

    #[test]
    fn non_monotonic_frames_reported_at_index() {
        let errs = validate_track(track(&[0, 2, 1], &[0.0; 3])).unwrap_err();
        assert_eq!(errs, vec![TrackError::NonMonotonicFrames { index: 2, frame: 1 }]);
    }

    #[test]
    fn heading_out_of_range_reported() {
        let errs = validate_track(track(&[0, 1, 2], &[0.0, 361.0, 5.0])).unwrap_err();
        assert_eq!(
            errs,
            vec![TrackError::HeadingOutOfRange {
                index: 1,
                heading: 361.0
            }]
        );
    }

    #[test]
    fn every_violation_is_listed() {
        let mut t = track(&[0, 0, 1], &[0.0, 400.0, 0.0]);
        t.records[2].y = f64::NAN;
        let errs = validate_track(t).unwrap_err();
        assert_eq!(errs.len(), 3);
        assert!(matches!(errs[2], TrackError::NonFiniteCoordinate { index: 2 }));
    }

    #[test]
    fn validation_is_idempotent() {
        let t = validate_track(track(&[4, 5, 9], &[1.0, 2.0, 3.0])).unwrap();
        assert!(validate_track(t).is_ok());
    }

    #[test]
    fn canonical_degrees_wraps() {
        assert_eq!(canonical_degrees(-90.0), 270.0);
        assert_eq!(canonical_degrees(360.0), 0.0);
        assert_eq!(canonical_degrees(725.0), 5.0);
        assert!(canonical_degrees(-1e-20) < 360.0);
    }

    #[test]
    fn class_codes_round_trip() {
        for c in AgentClass::ALL {
            assert_eq!(AgentClass::from_code(c.code()), Some(c));
            assert_eq!(c.name().parse::<AgentClass>(), Ok(c));
        }
        assert_eq!(AgentClass::from_label("Truck"), AgentClass::Truck);
        assert_eq!(AgentClass::from_label("zeppelin"), AgentClass::Other);
    }

    #[test]
    fn observed_positions_end_at_last_observation() {
        let w = WindowSample {
            obs: vec![FeatureVec::planar(1.0, 0.0); 3],
            target: vec![FeatureVec::planar(0.0, 2.0); 2],
            last_obs_position: [10.0, 5.0],
            dt: 0.5,
            provenance: Provenance {
                recording_id: "r".into(),
                track_id: 1,
                start_frame: 0,
            },
        };
        assert_eq!(
            w.observed_positions(),
            vec![[8.5, 5.0], [9.0, 5.0], [9.5, 5.0], [10.0, 5.0]]
        );
        assert_eq!(w.future_positions(), vec![[10.0, 6.0], [10.0, 7.0]]);
    }
}

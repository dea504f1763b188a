//! From canonical tracks to model-ready windows.
//!
//! A track is first cut into gap-free segments, each segment is decimated to
//! the target rate, turned into velocity increments, and sliced into
//! overlapping observation/prediction windows with stride 1.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, BodyReader, BodyWriter, ContainerError};
use crate::types::{FeatureVec, NormStats, Provenance, Track, WindowSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowingConfig {
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub target_hz: f64,
    pub oriented: bool,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            obs_len: 8,
            pred_len: 12,
            stride: 1,
            target_hz: 2.5,
            oriented: false,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.obs_len < 2 {
            return Err(FeatureError::InvalidConfig("obs_len must be at least 2".into()));
        }
        if self.pred_len < 1 {
            return Err(FeatureError::InvalidConfig("pred_len must be at least 1".into()));
        }
        if self.stride != 1 {
            return Err(FeatureError::InvalidConfig("stride is fixed at 1".into()));
        }
        if !(self.target_hz > 0.0 && self.target_hz.is_finite()) {
            return Err(FeatureError::InvalidConfig("target_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.obs_len + self.pred_len
    }

    pub fn feature_dim(&self) -> usize {
        if self.oriented {
            3
        } else {
            2
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.target_hz
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{source_hz} Hz cannot be decimated to {target_hz} Hz by an integer factor")]
    NonIntegerDecimation { source_hz: f64, target_hz: f64 },
    #[error("track has {0} records, at least 2 are needed")]
    TooShort(usize),
    #[error("feature dimension {0} has zero spread in the training split")]
    DegenerateFeature(usize),
    #[error("expected feature dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least 2 samples to fit normalization, got {0}")]
    TooFewSamples(usize),
    #[error("invalid windowing config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer `k` with `source_hz = k · target_hz`.
pub fn decimation_factor(source_hz: f64, target_hz: f64) -> Result<usize, FeatureError> {
    let err = FeatureError::NonIntegerDecimation {
        source_hz,
        target_hz,
    };
    if !(source_hz > 0.0 && target_hz > 0.0) {
        return Err(err);
    }
    let ratio = source_hz / target_hz;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(err);
    }
    Ok(k as usize)
}

/// Keeps records `0, k, 2k, …` where `k = sample_hz / target_hz`.
pub fn resample(track: &Track, target_hz: f64) -> Result<Track, FeatureError> {
    let k = decimation_factor(track.sample_hz, target_hz)?;
    Ok(Track {
        records: track.records.iter().step_by(k).copied().collect(),
        sample_hz: target_hz,
        ..track.clone()
    })
}

/// Splits a track wherever consecutive frames differ by more than one.
pub fn split_contiguous(track: &Track) -> Vec<Track> {
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..=track.records.len() {
        let boundary = i == track.records.len() || track.records[i].frame != track.records[i - 1].frame + 1;
        if boundary {
            if i > start {
                segments.push(Track {
                    records: track.records[start..i].to_vec(),
                    ..track.clone()
                });
            }
            start = i;
        }
    }
    segments
}

/// Increments of consecutive positions divided by `dt = 1 / sample_hz`.
/// In oriented mode the heading of the arriving record, divided by 360, is
/// appended.
pub fn compute_features(track: &Track, oriented: bool) -> Result<Vec<FeatureVec>, FeatureError> {
    if track.records.len() < 2 {
        return Err(FeatureError::TooShort(track.records.len()));
    }
    let dt = 1.0 / track.sample_hz;
    Ok(track
        .records
        .windows(2)
        .map(|w| {
            let dvx = (w[1].x - w[0].x) / dt;
            let dvy = (w[1].y - w[0].y) / dt;
            if oriented {
                FeatureVec::oriented(dvx, dvy, w[1].heading_deg / 360.0)
            } else {
                FeatureVec::planar(dvx, dvy)
            }
        })
        .collect())
}

/// Features of one gap-free segment with the absolute positions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFeatures {
    pub features: Vec<FeatureVec>,
    /// `features.len() + 1` positions; feature `i` moves from `positions[i]` to `positions[i + 1]`.
    pub positions: Vec<[f64; 2]>,
    pub frames: Vec<i64>,
    pub dt: f64,
    pub recording_id: String,
    pub track_id: i64,
}

pub fn track_features(track: &Track, oriented: bool) -> Result<TrackFeatures, FeatureError> {
    let features = compute_features(track, oriented)?;
    Ok(TrackFeatures {
        features,
        positions: track.records.iter().map(|r| [r.x, r.y]).collect(),
        frames: track.records.iter().map(|r| r.frame).collect(),
        dt: 1.0 / track.sample_hz,
        recording_id: track.recording_id.clone(),
        track_id: track.track_id,
    })
}

pub fn window_count(len: usize, obs_len: usize, pred_len: usize) -> usize {
    (len + 1).saturating_sub(obs_len + pred_len)
}

/// Every stride-1 window of `obs_len` observed and `pred_len` future features.
pub fn extract_windows(tf: &TrackFeatures, cfg: &WindowingConfig) -> Vec<WindowSample> {
    let n = window_count(tf.features.len(), cfg.obs_len, cfg.pred_len);
    (0..n)
        .map(|s| {
            let split = s + cfg.obs_len;
            WindowSample {
                obs: tf.features[s..split].to_vec(),
                target: tf.features[split..split + cfg.pred_len].to_vec(),
                last_obs_position: tf.positions[split],
                dt: tf.dt,
                provenance: Provenance {
                    recording_id: tf.recording_id.clone(),
                    track_id: tf.track_id,
                    start_frame: tf.frames[s],
                },
            }
        })
        .collect()
}

/// Full pipeline for one track: gap split, decimation, features, windows.
/// Segments too short for a single window contribute nothing.
pub fn windows_for_track(track: &Track, cfg: &WindowingConfig) -> Result<Vec<WindowSample>, FeatureError> {
    let mut out = Vec::new();
    for segment in split_contiguous(track) {
        let decimated = resample(&segment, cfg.target_hz)?;
        if decimated.records.len() < cfg.window_len() + 1 {
            continue;
        }
        let tf = track_features(&decimated, cfg.oriented)?;
        out.extend(extract_windows(&tf, cfg));
    }
    Ok(out)
}

/// [`windows_for_track`] over many tracks, in input order.
pub fn windows_for_tracks(tracks: &[Track], cfg: &WindowingConfig) -> Result<Vec<WindowSample>, FeatureError> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(windows_for_track(t, cfg)?);
    }
    Ok(out)
}

/// Mean and population SD of raw feature vectors.
pub fn fit_norm_vectors<'a, I>(vectors: I) -> Result<NormStats, FeatureError>
where
    I: IntoIterator<Item = &'a FeatureVec>,
    I::IntoIter: Clone,
{
    let iter = vectors.into_iter();
    let mut count = 0usize;
    let mut dim = None;
    let mut sum: Vec<f64> = Vec::new();
    for v in iter.clone() {
        let d = *dim.get_or_insert(v.dim());
        if v.dim() != d {
            return Err(FeatureError::DimensionMismatch {
                expected: d,
                found: v.dim(),
            });
        }
        sum.resize(d, 0.0);
        for (i, s) in sum.iter_mut().enumerate() {
            *s += v.get(i);
        }
        count += 1;
    }
    if count < 2 {
        return Err(FeatureError::TooFewSamples(count));
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; mean.len()];
    for v in iter {
        for (i, s) in sq.iter_mut().enumerate() {
            let d = v.get(i) - mean[i];
            *s += d * d;
        }
    }
    let sd: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
    if let Some(dim) = sd.iter().position(|&s| !(s > 0.0)) {
        return Err(FeatureError::DegenerateFeature(dim));
    }
    Ok(NormStats { mean, sd })
}

/// Statistics over every observed and target step of the training windows.
pub fn fit_norm(train: &[WindowSample]) -> Result<NormStats, FeatureError> {
    if train.len() < 2 {
        return Err(FeatureError::TooFewSamples(train.len()));
    }
    fit_norm_vectors(train.iter().flat_map(|w| w.obs.iter().chain(&w.target)))
}

fn check_dim(f: &FeatureVec, stats: &NormStats) -> Result<(), FeatureError> {
    if f.dim() != stats.dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: stats.dim(),
            found: f.dim(),
        });
    }
    Ok(())
}

pub fn normalize_vec(f: &FeatureVec, stats: &NormStats) -> Result<FeatureVec, FeatureError> {
    check_dim(f, stats)?;
    let v: Vec<f64> = (0..f.dim()).map(|i| (f.get(i) - stats.mean[i]) / stats.sd[i]).collect();
    Ok(FeatureVec::from_slice(&v))
}

pub fn denormalize_vec(f: &FeatureVec, stats: &NormStats) -> Result<FeatureVec, FeatureError> {
    check_dim(f, stats)?;
    let v: Vec<f64> = (0..f.dim()).map(|i| f.get(i) * stats.sd[i] + stats.mean[i]).collect();
    Ok(FeatureVec::from_slice(&v))
}

fn map_sample(
    s: &WindowSample,
    stats: &NormStats,
    f: fn(&FeatureVec, &NormStats) -> Result<FeatureVec, FeatureError>,
) -> Result<WindowSample, FeatureError> {
    Ok(WindowSample {
        obs: s.obs.iter().map(|v| f(v, stats)).collect::<Result<_, _>>()?,
        target: s.target.iter().map(|v| f(v, stats)).collect::<Result<_, _>>()?,
        ..s.clone()
    })
}

/// `z = (v − mean) / sd` on every observed and target step.
pub fn normalize(s: &WindowSample, stats: &NormStats) -> Result<WindowSample, FeatureError> {
    map_sample(s, stats, normalize_vec)
}

pub fn denormalize(s: &WindowSample, stats: &NormStats) -> Result<WindowSample, FeatureError> {
    map_sample(s, stats, denormalize_vec)
}

pub const WINDOWS_VERSION: u32 = 1;
const WINDOWS_MAGIC: &[u8; 4] = b"WINZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Contents of a `.winz` file: raw (unnormalized) windows of both splits,
/// the statistics fitted on the training split, and the split manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub cfg: WindowingConfig,
    pub stats: NormStats,
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub manifest: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct WindowsHeader {
    version: u32,
    cfg: WindowingConfig,
    stats: NormStats,
    feature_dim: usize,
    train: usize,
    test: usize,
    manifest: serde_json::Value,
}

impl WindowSet {
    /// Fits normalization statistics on `train` only and bundles both splits.
    pub fn from_windows(
        cfg: WindowingConfig,
        train: Vec<WindowSample>,
        test: Vec<WindowSample>,
        manifest: serde_json::Value,
    ) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let dim = cfg.feature_dim();
        if let Some(s) = train.iter().chain(&test).find(|s| s.feature_dim() != dim) {
            return Err(FeatureError::DimensionMismatch {
                expected: dim,
                found: s.feature_dim(),
            });
        }
        let stats = fit_norm(&train)?;
        Ok(Self {
            cfg,
            stats,
            train,
            test,
            manifest,
        })
    }

    pub fn split(&self, split: Split) -> &[WindowSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.cfg.feature_dim();
        let header = WindowsHeader {
            version: WINDOWS_VERSION,
            cfg: self.cfg.clone(),
            stats: self.stats.clone(),
            feature_dim: dim,
            train: self.train.len(),
            test: self.test.len(),
            manifest: self.manifest.clone(),
        };
        let mut body = BodyWriter::default();
        for s in self.train.iter().chain(&self.test) {
            body.str(&s.provenance.recording_id);
            body.i64(s.provenance.track_id);
            body.i64(s.provenance.start_frame);
            body.f64(s.dt);
            body.f64s(&s.last_obs_position);
            for f in s.obs.iter().chain(&s.target) {
                body.f64s(&f.to_vec());
            }
        }
        container::encode(
            WINDOWS_MAGIC,
            WINDOWS_VERSION,
            &serde_json::to_string_pretty(&header).expect("header serializes"),
            &body.buf,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let decoded = container::decode(bytes, WINDOWS_MAGIC, WINDOWS_VERSION)?;
        let h: WindowsHeader = serde_json::from_str(&decoded.header)
            .map_err(|e| ContainerError::Corrupt(format!("header: {e}")))?;
        if h.feature_dim != h.cfg.feature_dim() || h.stats.dim() != h.feature_dim {
            return Err(ContainerError::Corrupt("feature dimension disagrees with config".into()).into());
        }
        let mut r = BodyReader::new(decoded.body);
        let mut read_split = |n: usize| -> Result<Vec<WindowSample>, ContainerError> {
            (0..n)
                .map(|_| {
                    let recording_id = r.str()?;
                    let track_id = r.i64()?;
                    let start_frame = r.i64()?;
                    let dt = r.f64()?;
                    let p = r.f64s(2)?;
                    let mut feats = |len: usize| -> Result<Vec<FeatureVec>, ContainerError> {
                        (0..len).map(|_| Ok(FeatureVec::from_slice(&r.f64s(h.feature_dim)?))).collect()
                    };
                    let obs = feats(h.cfg.obs_len)?;
                    let target = feats(h.cfg.pred_len)?;
                    Ok(WindowSample {
                        obs,
                        target,
                        last_obs_position: [p[0], p[1]],
                        dt,
                        provenance: Provenance {
                            recording_id,
                            track_id,
                            start_frame,
                        },
                    })
                })
                .collect()
        };
        let train = read_split(h.train)?;
        let test = read_split(h.test)?;
        r.finish()?;
        Ok(Self {
            cfg: h.cfg,
            stats: h.stats,
            train,
            test,
            manifest: h.manifest,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, FeatureError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgentClass, TrackRecord};

    fn track_from(points: &[(f64, f64)], hz: f64) -> Track {
        Track {
            track_id: 1,
            recording_id: "r".into(),
            location_id: "l".into(),
            agent_class: AgentClass::Car,
            sample_hz: hz,
            records: points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrackRecord {
                    frame: i as i64,
                    track_id: 1,
                    x,
                    y,
                    vx: 0.0,
                    vy: 0.0,
                    heading_deg: 180.0,
                })
                .collect(),
        }
    }

    fn line(n: usize, hz: f64) -> Track {
        let pts: Vec<_> = (0..n).map(|i| (i as f64 * 0.5, 0.0)).collect();
        track_from(&pts, hz)
    }

    #[test]
    fn decimate_25_to_2_5() {
        let t = resample(&line(100, 25.0), 2.5).unwrap();
        assert_eq!(t.records.len(), 10);
        assert_eq!(t.sample_hz, 2.5);
        assert_eq!(t.records[1].frame, 10);
    }

    #[test]
    fn decimate_10_to_2_5() {
        assert_eq!(resample(&line(40, 10.0), 2.5).unwrap().records.len(), 10);
    }

    #[test]
    fn non_integer_decimation() {
        assert!(matches!(
            resample(&line(10, 25.0), 4.0),
            Err(FeatureError::NonIntegerDecimation { .. })
        ));
        assert!(decimation_factor(2.5, 5.0).is_err());
        assert_eq!(decimation_factor(25.0, 5.0).unwrap(), 5);
    }

    #[test]
    fn increments_as_velocity() {
        let t = track_from(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)], 2.5);
        let f = compute_features(&t, false).unwrap();
        assert_eq!(f, vec![FeatureVec::planar(1.25, 0.0); 2]);
    }

    #[test]
    fn stationary_positions_give_zero_increments() {
        let t = track_from(&[(3.0, 4.0); 5], 2.5);
        assert!(compute_features(&t, false)
            .unwrap()
            .iter()
            .all(|f| f.dvx == 0.0 && f.dvy == 0.0));
    }

    #[test]
    fn heading_normalized_by_360() {
        let t = track_from(&[(0.0, 0.0), (1.0, 0.0)], 2.5);
        assert_eq!(compute_features(&t, true).unwrap()[0].heading, Some(0.5));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            compute_features(&track_from(&[(0.0, 0.0)], 2.5), false),
            Err(FeatureError::TooShort(1))
        ));
    }

    fn features_of_len(l: usize) -> TrackFeatures {
        let t = line(l + 1, 2.5);
        track_features(&t, false).unwrap()
    }

    #[test]
    fn window_counts() {
        let cfg = WindowingConfig::default();
        assert_eq!(extract_windows(&features_of_len(25), &cfg).len(), 6);
        assert_eq!(extract_windows(&features_of_len(19), &cfg).len(), 0);
    }

    #[test]
    fn boundary_window_layout() {
        let cfg = WindowingConfig::default();
        let mut tf = features_of_len(20);
        for (i, f) in tf.features.iter_mut().enumerate() {
            f.dvx = i as f64;
        }
        let w = extract_windows(&tf, &cfg);
        assert_eq!(w.len(), 1);
        let obs: Vec<f64> = w[0].obs.iter().map(|f| f.dvx).collect();
        let tgt: Vec<f64> = w[0].target.iter().map(|f| f.dvx).collect();
        assert_eq!(obs, (0..8).map(f64::from).collect::<Vec<_>>());
        assert_eq!(tgt, (8..20).map(f64::from).collect::<Vec<_>>());
        assert_eq!(w[0].last_obs_position, tf.positions[8]);
    }

    #[test]
    fn gaps_split_segments() {
        let mut t = line(60, 25.0);
        for r in &mut t.records[30..] {
            r.frame += 5;
        }
        let segs = split_contiguous(&t);
        assert_eq!(segs.iter().map(|s| s.records.len()).collect::<Vec<_>>(), vec![30, 30]);
    }

    #[test]
    fn fit_norm_population_sd() {
        let v = [1.0, 2.0, 3.0].map(|x| FeatureVec::planar(x, -x * x));
        let s = fit_norm_vectors(&v).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert!((s.sd[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = normalize_vec(&FeatureVec::planar(3.0, 0.0), &s).unwrap();
        assert!((z.dvx - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn fit_norm_degenerate() {
        let v = [FeatureVec::planar(1.0, 2.0), FeatureVec::planar(1.0, 3.0)];
        assert!(matches!(fit_norm_vectors(&v), Err(FeatureError::DegenerateFeature(0))));
    }

    #[test]
    fn fit_norm_symmetric_mean_zero() {
        let v = [FeatureVec::planar(-4.5, 1.0), FeatureVec::planar(4.5, -1.0)];
        let s = fit_norm_vectors(&v).unwrap();
        assert_eq!(s.mean, vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_mean_is_zero_and_dims_checked() {
        let stats = NormStats {
            mean: vec![1.5, -2.0],
            sd: vec![0.5, 4.0],
        };
        let z = normalize_vec(&FeatureVec::planar(1.5, -2.0), &stats).unwrap();
        assert_eq!(z, FeatureVec::planar(0.0, 0.0));
        assert!(matches!(
            normalize_vec(&FeatureVec::oriented(0.0, 0.0, 0.1), &stats),
            Err(FeatureError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(WindowingConfig::default().validate().is_ok());
        let bad = WindowingConfig {
            stride: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WindowingConfig {
            obs_len: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Declarative experiments: split construction, training, evaluation and
//! the cumulative results table.

mod aliases;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aliases::{resolve_location, same_location, LOCATION_ALIASES};

use crate::evaluation::{evaluate, CvBaseline, EvalError, GroundTruth, MetricsReport, Predictor};
use crate::features::{decimation_factor, windows_for_tracks, FeatureError, WindowSet, WindowingConfig};
use crate::ingest::{filter_class, filter_static, CanonicalStore, DatasetKind, IngestError, DEFAULT_MIN_DISPLACEMENT};
use crate::model::{Checkpoint, ModelConfig, ModelError};
use crate::training::{train, LossMode, TrainConfig, TrainError, TrainReport};
use crate::types::{AgentClass, Track};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("selector {0} matches no recording")]
    EmptySelector(String),
    #[error("recordings appear in both train and test: {}", .0.join(", "))]
    OverlappingSelectors(Vec<String>),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("config file: {0}")]
    Config(#[from] toml::de::Error),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("results table: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for data problems,
    /// 4 when training diverged.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidSpec(_) | Self::Config(_) => 2,
            Self::Train(TrainError::DivergedLoss { .. }) => 4,
            Self::Train(TrainError::InvalidConfig(_)) => 2,
            Self::Model(ModelError::InvalidConfig(_)) => 2,
            Self::Features(FeatureError::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Train and test come from disjoint recordings, typically locations.
    LeaveLocationOut,
    /// One pool of windows split at random by `mixed_ratio`.
    Mixed,
    /// Train and test come from different datasets or scenario types.
    CrossDataset,
}

/// Picks tracks by dataset and optionally by location (aliases allowed) or
/// recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub dataset: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording: Option<String>,
}

impl Selector {
    pub fn dataset(dataset: DatasetKind) -> Self {
        Self {
            dataset,
            location: None,
            recording: None,
        }
    }

    pub fn location(dataset: DatasetKind, location: impl Into<String>) -> Self {
        Self {
            location: Some(location.into()),
            ..Self::dataset(dataset)
        }
    }

    pub fn matches(&self, kind: DatasetKind, track: &Track) -> bool {
        if kind != self.dataset {
            return false;
        }
        if let Some(rec) = &self.recording {
            if rec != &track.recording_id {
                return false;
            }
        }
        match &self.location {
            Some(loc) => resolve_location(kind, loc)
                .iter()
                .any(|l| same_location(l, &track.location_id)),
            None => true,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dataset.name())?;
        if let Some(l) = &self.location {
            write!(f, " location={l}")?;
        }
        if let Some(r) = &self.recording {
            write!(f, " recording={r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default)]
    pub train: Vec<Selector>,
    /// Ignored in mixed mode.
    #[serde(default)]
    pub test: Vec<Selector>,
    #[serde(default = "default_ratio")]
    pub mixed_ratio: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ratio() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Oriented,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Oriented => "oriented",
        }
    }
}

/// What produces the test-set predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Train the configured model and predict with it.
    #[default]
    Model,
    /// Constant-velocity extrapolation; no training.
    ConstantVelocity,
    /// Returns the ground truth; a test hook.
    GroundTruth,
}

fn default_min_displacement() -> f64 {
    DEFAULT_MIN_DISPLACEMENT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub variant: Variant,
    pub split: SplitSpec,
    #[serde(default)]
    pub windowing: WindowingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub predictor: PredictorKind,
    /// Agent classes kept; vehicles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<BTreeSet<AgentClass>>,
    #[serde(default = "default_min_displacement")]
    pub min_displacement: f64,
    /// Canonical stores to read. Not part of the config hash.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stores: Vec<PathBuf>,
    /// Output directory. Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Parses a TOML experiment file and aligns the feature settings with
    /// the variant.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text)?;
        let spec = spec.with_variant(spec.variant);
        spec.validate()?;
        Ok(spec)
    }

    /// Copy with windowing, model width and loss mode set for `variant`.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut s = self.clone();
        s.variant = variant;
        let oriented = variant == Variant::Oriented;
        s.windowing.oriented = oriented;
        s.model.feature_dim = if oriented { 3 } else { 2 };
        s.train.loss_mode = if oriented { LossMode::Oriented } else { LossMode::Vanilla };
        s
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        let oriented = self.variant == Variant::Oriented;
        let dims_ok = self.windowing.oriented == oriented
            && self.model.feature_dim == if oriented { 3 } else { 2 }
            && self.train.loss_mode.feature_dim() == self.model.feature_dim;
        if !dims_ok {
            return bad(format!(
                "variant {} needs matching windowing.oriented, model.feature_dim and train.loss_mode",
                self.variant.name()
            ));
        }
        if self.split.train.is_empty() {
            return bad("split.train needs at least one selector".into());
        }
        if self.split.mode != SplitMode::Mixed && self.split.test.is_empty() {
            return bad("split.test needs at least one selector outside mixed mode".into());
        }
        if self.split.mode == SplitMode::Mixed && !(self.split.mixed_ratio > 0.0 && self.split.mixed_ratio < 1.0) {
            return bad("mixed_ratio must lie strictly between 0 and 1".into());
        }
        if self.classes.as_ref().is_some_and(BTreeSet::is_empty) {
            return bad("classes must not be empty".into());
        }
        if !(self.min_displacement >= 0.0) {
            return bad("min_displacement must be non-negative".into());
        }
        self.windowing.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding file locations.
    pub fn config_hash(&self) -> String {
        let mut s = self.clone();
        s.stores.clear();
        s.output = None;
        let json = serde_json::to_string(&s).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn classes(&self) -> BTreeSet<AgentClass> {
        self.classes
            .clone()
            .unwrap_or_else(|| AgentClass::VEHICLES.into_iter().collect())
    }
}

/// Exact recording lists and settings needed to rebuild a split and rerun
/// an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub mode: SplitMode,
    pub split_seed: u64,
    pub train_seed: u64,
    /// `dataset/recording` identifiers.
    pub train_recordings: Vec<String>,
    pub test_recordings: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::InvalidSpec(format!("manifest: {e}")))
    }
}

fn recording_key(kind: DatasetKind, track: &Track) -> String {
    format!("{}/{}", kind.name(), track.recording_id)
}

fn eligible(stores: &[CanonicalStore], spec: &ExperimentSpec) -> Vec<(DatasetKind, Track)> {
    let classes = spec.classes();
    stores
        .iter()
        .flat_map(|s| {
            let tracks = filter_static(filter_class(s.tracks.clone(), &classes), spec.min_displacement);
            tracks.into_iter().map(move |t| (s.header.kind, t))
        })
        .collect()
}

fn select(
    pool: &[(DatasetKind, Track)],
    selectors: &[Selector],
) -> Result<(Vec<Track>, BTreeSet<String>), HarnessError> {
    let mut picked = vec![false; pool.len()];
    let mut recordings = BTreeSet::new();
    for sel in selectors {
        let mut hit = false;
        for (i, (kind, t)) in pool.iter().enumerate() {
            if sel.matches(*kind, t) {
                hit = true;
                picked[i] = true;
                recordings.insert(recording_key(*kind, t));
            }
        }
        if !hit {
            return Err(HarnessError::EmptySelector(sel.to_string()));
        }
    }
    let tracks = pool
        .iter()
        .zip(picked)
        .filter_map(|((_, t), p)| p.then(|| t.clone()))
        .collect();
    Ok((tracks, recordings))
}

/// Builds train and test windows, fits statistics on the train windows only,
/// and records the exact recordings used.
pub fn build_split(stores: &[CanonicalStore], spec: &ExperimentSpec) -> Result<(WindowSet, Manifest), HarnessError> {
    spec.validate()?;
    let pool = eligible(stores, spec);
    let cfg = &spec.windowing;
    let (train, test, train_recs, test_recs) = match spec.split.mode {
        SplitMode::Mixed => {
            let (tracks, recs) = select(&pool, &spec.split.train)?;
            let windows = windows_for_tracks(&tracks, cfg)?;
            let n_train = (spec.split.mixed_ratio * windows.len() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..windows.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.split.seed));
            let mut is_train = vec![false; windows.len()];
            for &i in &idx[..n_train] {
                is_train[i] = true;
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (w, t) in windows.into_iter().zip(is_train) {
                if t {
                    train.push(w);
                } else {
                    test.push(w);
                }
            }
            (train, test, recs.clone(), recs)
        }
        SplitMode::LeaveLocationOut | SplitMode::CrossDataset => {
            let (train_tracks, train_recs) = select(&pool, &spec.split.train)?;
            let (test_tracks, test_recs) = select(&pool, &spec.split.test)?;
            let overlap: Vec<String> = train_recs.intersection(&test_recs).cloned().collect();
            if !overlap.is_empty() {
                return Err(HarnessError::OverlappingSelectors(overlap));
            }
            (
                windows_for_tracks(&train_tracks, cfg)?,
                windows_for_tracks(&test_tracks, cfg)?,
                train_recs,
                test_recs,
            )
        }
    };
    let manifest = Manifest {
        experiment: spec.name.clone(),
        config_hash: spec.config_hash(),
        mode: spec.split.mode,
        split_seed: spec.split.seed,
        train_seed: spec.train.seed,
        train_recordings: train_recs.into_iter().collect(),
        test_recordings: test_recs.into_iter().collect(),
        n_train: train.len(),
        n_test: test.len(),
        spec: spec.clone(),
    };
    let value = serde_json::to_value(&manifest).expect("manifest serializes");
    let set = WindowSet::from_windows(cfg.clone(), train, test, value)?;
    Ok((set, manifest))
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub variant: String,
    pub ade_m: f64,
    pub fde_m: f64,
    pub n_test: usize,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub row: ResultRow,
    pub metrics: MetricsReport,
    pub manifest: Manifest,
    /// Present when a model was trained.
    pub report: Option<TrainReport>,
    pub checkpoint: Option<Checkpoint>,
}

/// Builds the split, trains (unless a fixed predictor is configured) and
/// evaluates on the test windows.
pub fn run_experiment(stores: &[CanonicalStore], spec: &ExperimentSpec) -> Result<ExperimentOutcome, HarnessError> {
    let (set, manifest) = build_split(stores, spec)?;
    let (metrics, report, checkpoint) = match spec.predictor {
        PredictorKind::Model => {
            let (mut ckpt, report) = train(&set, &spec.model, &spec.train)?;
            ckpt.meta["config_hash"] = serde_json::Value::String(manifest.config_hash.clone());
            let model = ckpt.to_model()?;
            let metrics = evaluate(&model, &set.test)?;
            (metrics, Some(report), Some(ckpt))
        }
        PredictorKind::ConstantVelocity => (evaluate(&CvBaseline, &set.test)?, None, None),
        PredictorKind::GroundTruth => (evaluate(&GroundTruth as &dyn Predictor, &set.test)?, None, None),
    };
    let row = ResultRow {
        experiment: spec.name.clone(),
        variant: match spec.predictor {
            PredictorKind::Model => spec.variant.name().to_string(),
            PredictorKind::ConstantVelocity => "constant_velocity".into(),
            PredictorKind::GroundTruth => "ground_truth".into(),
        },
        ade_m: metrics.ade,
        fde_m: metrics.fde,
        n_test: metrics.n_samples,
        config_hash: manifest.config_hash.clone(),
        seed: spec.train.seed,
    };
    Ok(ExperimentOutcome {
        row,
        metrics,
        manifest,
        report,
        checkpoint,
    })
}

/// Reruns the experiment recorded in `manifest` and checks that the rebuilt
/// split names the same recordings.
pub fn rerun_from_manifest(stores: &[CanonicalStore], manifest: &Manifest) -> Result<ExperimentOutcome, HarnessError> {
    let outcome = run_experiment(stores, &manifest.spec)?;
    let m = &outcome.manifest;
    if m.train_recordings != manifest.train_recordings
        || m.test_recordings != manifest.test_recordings
        || m.config_hash != manifest.config_hash
    {
        return Err(HarnessError::InvalidSpec(
            "stores do not reproduce the manifest's recordings".into(),
        ));
    }
    Ok(outcome)
}

/// Appends rows to a CSV results table, writing the header when the file is
/// new or empty.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Winners {
    pub ade: Variant,
    pub fde: Variant,
}

#[derive(Debug, Clone)]
pub struct VariantComparison {
    pub vanilla: ExperimentOutcome,
    pub oriented: ExperimentOutcome,
    pub winners: Winners,
}

fn winner(vanilla: f64, oriented: f64) -> Variant {
    if oriented < vanilla {
        Variant::Oriented
    } else {
        Variant::Vanilla
    }
}

/// Runs both variants on the same split and seeds. Ties go to vanilla.
pub fn compare_variants(stores: &[CanonicalStore], spec: &ExperimentSpec) -> Result<VariantComparison, HarnessError> {
    let vanilla = run_experiment(stores, &spec.with_variant(Variant::Vanilla))?;
    let oriented = run_experiment(stores, &spec.with_variant(Variant::Oriented))?;
    let winners = Winners {
        ade: winner(vanilla.row.ade_m, oriented.row.ade_m),
        fde: winner(vanilla.row.fde_m, oriented.row.fde_m),
    };
    Ok(VariantComparison {
        vanilla,
        oriented,
        winners,
    })
}

/// Observed and predicted durations held by the frame-rate study.
pub const OBS_SECONDS: f64 = 3.2;
pub const PRED_SECONDS: f64 = 4.8;

#[derive(Debug, Clone)]
pub struct FramerateRow {
    pub target_hz: f64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub outcome: ExperimentOutcome,
}

impl FramerateRow {
    pub fn horizon_s(&self) -> (f64, f64) {
        (self.obs_len as f64 / self.target_hz, self.pred_len as f64 / self.target_hz)
    }
}

/// Window lengths that cover 3.2 s observed and 4.8 s predicted at `hz`.
pub fn lengths_for_rate(hz: f64) -> (usize, usize) {
    ((OBS_SECONDS * hz).round() as usize, (PRED_SECONDS * hz).round() as usize)
}

/// Runs `base` once per target rate with lengths scaled to keep the time
/// horizons fixed. Every store's rate must decimate to every target rate.
pub fn framerate_study(
    stores: &[CanonicalStore],
    base: &ExperimentSpec,
    rates: &[f64],
) -> Result<Vec<FramerateRow>, HarnessError> {
    for &hz in rates {
        for s in stores {
            for &src in s.header.sample_hz.values() {
                decimation_factor(src, hz)?;
            }
        }
    }
    rates
        .iter()
        .map(|&hz| {
            let (obs_len, pred_len) = lengths_for_rate(hz);
            let mut spec = base.clone();
            spec.name = format!("{}@{hz}hz", base.name);
            spec.windowing.target_hz = hz;
            spec.windowing.obs_len = obs_len;
            spec.windowing.pred_len = pred_len;
            spec.model.max_len = spec.model.max_len.max(obs_len.max(pred_len));
            Ok(FramerateRow {
                target_hz: hz,
                obs_len,
                pred_len,
                outcome: run_experiment(stores, &spec)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{HeadingSource, StoreHeader, STORE_VERSION};
    use crate::synthetic::{generate, SynthConfig};

    fn store(kind: DatasetKind, recordings: &[(&str, &str)], n: usize) -> CanonicalStore {
        let mut tracks = Vec::new();
        let mut hz = std::collections::BTreeMap::new();
        for (i, (rec, loc)) in recordings.iter().enumerate() {
            let mut t = generate(&SynthConfig {
                n_tracks: n,
                points: 100,
                sample_hz: 10.0,
                seed: i as u64,
                recording_id: rec.to_string(),
                location_id: loc.to_string(),
                ..SynthConfig::default()
            });
            tracks.append(&mut t);
            hz.insert(rec.to_string(), 10.0);
        }
        CanonicalStore {
            header: StoreHeader {
                version: STORE_VERSION,
                kind,
                heading_source: HeadingSource::Degrees,
                sample_hz: hz,
            },
            tracks,
        }
    }

    fn spec(mode: SplitMode, train: Vec<Selector>, test: Vec<Selector>) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            variant: Variant::Vanilla,
            split: SplitSpec {
                mode,
                train,
                test,
                mixed_ratio: 0.8,
                seed: 3,
            },
            windowing: WindowingConfig::default(),
            model: ModelConfig::small(8, 1, 2, 2),
            train: TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            predictor: PredictorKind::Model,
            classes: None,
            min_displacement: 1.0,
            stores: vec![],
            output: None,
        }
    }

    fn ind() -> CanonicalStore {
        store(DatasetKind::IndFamily, &[("01", "1"), ("02", "2"), ("03", "3"), ("04", "4")], 3)
    }

    #[test]
    fn leave_location_out_excludes_test_location() {
        let sel = |l: &str| Selector::location(DatasetKind::IndFamily, l);
        let s = spec(SplitMode::LeaveLocationOut, vec![sel("1"), sel("2"), sel("3")], vec![sel("4")]);
        let (set, manifest) = build_split(&[ind()], &s).unwrap();
        assert!(set.train.iter().all(|w| w.provenance.recording_id != "04"));
        assert!(set.test.iter().all(|w| w.provenance.recording_id == "04"));
        assert_eq!(manifest.test_recordings, ["ind_family/04"]);
        assert_eq!(set.stats, crate::features::fit_norm(&set.train).unwrap());
    }

    #[test]
    fn overlap_rejected() {
        let sel = |l: &str| Selector::location(DatasetKind::IndFamily, l);
        let s = spec(SplitMode::LeaveLocationOut, vec![sel("1"), sel("2")], vec![sel("2")]);
        assert!(matches!(
            build_split(&[ind()], &s),
            Err(HarnessError::OverlappingSelectors(v)) if v == ["ind_family/02"]
        ));
    }

    #[test]
    fn empty_selector_rejected() {
        let sel = |l: &str| Selector::location(DatasetKind::IndFamily, l);
        let s = spec(SplitMode::LeaveLocationOut, vec![sel("1")], vec![sel("9")]);
        assert!(matches!(build_split(&[ind()], &s), Err(HarnessError::EmptySelector(_))));
    }

    #[test]
    fn mixed_ratio_count() {
        let s = spec(SplitMode::Mixed, vec![Selector::dataset(DatasetKind::IndFamily)], vec![]);
        let (set, _) = build_split(&[ind()], &s).unwrap();
        let n = set.train.len() + set.test.len();
        assert_eq!(set.train.len(), (0.8 * n as f64).round() as usize);
    }

    #[test]
    fn ground_truth_row_is_zero() {
        let mut s = spec(SplitMode::Mixed, vec![Selector::dataset(DatasetKind::IndFamily)], vec![]);
        s.predictor = PredictorKind::GroundTruth;
        let out = run_experiment(&[ind()], &s).unwrap();
        assert_eq!(format!("{:.2} / {:.2}", out.row.ade_m, out.row.fde_m), "0.00 / 0.00");
        assert!(out.report.is_none());
    }

    #[test]
    fn variant_mismatch_is_config_error() {
        let mut s = spec(SplitMode::Mixed, vec![Selector::dataset(DatasetKind::IndFamily)], vec![]);
        s.variant = Variant::Oriented;
        let err = s.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(s.with_variant(Variant::Oriented).validate().is_ok());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = spec(SplitMode::Mixed, vec![Selector::dataset(DatasetKind::IndFamily)], vec![]);
        let mut b = a.clone();
        b.stores = vec!["x.trkz".into()];
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            name = "ind-mixed"
            variant = "oriented"
            [split]
            mode = "mixed"
            train = [{ dataset = "ind_family" }]
            [model]
            d_model = 16
            n_layers = 1
            n_heads = 2
            d_ff = 32
        "#;
        let s = ExperimentSpec::from_toml(text).unwrap();
        assert_eq!(s.model.feature_dim, 3);
        assert!(s.windowing.oriented);
        assert_eq!(s.split.mixed_ratio, 0.8);
        assert!(ExperimentSpec::from_toml("name = 1").is_err());
    }

    #[test]
    fn results_table_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let row = ResultRow {
            experiment: "e".into(),
            variant: "vanilla".into(),
            ade_m: 1.5,
            fde_m: 3.25,
            n_test: 10,
            config_hash: "abc".into(),
            seed: 7,
        };
        append_results(&path, &[row.clone()]).unwrap();
        append_results(&path, &[row.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("experiment,variant,ade_m,fde_m,n_test,config_hash,seed\n"));
        assert_eq!(read_results(&path).unwrap(), vec![row.clone(), row]);
    }

    #[test]
    fn framerate_lengths() {
        assert_eq!(lengths_for_rate(2.5), (8, 12));
        assert_eq!(lengths_for_rate(5.0), (16, 24));
    }

    #[test]
    fn winner_is_argmin() {
        assert_eq!(winner(2.0, 1.0), Variant::Oriented);
        assert_eq!(winner(1.0, 2.0), Variant::Vanilla);
    }
}

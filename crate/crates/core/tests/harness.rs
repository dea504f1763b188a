use trajformer::features::WindowingConfig;
use trajformer::harness::{
    build_split, compare_variants, framerate_study, run_experiment, ExperimentSpec, HarnessError, PredictorKind,
    Selector, SplitMode, SplitSpec, Variant,
};
use trajformer::ingest::{CanonicalStore, DatasetKind, StoreHeader, STORE_VERSION};
use trajformer::model::ModelConfig;
use trajformer::synthetic::{generate, SynthConfig};
use trajformer::training::TrainConfig;

fn store(kind: DatasetKind, recordings: &[(&str, &str)]) -> CanonicalStore {
    let mut tracks = Vec::new();
    for (i, (rec, loc)) in recordings.iter().enumerate() {
        tracks.extend(generate(&SynthConfig {
            n_tracks: 4,
            points: 100,
            sample_hz: 10.0,
            seed: i as u64 + 10,
            recording_id: rec.to_string(),
            location_id: loc.to_string(),
            ..SynthConfig::default()
        }));
    }
    CanonicalStore {
        header: StoreHeader {
            version: STORE_VERSION,
            kind,
            heading_source: kind.heading_source(),
            sample_hz: recordings.iter().map(|(r, _)| (r.to_string(), 10.0)).collect(),
        },
        tracks,
    }
}

fn spec(split: SplitSpec) -> ExperimentSpec {
    ExperimentSpec {
        name: "fixture".into(),
        variant: Variant::Vanilla,
        split,
        windowing: WindowingConfig::default(),
        model: ModelConfig::small(8, 1, 2, 2),
        train: TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        },
        predictor: PredictorKind::Model,
        classes: None,
        min_displacement: 1.0,
        stores: vec![],
        output: None,
    }
}

fn two_locations() -> SplitSpec {
    SplitSpec {
        mode: SplitMode::LeaveLocationOut,
        train: vec![Selector::location(DatasetKind::IndFamily, "1")],
        test: vec![Selector::location(DatasetKind::IndFamily, "2")],
        mixed_ratio: 0.8,
        seed: 0,
    }
}

#[test]
fn leave_one_location_out_gives_finite_row() {
    let stores = [store(DatasetKind::IndFamily, &[("01", "1"), ("02", "2")])];
    let out = run_experiment(&stores, &spec(two_locations())).unwrap();
    assert!(out.row.ade_m.is_finite() && out.row.fde_m.is_finite());
    assert!(out.row.n_test > 0);
    assert_eq!(out.manifest.train_recordings, ["ind_family/01"]);
    assert_eq!(out.manifest.test_recordings, ["ind_family/02"]);
    assert_eq!(out.row.config_hash.len(), 64);
}

#[test]
fn cross_dataset_applies_train_stats_to_test() {
    let stores = [
        store(DatasetKind::IndFamily, &[("01", "1")]),
        store(DatasetKind::Interaction, &[("DR_USA_Roundabout_FT_000", "DR_USA_Roundabout_FT")]),
    ];
    let s = spec(SplitSpec {
        mode: SplitMode::CrossDataset,
        train: vec![Selector::dataset(DatasetKind::IndFamily)],
        test: vec![Selector::location(DatasetKind::Interaction, "INT-round")],
        mixed_ratio: 0.8,
        seed: 0,
    });
    let (set, _) = build_split(&stores, &s).unwrap();
    let train_only = trajformer::features::fit_norm(&set.train).unwrap();
    assert_eq!(set.stats, train_only);
    assert!(set.test.iter().all(|w| w.provenance.recording_id == "DR_USA_Roundabout_FT_000"));
}

#[test]
fn variants_share_split_and_report_winner() {
    let stores = [store(DatasetKind::IndFamily, &[("01", "1"), ("02", "2")])];
    let c = compare_variants(&stores, &spec(two_locations())).unwrap();
    assert_eq!(c.vanilla.row.variant, "vanilla");
    assert_eq!(c.oriented.row.variant, "oriented");
    assert_eq!(c.vanilla.manifest.test_recordings, c.oriented.manifest.test_recordings);
    assert_eq!(c.vanilla.row.n_test, c.oriented.row.n_test);
    let want = if c.oriented.row.fde_m < c.vanilla.row.fde_m {
        Variant::Oriented
    } else {
        Variant::Vanilla
    };
    assert_eq!(c.winners.fde, want);
}

#[test]
fn framerate_study_keeps_horizons() {
    let stores = [store(DatasetKind::IndFamily, &[("01", "1"), ("02", "2")])];
    let rows = framerate_study(&stores, &spec(two_locations()), &[2.5, 5.0]).unwrap();
    assert_eq!((rows[0].obs_len, rows[0].pred_len), (8, 12));
    assert_eq!((rows[1].obs_len, rows[1].pred_len), (16, 24));
    for r in &rows {
        assert_eq!(r.horizon_s(), (3.2, 4.8));
        assert!(r.outcome.row.ade_m.is_finite() && r.outcome.row.fde_m.is_finite());
    }
}

#[test]
fn framerate_study_rejects_non_integer_decimation() {
    let stores = [store(DatasetKind::IndFamily, &[("01", "1"), ("02", "2")])];
    let err = framerate_study(&stores, &spec(two_locations()), &[3.0]).unwrap_err();
    assert!(matches!(err, HarnessError::Features(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

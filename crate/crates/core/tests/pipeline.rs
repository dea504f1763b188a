use proptest::prelude::*;

use trajformer::features::{
    denormalize_vec, extract_windows, fit_norm_vectors, normalize_vec, track_features, window_count, WindowingConfig,
};
use trajformer::synthetic::{generate, SynthConfig};
use trajformer::types::FeatureVec;

fn brute_force_count(len: usize, obs: usize, pred: usize) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + obs + pred <= len {
        n += 1;
        start += 1;
    }
    n
}

proptest! {
    #[test]
    fn window_count_matches_enumeration(len in 0usize..80, obs in 2usize..12, pred in 1usize..16) {
        prop_assert_eq!(window_count(len, obs, pred), brute_force_count(len, obs, pred));
    }

    #[test]
    fn extracted_windows_tile_the_track(points in 2usize..60, obs in 2usize..8, pred in 1usize..10, seed: u64) {
        let track = &generate(&SynthConfig { n_tracks: 1, points, seed, ..SynthConfig::default() })[0];
        let tf = track_features(track, false).unwrap();
        let cfg = WindowingConfig { obs_len: obs, pred_len: pred, ..WindowingConfig::default() };
        let windows = extract_windows(&tf, &cfg);
        prop_assert_eq!(windows.len(), brute_force_count(tf.features.len(), obs, pred));
        for (s, w) in windows.iter().enumerate() {
            prop_assert_eq!(&w.obs[..], &tf.features[s..s + obs]);
            prop_assert_eq!(&w.target[..], &tf.features[s + obs..s + obs + pred]);
            prop_assert_eq!(w.last_obs_position, tf.positions[s + obs]);
        }
    }

    #[test]
    fn normalization_round_trip(values in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, 0.0f64..1.0), 2..40)) {
        let vectors: Vec<FeatureVec> = values.iter().map(|&(a, b, h)| FeatureVec::oriented(a, b, h)).collect();
        prop_assume!(vectors.windows(2).any(|w| w[0].dvx != w[1].dvx && w[0].dvy != w[1].dvy && w[0].heading != w[1].heading));
        let Ok(stats) = fit_norm_vectors(&vectors) else { return Ok(()) };
        for v in &vectors {
            let back = denormalize_vec(&normalize_vec(v, &stats).unwrap(), &stats).unwrap();
            for i in 0..3 {
                prop_assert!((back.get(i) - v.get(i)).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn normalized_train_features_are_standard() {
    let tracks = generate(&SynthConfig {
        n_tracks: 30,
        points: 40,
        ..SynthConfig::default()
    });
    let vectors: Vec<FeatureVec> = tracks
        .iter()
        .flat_map(|t| track_features(t, false).unwrap().features)
        .collect();
    let stats = fit_norm_vectors(&vectors).unwrap();
    let z: Vec<FeatureVec> = vectors.iter().map(|v| normalize_vec(v, &stats).unwrap()).collect();
    let again = fit_norm_vectors(&z).unwrap();
    for i in 0..2 {
        assert!(again.mean[i].abs() < 1e-12);
        assert!((again.sd[i] - 1.0).abs() < 1e-12);
    }
}

mod common;

use std::collections::BTreeMap;

use aqisense_core::data::{
    dataset_digest, generate_haze_dataset, load_dataset, make_windows, split_8_2, write_dataset,
    HazeSynthesisSpec, Labeled, ObservationRecord, ObservationSet, SplitSpec,
};
use aqisense_core::haze::{dark_channel, FeatureConfig};
use aqisense_core::Error;
use proptest::prelude::*;

fn small_features() -> FeatureConfig {
    FeatureConfig {
        target_size: 16,
        dark_patch: 5,
        local_window: 5,
        ..Default::default()
    }
}

#[test]
fn six_hundred_samples_are_reproducible_and_balanced() {
    let spec = HazeSynthesisSpec {
        base_count: 200,
        base_size: 32,
        seed: 4,
        ..Default::default()
    };
    let feats = small_features();
    let a = generate_haze_dataset(&spec, &feats).unwrap();
    assert_eq!(a.len(), 600);
    let mut per_class = BTreeMap::new();
    for s in &a {
        *per_class.entry(s.label).or_insert(0) += 1;
        assert_eq!(s.stack.size(), 16);
    }
    assert_eq!(
        per_class.into_values().collect::<Vec<_>>(),
        vec![200, 200, 200]
    );
    let b = generate_haze_dataset(&spec, &feats).unwrap();
    assert_eq!(dataset_digest(&a), dataset_digest(&b));
    let other = HazeSynthesisSpec { seed: 5, ..spec };
    assert_ne!(
        dataset_digest(&a),
        dataset_digest(&generate_haze_dataset(&other, &feats).unwrap())
    );
}

#[test]
fn thicker_haze_raises_the_dark_channel() {
    let spec = HazeSynthesisSpec {
        base_count: 10,
        base_size: 24,
        lambdas: vec![0.2, 0.8, 1.4, 2.0, 2.6],
        seed: 1,
        ..Default::default()
    };
    let samples = generate_haze_dataset(&spec, &small_features()).unwrap();
    for base in 0..10 {
        let means: Vec<f64> = samples
            .iter()
            .filter(|s| s.id.starts_with(&format!("b{base:05}_")))
            .map(|s| dark_channel(&s.image(), 5).mean())
            .collect();
        assert_eq!(means.len(), 5);
        assert!(
            means.windows(2).all(|w| w[0] <= w[1] + 1e-9),
            "base {base}: {means:?}"
        );
    }
}

#[test]
fn invalid_synthesis_specs_are_rejected() {
    let bad = |lambdas: Vec<f64>| HazeSynthesisSpec {
        lambdas,
        base_count: 1,
        ..Default::default()
    };
    assert!(generate_haze_dataset(&bad(vec![-0.5, 1.0]), &small_features()).is_err());
    assert!(generate_haze_dataset(&bad(vec![1.0, 1.0]), &small_features()).is_err());
}

#[test]
fn dataset_files_round_trip_and_detect_tampering() {
    let spec = HazeSynthesisSpec {
        base_count: 3,
        base_size: 16,
        ..Default::default()
    };
    let feats = FeatureConfig {
        target_size: 8,
        dark_patch: 3,
        local_window: 3,
        ..Default::default()
    };
    let samples = generate_haze_dataset(&spec, &feats).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &samples, 3, Some(&spec), &feats).unwrap();
    let (m2, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(m, m2);
    assert_eq!(loaded, samples);

    let victim = dir.path().join(&m.samples[1].stack);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Input { path, .. }) => assert_eq!(path, victim),
        other => panic!("expected a digest error, got {other:?}"),
    }
}

#[derive(Debug, Clone)]
struct Item(String, usize);

impl Labeled for Item {
    fn id(&self) -> &str {
        &self.0
    }
    fn label(&self) -> usize {
        self.1
    }
}

proptest! {
    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(2usize..40, 1..5),
        seed in any::<u64>(),
    ) {
        let items: Vec<Item> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| Item(format!("{c}-{i:03}"), c)))
            .collect();
        prop_assume!(items.len() >= 5);
        let spec = SplitSpec { seed, ..Default::default() };
        let (train, test) = split_8_2(&items, &spec).unwrap();
        prop_assert_eq!(train.len() + test.len(), items.len());
        prop_assert_eq!(test.len(), (items.len() as f64 * 0.2).round() as usize);
        let mut ids: Vec<&str> = train.iter().chain(&test).map(|i| i.0.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), items.len());
        for (c, &n) in counts.iter().enumerate() {
            let t = test.iter().filter(|i| i.1 == c).count() as f64;
            prop_assert!((t - 0.2 * n as f64).abs() < 1.0 + 1e-9, "class {} of {}: {}", c, n, t);
        }
        // same seed, any input order: same split
        let mut rev = items.clone();
        rev.reverse();
        let (train2, _) = split_8_2(&rev, &spec).unwrap();
        prop_assert_eq!(
            train.iter().map(|i| &i.0).collect::<Vec<_>>(),
            train2.iter().map(|i| &i.0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn window_count_formula(len in 1usize..60, window in 1usize..10, horizon in 1usize..5, step in 1usize..4) {
        let mut obs = ObservationSet::default();
        for t in 0..len {
            obs.insert(ObservationRecord {
                station_id: "a".into(),
                timestamp: 3600 * t as i64,
                aqi: t as f64,
                met: vec![],
                flagged: false,
            });
        }
        let w = make_windows(&obs, window, horizon, step).unwrap();
        let want = if len < window + horizon { 0 } else { (len - window - horizon) / step + 1 };
        prop_assert_eq!(w.len(), want);
        for win in &w {
            // targets follow the inputs directly
            let last = win.x.get(&[window - 1, 0, 0]);
            prop_assert_eq!(win.y.get(&[0, 0]), last + 1.0);
        }
    }
}

#[test]
fn split_rejects_tiny_inputs() {
    let items: Vec<Item> = (0..4).map(|i| Item(i.to_string(), 0)).collect();
    assert!(split_8_2(&items, &SplitSpec::default()).is_err());
    let mut items: Vec<Item> = (0..6).map(|i| Item(i.to_string(), 0)).collect();
    items.push(Item("x".into(), 1));
    assert!(split_8_2(&items, &SplitSpec::default()).is_err());
}

#[test]
fn observation_csv_round_trips_and_reports_lines() {
    let text = "station_id,timestamp_iso8601,aqi,met_temp\n\
                a,2019-03-01T00:00:00Z,42,11.5\n\
                a,2019-03-01T01:00:00Z,600,12\n\
                b,2019-03-01T00:00:00Z,17.25,\n";
    let obs = ObservationSet::read(text.as_bytes()).unwrap();
    assert_eq!(obs.len(), 3);
    assert!(obs.stations["a"][1].flagged);
    assert_eq!(obs.stations["b"][0].met, vec![0.0]);
    let mut buf = Vec::new();
    obs.write(&mut buf).unwrap();
    assert_eq!(ObservationSet::read(&buf[..]).unwrap(), obs);

    let broken =
        "station_id,timestamp_iso8601,aqi\na,2019-03-01T00:00:00Z,1\nb,2019-03-01T00:00:00Z,\n";
    match ObservationSet::read(broken.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

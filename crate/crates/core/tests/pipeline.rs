use approx::assert_relative_eq;
use qcforest::baseline::{cart_ensemble, CartConfig, CartEnsemble};
use qcforest::data::{load_csv, load_feature_rows, normalize, Dataset, Task};
use qcforest::feature_weights::{WeightMethod, WeightState};
use qcforest::forest::{
    build_forest, load_model, retrain_forest, save_model, Forest, ForestConfig, TreeParams,
};
use qcforest::inference::{predict, predict_dataset, Aggregation};
use qcforest::Error;

fn blobs_csv() -> String {
    let mut s = String::from("a,b,noise,label\n");
    for i in 0..120 {
        let (cx, cy, l) = match i % 3 {
            0 => (0.0, 0.0, "red"),
            1 => (8.0, 0.0, "green"),
            _ => (0.0, 8.0, "blue"),
        };
        let jitter = ((i * 37) % 11) as f64 / 10.0;
        s.push_str(&format!("{},{},{},{l}\n", cx + jitter, cy - jitter, (i * 7 % 13) as f64));
    }
    s
}

fn load_blobs(dir: &tempfile::TempDir) -> Dataset {
    let path = dir.path().join("blobs.csv");
    std::fs::write(&path, blobs_csv()).unwrap();
    load_csv(&path, "label", Task::Classification).unwrap()
}

fn config(method: WeightMethod) -> ForestConfig {
    ForestConfig {
        n_trees: 8,
        tree: TreeParams {
            k: 3,
            max_depth: 2,
            ..TreeParams::default()
        },
        weight_method: method,
        seed: 11,
        ..ForestConfig::default()
    }
}

#[test]
fn csv_to_forest_separates_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    assert_eq!(ds.classes(), ["red", "green", "blue"]);
    let (train, _) = normalize(&ds);
    let f = build_forest(&train, &config(WeightMethod::Eta)).unwrap();
    let preds = predict_dataset(&f, &train, Aggregation::Mean);
    let correct = preds
        .iter()
        .enumerate()
        .filter(|(i, p)| p.class() == train.class_of(*i))
        .count();
    assert_eq!(correct, train.n_rows());
}

#[test]
fn saved_model_predicts_like_the_original() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    let f = build_forest(&ds, &config(WeightMethod::Eta)).unwrap();
    let path = dir.path().join("m.json");
    save_model(&f, &path).unwrap();
    let g = load_model(&path).unwrap();
    assert_eq!(g.feature_names, ["a", "b", "noise"]);
    for row in ds.rows() {
        assert_eq!(predict(&f, row, Aggregation::Mean), predict(&g, row, Aggregation::Mean));
    }
    let rows = load_feature_rows(dir.path().join("blobs.csv"), &g.feature_names).unwrap();
    assert_eq!(rows[5], ds.row(5));
}

#[test]
fn corrupted_or_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    let f = build_forest(&ds, &config(WeightMethod::Eta)).unwrap();
    let bytes = f.to_bytes().unwrap();

    let mut flipped = bytes.clone();
    let at = flipped.iter().position(|&b| b == b'1').unwrap();
    flipped[at] = b'2';
    assert!(matches!(Forest::from_bytes(&flipped), Err(Error::Checksum { .. })));

    let text = String::from_utf8(bytes).unwrap();
    let body = text[..text.rfind("crc32:").unwrap()].replace("\"format_version\": 1", "\"format_version\": 9");
    let resealed = format!("{body}crc32:{:08x}\n", crc32fast::hash(body.as_bytes()));
    assert!(matches!(
        Forest::from_bytes(resealed.as_bytes()),
        Err(Error::Version { found: 9, .. })
    ));

    let cart = cart_ensemble(
        &ds,
        &CartConfig {
            n_trees: 2,
            ..CartConfig::default()
        },
    )
    .unwrap();
    assert!(Forest::from_bytes(&cart.to_bytes().unwrap()).is_err());
    let back = CartEnsemble::from_bytes(&cart.to_bytes().unwrap()).unwrap();
    assert_eq!(back.trees, cart.trees);
}

#[test]
fn retraining_tracks_cumulative_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    let old = ds.select(&(0..90).collect::<Vec<_>>());
    let new = ds.select(&(90..120).collect::<Vec<_>>());
    let f = build_forest(&old, &config(WeightMethod::Eta)).unwrap();
    let g = retrain_forest(&f, &old, &new, 5).unwrap();
    assert_eq!(g.n_rows_seen, 120);
    assert_eq!(g.trees.len(), f.trees.len());
    for (t, (state, sample)) in g.weight_states.iter().zip(&g.samples).enumerate() {
        assert_eq!(sample.indices.len(), f.samples[t].indices.len() + new.n_rows());
        assert_eq!(&sample.indices[..90], f.samples[t].indices.as_slice());
        let scratch = WeightState::compute(WeightMethod::Eta, &ds, &sample.indices).unwrap();
        for (a, b) in state.weights().as_slice().iter().zip(scratch.weights().as_slice()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }
    // same seed, same result
    assert_eq!(
        g.to_bytes().unwrap(),
        retrain_forest(&f, &old, &new, 5).unwrap().to_bytes().unwrap()
    );
    // the history must match what the forest has seen
    assert!(matches!(retrain_forest(&f, &new, &new, 5), Err(Error::Config(_))));
}

#[test]
fn empty_batch_keeps_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    let f = build_forest(&ds, &config(WeightMethod::Eta)).unwrap();
    let g = retrain_forest(&f, &ds, &ds.empty_like(), 3).unwrap();
    assert_eq!(g.weight_states, f.weight_states);
    assert_eq!(g.samples, f.samples);
}

#[test]
fn pearson_on_multiclass_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_blobs(&dir);
    assert!(matches!(
        build_forest(&ds, &config(WeightMethod::Pearson)),
        Err(Error::Config(_))
    ));
}

#[test]
fn regression_forest_averages_leaf_means() {
    let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, (i % 5) as f64]).collect();
    let ys: Vec<f64> = (0..60).map(|i| if i < 30 { 1.0 } else { 5.0 }).collect();
    let ds = Dataset::regression(rows, ys).unwrap();
    let f = build_forest(&ds, &config(WeightMethod::Pearson)).unwrap();
    let lo = predict(&f, &[2.0, 2.0], Aggregation::Mean).value();
    let hi = predict(&f, &[57.0, 2.0], Aggregation::Mean).value();
    assert!(lo < 2.0 && hi > 4.0, "{lo} {hi}");
}

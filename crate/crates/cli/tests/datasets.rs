mod common;

use std::collections::HashSet;

/// Distinct values of each named column, counted straight from the file.
fn cardinalities(file: &str, columns: &[&str]) -> Vec<usize> {
    let text = std::fs::read_to_string(common::data_dir().join(file)).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx: Vec<usize> = columns
        .iter()
        .map(|c| header.iter().position(|h| h == c).unwrap())
        .collect();
    let mut seen: Vec<HashSet<String>> = vec![HashSet::new(); columns.len()];
    for line in lines.filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        for (s, &j) in seen.iter_mut().zip(&idx) {
            s.insert(cells[j].trim().to_string());
        }
    }
    seen.iter().map(HashSet::len).collect()
}

#[test]
fn car_one_hot_width_is_sum_of_cardinalities() {
    let ds = common::car();
    let expected: usize = cardinalities("car.csv", &common::CAR_CATEGORICAL).iter().sum();
    assert_eq!(expected, 21);
    assert_eq!(ds.n_features(), expected);
    assert_eq!(ds.n_rows(), 1728);
    assert!(ds.rows().all(|r| r.iter().sum::<f64>() == 6.0));
}

#[test]
fn german_one_hot_keeps_numeric_columns() {
    let ds = common::german();
    let cards: usize = cardinalities("german.csv", &common::GERMAN_CATEGORICAL).iter().sum();
    assert_eq!(ds.n_features(), cards + 20 - common::GERMAN_CATEGORICAL.len());
    assert_eq!(ds.n_rows(), 1000);
}

#[test]
fn bundled_sets_have_expected_shapes() {
    let shapes = [
        (common::wine(), 178, 13, 3),
        (common::pima(), 768, 8, 2),
        (common::spambase(), 4597, 57, 2),
    ];
    for (ds, n, d, k) in shapes {
        assert_eq!((ds.n_rows(), ds.n_features(), ds.n_classes()), (n, d, k));
    }
}

#![allow(dead_code)]

use std::path::PathBuf;

use qcforest::data::{load_csv_with, one_hot_encode, CsvOptions, Dataset, Task};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load(file: &str, label: &str, categorical: &[&str]) -> Dataset {
    let opts = CsvOptions {
        label_column: label.into(),
        task: Task::Classification,
        categorical: categorical.iter().map(|s| s.to_string()).collect(),
    };
    let ds = load_csv_with(data_dir().join(file), &opts).expect("dataset loads");
    one_hot_encode(&ds, categorical).expect("categorical columns exist")
}

pub const GERMAN_CATEGORICAL: [&str; 13] = [
    "checking_status",
    "credit_history",
    "purpose",
    "savings_status",
    "employment",
    "personal_status",
    "other_parties",
    "property",
    "other_payment_plans",
    "housing",
    "job",
    "own_telephone",
    "foreign_worker",
];

pub fn wine() -> Dataset {
    load("wine.csv", "cultivar", &[])
}

pub fn pima() -> Dataset {
    load("pima.csv", "outcome", &[])
}

pub fn german() -> Dataset {
    load("german.csv", "risk", &GERMAN_CATEGORICAL)
}

pub fn spambase() -> Dataset {
    load("spambase.csv", "is_spam", &[])
}

pub const CAR_CATEGORICAL: [&str; 6] = ["buying", "maint", "doors", "persons", "lug_boot", "safety"];

pub fn car() -> Dataset {
    load("car.csv", "class", &CAR_CATEGORICAL)
}

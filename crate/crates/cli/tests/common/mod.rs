#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use railcause::synth::keyword_records;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_railcause"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a synthetic accident CSV, narratives split over two columns.
pub fn write_synthetic_csv(path: &Path, n_docs: usize, seed: u64) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["INCDTNO", "YEAR", "CAUSE", "NARR1", "NARR2"]).unwrap();
    for r in keyword_records(n_docs, seed) {
        let words: Vec<&str> = r.narrative.split(' ').collect();
        let (a, b) = words.split_at(words.len() / 2);
        w.write_record([&r.id, &r.year.to_string(), &r.cause_code, &a.join(" "), &b.join(" ")])
            .unwrap();
    }
    w.flush().unwrap();
}

/// Config over `csv` writing everything under `dir`; `extra` is merged on top.
pub fn write_config(dir: &Path, csv: &Path, extra: serde_json::Value) -> PathBuf {
    let mut config = serde_json::json!({
        "inputs": [csv],
        "columns": {"id": "INCDTNO", "year": "YEAR", "cause": "CAUSE", "narratives": ["NARR1", "NARR2"]},
        "dataset_dir": dir.join("data"),
        "output_dir": dir.join("run"),
        "min_count": 1,
        "seq_len": 40,
        "dropout": 0.1,
        "word2vec": {"dim": 16, "epochs": 20, "min_count": 1},
        "train": {"epochs": 6, "batch_size": 16, "validation_fraction": null, "patience": null,
                  "optimizer": {"kind": "adam", "lr": 0.005, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}},
        "architecture": null,
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

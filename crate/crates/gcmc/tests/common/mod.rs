#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcmc_core::synthetic::planted_factor_ratings;

/// Writes a planted-factor rating set in ML-100k `u.data` layout.
pub fn write_ml100k(dir: &Path, users: usize, items: usize, ratings: usize, seed: u64) -> PathBuf {
    let path = dir.join("u.data");
    let text: String = planted_factor_ratings(users, items, ratings, 2, seed)
        .unwrap()
        .iter()
        .map(|r| format!("{}\t{}\t{}\t{}\n", r.user_raw, r.item_raw, r.rating, r.timestamp))
        .collect();
    std::fs::write(&path, text).unwrap();
    path
}

pub fn gcmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcmc")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Flags for a model small enough to train in well under a second.
pub const SMALL: &[&str] = &[
    "--hidden", "10", "--output", "4", "--recurrent-hidden", "4", "--epochs", "4", "--eval-every", "2",
];

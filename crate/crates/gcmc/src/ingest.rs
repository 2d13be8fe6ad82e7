//! MovieLens rating files.
//!
//! ML-100k `u.data` lines are `user \t item \t rating \t timestamp`; ML-1M
//! `ratings.dat` lines are `user::item::rating::timestamp`. Blank lines are
//! ignored. Ratings must lie in `1..=5`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use gcmc_core::dataset::{build_dataset, RatingsDataset, RawRating};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Ml100k,
    Ml1m,
}

impl DatasetFormat {
    fn separator(self) -> &'static str {
        match self {
            DatasetFormat::Ml100k => "\t",
            DatasetFormat::Ml1m => "::",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetFormat::Ml100k => "ml-100k",
            DatasetFormat::Ml1m => "ml-1m",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: rating {rating} outside 1..=5")]
    Domain { line: usize, rating: i64 },
    #[error(transparent)]
    Dataset(#[from] gcmc_core::Error),
}

fn parse_lines<R: BufRead>(reader: R, format: DatasetFormat) -> Result<Vec<RawRating>, IngestError> {
    let sep = format.separator();
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(sep).collect();
        if fields.len() != 4 {
            return Err(IngestError::Malformed {
                line: line_no,
                message: format!("expected 4 fields separated by {sep:?}, found {}", fields.len()),
            });
        }
        let int = |idx: usize, what: &str| -> Result<i64, IngestError> {
            fields[idx].trim().parse::<i64>().map_err(|_| IngestError::Malformed {
                line: line_no,
                message: format!("{what} {:?} is not an integer", fields[idx]),
            })
        };
        let nonneg = |v: i64, what: &str| -> Result<u64, IngestError> {
            u64::try_from(v).map_err(|_| IngestError::Malformed {
                line: line_no,
                message: format!("{what} {v} is negative"),
            })
        };
        let user = nonneg(int(0, "user id")?, "user id")?;
        let item = nonneg(int(1, "item id")?, "item id")?;
        let rating = int(2, "rating")?;
        let timestamp = nonneg(int(3, "timestamp")?, "timestamp")?;
        if !(1..=5).contains(&rating) {
            return Err(IngestError::Domain { line: line_no, rating });
        }
        out.push(RawRating {
            user_raw: user,
            item_raw: item,
            rating: rating as i32,
            timestamp,
        });
    }
    Ok(out)
}

pub fn parse_ml100k<R: BufRead>(reader: R) -> Result<Vec<RawRating>, IngestError> {
    parse_lines(reader, DatasetFormat::Ml100k)
}

pub fn parse_ml1m<R: BufRead>(reader: R) -> Result<Vec<RawRating>, IngestError> {
    parse_lines(reader, DatasetFormat::Ml1m)
}

pub fn parse<R: BufRead>(reader: R, format: DatasetFormat) -> Result<Vec<RawRating>, IngestError> {
    parse_lines(reader, format)
}

/// A parsed dataset file with the SHA-256 of its bytes.
pub struct LoadedDataset {
    pub dataset: RatingsDataset,
    pub sha256: String,
}

pub fn load(path: &Path, format: DatasetFormat) -> Result<LoadedDataset, IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(io_err)?;
    let sha256 = hex(&Sha256::digest(&bytes));
    let raw = parse(bytes.as_slice(), format)?;
    Ok(LoadedDataset {
        dataset: build_dataset(&raw)?,
        sha256,
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

//! Timestamped ratings with dense user/item indices, and chronological
//! train/validation/test splits.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rating as read from a file, before id remapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRating {
    pub user_raw: u64,
    pub item_raw: u64,
    pub rating: i32,
    pub timestamp: u64,
}

/// A rating with dense indices. `level` indexes [`RatingsDataset::rating_levels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub level: usize,
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatingsDataset {
    ratings: Vec<Rating>,
    n_users: usize,
    n_items: usize,
    rating_levels: Vec<i32>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    user_map: BTreeMap<u64, usize>,
    item_map: BTreeMap<u64, usize>,
}

impl RatingsDataset {
    /// Ratings sorted by `(timestamp, file position)`.
    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Distinct rating values in ascending order.
    pub fn rating_levels(&self) -> &[i32] {
        &self.rating_levels
    }

    pub fn rating_value(&self, level: usize) -> i32 {
        self.rating_levels[level]
    }

    pub fn user_index(&self, raw: u64) -> Option<usize> {
        self.user_map.get(&raw).copied()
    }

    pub fn item_index(&self, raw: u64) -> Option<usize> {
        self.item_map.get(&raw).copied()
    }

    pub fn user_raw(&self, idx: usize) -> u64 {
        self.user_ids[idx]
    }

    pub fn item_raw(&self, idx: usize) -> u64 {
        self.item_ids[idx]
    }
}

/// Remaps ids densely in order of first appearance, drops superseded
/// duplicates and sorts chronologically.
///
/// When a `(user, item)` pair occurs more than once the record with the
/// latest timestamp is kept; on equal timestamps the later file position wins.
pub fn build_dataset(raw: &[RawRating]) -> Result<RatingsDataset> {
    if raw.is_empty() {
        return Err(Error::Empty("ratings"));
    }
    let mut user_map = BTreeMap::new();
    let mut item_map = BTreeMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    for r in raw {
        user_map.entry(r.user_raw).or_insert_with(|| {
            user_ids.push(r.user_raw);
            user_ids.len() - 1
        });
        item_map.entry(r.item_raw).or_insert_with(|| {
            item_ids.push(r.item_raw);
            item_ids.len() - 1
        });
    }

    // latest record per pair, keyed by file position
    let mut latest: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    for (pos, r) in raw.iter().enumerate() {
        latest
            .entry((r.user_raw, r.item_raw))
            .and_modify(|kept| {
                if r.timestamp >= raw[*kept].timestamp {
                    *kept = pos;
                }
            })
            .or_insert(pos);
    }
    let mut positions: Vec<usize> = latest.into_values().collect();
    positions.sort_unstable();

    let mut rating_levels: Vec<i32> = positions.iter().map(|&p| raw[p].rating).collect();
    rating_levels.sort_unstable();
    rating_levels.dedup();

    let mut ratings: Vec<(usize, Rating)> = positions
        .iter()
        .map(|&p| {
            let r = &raw[p];
            let level = rating_levels.binary_search(&r.rating).expect("level collected above");
            (
                p,
                Rating {
                    user: user_map[&r.user_raw],
                    item: item_map[&r.item_raw],
                    level,
                    timestamp: r.timestamp,
                },
            )
        })
        .collect();
    ratings.sort_by_key(|(pos, r)| (r.timestamp, *pos));

    Ok(RatingsDataset {
        ratings: ratings.into_iter().map(|(_, r)| r).collect(),
        n_users: user_ids.len(),
        n_items: item_ids.len(),
        rating_levels,
        user_ids,
        item_ids,
        user_map,
        item_map,
    })
}

/// Contiguous index ranges into [`RatingsDataset::ratings`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl TemporalSplit {
    pub fn total(&self) -> usize {
        self.test.end
    }

    pub fn train<'a>(&self, ds: &'a RatingsDataset) -> &'a [Rating] {
        &ds.ratings()[self.train.clone()]
    }

    pub fn val<'a>(&self, ds: &'a RatingsDataset) -> &'a [Rating] {
        &ds.ratings()[self.val.clone()]
    }

    pub fn test<'a>(&self, ds: &'a RatingsDataset) -> &'a [Rating] {
        &ds.ratings()[self.test.clone()]
    }
}

fn floor_fraction(frac: f64, n: usize) -> usize {
    // guard against products like 0.29 * 100 = 28.999999999999996
    libm::floor(frac * n as f64 + 1e-9) as usize
}

/// Chronological split: the last `floor(test_frac * N)` ratings form the
/// test set, the last `floor(val_frac * rest)` of the remainder form the
/// validation set, and everything earlier is training data.
pub fn temporal_split(ds: &RatingsDataset, test_frac: f64, val_frac: f64) -> Result<TemporalSplit> {
    split_sizes(ds.len(), test_frac, val_frac)
}

/// Split arithmetic on a bare count.
pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> Result<TemporalSplit> {
    for f in [test_frac, val_frac] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("split fraction {f} outside (0, 1)")));
        }
    }
    let n_test = floor_fraction(test_frac, n);
    let rest = n - n_test;
    let n_val = floor_fraction(val_frac, rest);
    let n_train = rest - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::DegenerateSplit {
            train: n_train,
            val: n_val,
            test: n_test,
        });
    }
    Ok(TemporalSplit {
        train: 0..n_train,
        val: n_train..rest,
        test: rest..n,
    })
}

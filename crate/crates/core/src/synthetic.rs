//! Small synthetic rating sets with a planted low-rank structure.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::RawRating;
use crate::error::{Error, Result};
use crate::rng::{uniform_symmetric, Purpose, SeedStreams};

/// Ratings from a planted factor model: every user and item gets a random
/// vector in `[-1, 1]^factors`, and the rating of a pair is
/// `3 + 2 * (u . v) * 2 / factors` rounded and clamped to `1..=5`.
///
/// `n_ratings` distinct pairs are drawn uniformly; timestamps follow the
/// draw order, so the chronological order is random with respect to ids.
pub fn planted_factor_ratings(
    n_users: usize,
    n_items: usize,
    n_ratings: usize,
    factors: usize,
    seed: u64,
) -> Result<Vec<RawRating>> {
    if n_ratings > n_users * n_items {
        return Err(Error::InvalidArgument(alloc::format!(
            "{n_ratings} ratings do not fit in a {n_users}x{n_items} grid"
        )));
    }
    if factors == 0 {
        return Err(Error::InvalidArgument("need at least one factor".into()));
    }
    let mut rng = SeedStreams::new(seed).stream(Purpose::Synthetic, 0);
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..factors).map(|_| uniform_symmetric(&mut rng, 1.0)).collect())
            .collect()
    };
    let users = draw(n_users);
    let items = draw(n_items);

    let mut pairs: Vec<(usize, usize)> = (0..n_users).flat_map(|u| (0..n_items).map(move |i| (u, i))).collect();
    pairs.shuffle(&mut rng);
    let scale = 4.0 / factors as f64;
    Ok(pairs
        .into_iter()
        .take(n_ratings)
        .enumerate()
        .map(|(t, (u, i))| {
            let affinity: f64 = users[u].iter().zip(&items[i]).map(|(a, b)| a * b).sum();
            let rating = libm::round(3.0 + scale * affinity).clamp(1.0, 5.0) as i32;
            RawRating {
                user_raw: u as u64 + 1,
                item_raw: i as u64 + 1,
                rating,
                timestamp: 1_000_000 + t as u64 * 60 + rng.random_range(0..60),
            }
        })
        .collect())
}

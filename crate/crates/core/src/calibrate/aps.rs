//! Adaptive prediction sets over grid bins.
//!
//! Bins are visited in descending probability (ties in lexicographic order)
//! and the running cumulative mass is the score. The randomized variant
//! replaces a bin's own mass `p` by `u·p` for a uniform draw `u`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::GridDistribution;

/// Uniform draw in `[0, 1)` for the given seed.
pub fn uniform_from_seed(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>()
}

/// Descending order and the inclusive cumulative sums along it.
fn cumulative(grid: &GridDistribution) -> (Vec<usize>, Vec<f64>) {
    let order = grid.order_desc();
    let mut acc = 0.0;
    let cum = order
        .iter()
        .map(|&i| {
            acc += grid.values()[i];
            acc
        })
        .collect();
    (order, cum)
}

/// APS score of bin `target` (flat index).
///
/// Deterministic: total mass of all bins at least as probable as the target,
/// its own mass included. Randomized: mass strictly before the target in the
/// visiting order plus `u` times its own mass.
pub fn aps_score(grid: &GridDistribution, target: usize, u: Option<f64>) -> f64 {
    let (order, cum) = cumulative(grid);
    let pos = order.iter().position(|&i| i == target).expect("target in grid");
    let p = grid.values()[target];
    match u {
        None => {
            let mut last = pos;
            while last + 1 < order.len() && grid.values()[order[last + 1]] == p {
                last += 1;
            }
            cum[last]
        }
        Some(u) => {
            let before = if pos == 0 { 0.0 } else { cum[pos - 1] };
            before + u * p
        }
    }
}

/// Flat indices of the bins admitted at `threshold`.
pub fn aps_flat(grid: &GridDistribution, threshold: f64, u: Option<f64>) -> Vec<usize> {
    if threshold >= 1.0 && u.is_none() {
        return (0..grid.len()).collect();
    }
    let (order, cum) = cumulative(grid);
    let mut out = Vec::new();
    for (pos, &bin) in order.iter().enumerate() {
        let s = match u {
            None => cum[pos],
            Some(u) => (if pos == 0 { 0.0 } else { cum[pos - 1] }) + u * grid.values()[bin],
        };
        if s <= threshold {
            out.push(bin);
        } else {
            break;
        }
    }
    out
}

/// Bins admitted by APS at `threshold`, as multi-indices.
pub fn aps_set(grid: &GridDistribution, threshold: f64, randomized: bool, seed: u64) -> BTreeSet<Vec<usize>> {
    let u = randomized.then(|| uniform_from_seed(seed));
    aps_flat(grid, threshold, u)
        .into_iter()
        .map(|f| grid.geometry().unravel(f))
        .collect()
}

//! Seeded, stratified train/val/test splitting with largest-remainder
//! apportionment: per-class quotas follow class frequency, a seeded shuffle
//! picks the members, and the same (manifest, seed, counts) always produces
//! the identical tagging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, Split};
use super::{DatasetError, N_CLASSES};

/// Apportions `target` slots across classes proportionally to `weights`
/// (largest-remainder method, ties broken by ascending class id), never
/// exceeding any class's weight. Requires `target <= sum(weights)`.
fn largest_remainder(target: usize, weights: &[u64]) -> Result<Vec<usize>, DatasetError> {
    let total: u64 = weights.iter().sum();
    if target == 0 {
        return Ok(vec![0; weights.len()]);
    }
    if (target as u64) > total {
        return Err(DatasetError::InsufficientSamples {
            detail: format!("cannot draw {target} samples from {total}"),
        });
    }
    let mut alloc = vec![0usize; weights.len()];
    let mut rems: Vec<(f64, usize)> = Vec::with_capacity(weights.len());
    for (c, &w) in weights.iter().enumerate() {
        let quota = target as f64 * w as f64 / total as f64;
        let base = (quota.floor() as usize).min(w as usize);
        alloc[c] = base;
        rems.push((quota - base as f64, c));
    }
    let mut leftover = target - alloc.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, c) in &rems {
        if leftover == 0 {
            break;
        }
        if (alloc[c] as u64) < weights[c] {
            alloc[c] += 1;
            leftover -= 1;
        }
    }
    // Float rounding can leave a straggler; any class with slack absorbs it.
    for c in 0..weights.len() {
        while leftover > 0 && (alloc[c] as u64) < weights[c] {
            alloc[c] += 1;
            leftover -= 1;
        }
    }
    Ok(alloc)
}

/// Retags every sample: per class, a seeded shuffle sends the first
/// `val_quota` to val and the next `test_quota` to test; the remainder is
/// train. Quotas are proportional to class frequency (val against full
/// counts, test against what's left), so per-class totals are preserved and
/// train+val+test per class equals the curated count. Band statistics are
/// recomputed on the new train split and the seed is recorded.
pub fn split(
    manifest: &Manifest,
    seed: u64,
    n_val: usize,
    n_test: usize,
) -> Result<Manifest, DatasetError> {
    let total = manifest.samples.len();
    if n_val + n_test >= total {
        return Err(DatasetError::InsufficientSamples {
            detail: format!(
                "n_val {n_val} + n_test {n_test} must leave at least one of {total} for training"
            ),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, s) in manifest.samples.iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    let counts: Vec<u64> = by_class.iter().map(|v| v.len() as u64).collect();
    let val_quota = largest_remainder(n_val, &counts)?;
    let remaining: Vec<u64> = counts
        .iter()
        .zip(&val_quota)
        .map(|(&n, &q)| n - q as u64)
        .collect();
    let test_quota = largest_remainder(n_test, &remaining)?;
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Split::Train;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..N_CLASSES {
        let mut idxs = by_class[c].clone();
        idxs.shuffle(&mut rng);
        for &i in idxs.iter().take(val_quota[c]) {
            out.samples[i].split = Split::Val;
        }
        for &i in idxs.iter().skip(val_quota[c]).take(test_quota[c]) {
            out.samples[i].split = Split::Test;
        }
    }
    out.meta.seed = seed;
    out.refresh()?;
    Ok(out)
}

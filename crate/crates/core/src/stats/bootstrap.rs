use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_REPLICATES: usize = 2000;
pub const MIN_REPLICATES: usize = 100;

/// One-sided paired bootstrap p-value for "a is more accurate than b": the
/// fraction of case resamples in which accuracy(a) <= accuracy(b).
///
/// Cases are put in a canonical order before resampling, so the result does
/// not depend on the order the cases were listed in.
pub fn bootstrap_compare(a: &[bool], b: &[bool], replicates: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "bootstrap_compare length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("bootstrap_compare needs at least one case"));
    }
    if replicates < MIN_REPLICATES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let mut pairs: Vec<(bool, bool)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_unstable();
    // Only discordant cases move the accuracy difference.
    let delta: Vec<i32> = pairs.iter().map(|&(x, y)| i32::from(x) - i32::from(y)).collect();
    let n = delta.len();
    let not_better = (0..replicates)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = seed::rng(seed::mix(seed, r as u64));
            let diff: i64 = (0..n).map(|_| i64::from(delta[rng.random_range(0..n)])).sum();
            diff <= 0
        })
        .count();
    Ok(not_better as f64 / replicates as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_dominance_gives_zero() {
        let p = bootstrap_compare(&[true; 30], &[false; 30], 1000, 1).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn identical_lists_give_one() {
        let a: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        assert_eq!(bootstrap_compare(&a, &a, 500, 9).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(bootstrap_compare(&[true], &[true, false], 200, 0).is_err());
        assert!(bootstrap_compare(&[true], &[false], 99, 0).is_err());
        assert!(bootstrap_compare(&[], &[], 200, 0).is_err());
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KaaError, Result};

/// Largest `N` searched over all `N!` targets.
pub const EXHAUSTIVE_MAX_N: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Worst {
    pub value: f64,
    pub witness: Vec<usize>,
}

impl Worst {
    /// Larger value wins; an exact tie goes to the lexicographically smaller
    /// witness so the result is independent of the chunk schedule.
    fn merge(self, other: Worst) -> Worst {
        if other.value > self.value || (other.value == self.value && other.witness < self.witness) {
            other
        } else {
            self
        }
    }
}

/// Lexicographic successor in place; false once `v` is the last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v
        .iter()
        .rposition(|&x| x > v[i])
        .expect("pivot has a successor");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Maximum of `objective` over every permutation of `1..=n`, split into
/// chunks by the first two entries and reduced in parallel.
pub(crate) fn exhaustive_max<F>(n: usize, objective: F) -> Result<Worst>
where
    F: Fn(&[usize], &mut Vec<f64>) -> f64 + Sync,
{
    if n > EXHAUSTIVE_MAX_N {
        return Err(KaaError::Size(format!(
            "exhaustive search over {n}! targets; use sampled mode for N > {EXHAUSTIVE_MAX_N}"
        )));
    }
    if n < 2 {
        return Err(KaaError::Parameter(format!("need N >= 2, got {n}")));
    }
    let prefixes: Vec<(usize, usize)> = (1..=n)
        .flat_map(|a| (1..=n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    prefixes
        .into_par_iter()
        .map(|(a, b)| {
            let mut perm = vec![a, b];
            perm.extend((1..=n).filter(|&x| x != a && x != b));
            let mut scratch = Vec::with_capacity(n);
            let mut best = Worst {
                value: objective(&perm, &mut scratch),
                witness: perm.clone(),
            };
            while next_permutation(&mut perm[2..]) {
                let value = objective(&perm, &mut scratch);
                if value > best.value {
                    best = Worst {
                        value,
                        witness: perm.clone(),
                    };
                }
            }
            best
        })
        .reduce_with(Worst::merge)
        .ok_or_else(|| KaaError::Internal("empty permutation search".into()))
}

/// Maximum of `objective` over `samples` uniform random permutations.
pub(crate) fn sampled_max<F>(n: usize, samples: usize, seed: u64, objective: F) -> Result<Worst>
where
    F: Fn(&[usize], &mut Vec<f64>) -> f64 + Sync,
{
    if samples == 0 {
        return Err(KaaError::Parameter(
            "sampled search needs at least one sample".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..samples)
        .map(|_| {
            let mut p: Vec<usize> = (1..=n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    perms
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |scratch, p| Worst {
                value: objective(&p, scratch),
                witness: p,
            },
        )
        .reduce_with(Worst::merge)
        .ok_or_else(|| KaaError::Internal("empty permutation sample".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn next_permutation_visits_all_in_order() {
        let mut v = vec![1, 2, 3, 4];
        let mut seen = vec![v.clone()];
        while next_permutation(&mut v) {
            assert!(v > *seen.last().unwrap());
            seen.push(v.clone());
        }
        assert_eq!(seen.len(), 24);
        assert_eq!(seen.iter().collect::<HashSet<_>>().len(), 24);
    }

    #[test]
    fn exhaustive_counts_and_ties() {
        // constant objective: every permutation ties, smallest wins
        let w = exhaustive_max(5, |_, _| 1.0).unwrap();
        assert_eq!(w.witness, vec![1, 2, 3, 4, 5]);
        // a unique maximiser is found wherever it lies
        let w = exhaustive_max(6, |p, _| if p == [4, 6, 1, 5, 3, 2] { 2.0 } else { 0.0 }).unwrap();
        assert_eq!(w.witness, vec![4, 6, 1, 5, 3, 2]);
    }

    #[test]
    fn size_limits() {
        assert!(matches!(
            exhaustive_max(10, |_, _| 0.0),
            Err(KaaError::Size(_))
        ));
        assert!(sampled_max(10, 0, 1, |_, _| 0.0).is_err());
    }

    #[test]
    fn sampled_is_deterministic() {
        let f = |p: &[usize], _: &mut Vec<f64>| p[0] as f64 * 10.0 - p[1] as f64;
        let a = sampled_max(12, 300, 7, f).unwrap();
        let b = sampled_max(12, 300, 7, f).unwrap();
        assert_eq!(a, b);
    }
}

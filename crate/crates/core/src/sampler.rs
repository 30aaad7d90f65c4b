//! Quota sampling of training batches.
//!
//! Each index `m` is drawn `floor(B p_m)` times, the leftover units go to the
//! largest fractional remainders (lowest index first on ties), and the
//! resulting multiset is Fisher-Yates shuffled. Batches are reproducible for
//! a given seed: the generator is ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64`.

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub counts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Largest-remainder apportionment of `batch` units among the cells of
/// `probs`.
pub fn quota_counts(probs: &[f64], batch: usize) -> Vec<usize> {
    let exact: Vec<f64> = probs.iter().map(|&p| p.max(0.0) * batch as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // stable sort keeps lower indices first among equal remainders
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra)
    });

    let assigned: usize = counts.iter().sum();
    if assigned <= batch {
        for &i in order.iter().cycle().take(batch - assigned) {
            counts[i] += 1;
        }
    } else {
        // only reachable when probs sum to slightly more than one
        let mut excess = assigned - batch;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

/// Draws a quota batch and shuffles it with `rng`.
pub fn sample_batch<R: Rng + ?Sized>(probs: &[f64], batch: usize, rng: &mut R) -> Batch {
    let counts = quota_counts(probs, batch);
    let mut indices: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(m, &n)| std::iter::repeat_n(m, n))
        .collect();
    indices.shuffle(rng);
    Batch { indices, counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quota_examples() {
        assert_eq!(quota_counts(&[0.25; 4], 8), vec![2, 2, 2, 2]);
        assert_eq!(quota_counts(&[0.5, 0.3, 0.2], 10), vec![5, 3, 2]);
        assert_eq!(quota_counts(&[0.61, 0.29, 0.10], 10), vec![6, 3, 1]);
        assert_eq!(quota_counts(&[0.999, 0.001], 100), vec![100, 0]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(quota_counts(&[1.0 / 3.0; 3], 2), vec![1, 1, 0]);
        assert_eq!(quota_counts(&[0.25; 4], 1), vec![1, 0, 0, 0]);
    }

    #[test]
    fn batch_content_is_seed_independent() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = sample_batch(&[0.25; 4], 8, &mut rng);
            let mut sorted = b.indices.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        }
    }

    #[test]
    fn batch_is_deterministic() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let a = sample_batch(&p, 1000, &mut ChaCha8Rng::seed_from_u64(7));
        let b = sample_batch(&p, 1000, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let c = sample_batch(&p, 1000, &mut ChaCha8Rng::seed_from_u64(8));
        assert_ne!(a.indices, c.indices);
    }

    proptest! {
        #[test]
        fn quota_sum_and_deviation(weights in prop::collection::vec(0.0f64..1.0, 1..70), batch in 1usize..20000) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-9);
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let counts = quota_counts(&probs, batch);
            prop_assert_eq!(counts.iter().sum::<usize>(), batch);
            for (c, p) in counts.iter().zip(&probs) {
                prop_assert!((*c as f64 - batch as f64 * p).abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn shuffle_preserves_counts(seed in any::<u64>(), batch in 1usize..500) {
            let probs = [0.05, 0.15, 0.3, 0.5];
            let b = sample_batch(&probs, batch, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut seen = vec![0usize; 4];
            for &i in &b.indices {
                seen[i] += 1;
            }
            prop_assert_eq!(seen, b.counts);
        }
    }
}

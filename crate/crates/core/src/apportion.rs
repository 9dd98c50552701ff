//! Integer apportionment: exact counts from shares, and an interleaving
//! whose every prefix stays within one unit of each share.

/// Largest-remainder rounding of `total * shares[i]`. Ties in the remainder
/// go to the lower index. Shares need not be normalized.
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let quotas: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| rem(b).partial_cmp(&rem(a)).unwrap().then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Orders `counts[i]` copies of each index `i` so that after any prefix of
/// length `t`, index `i` has been emitted within one of `t * counts[i] / T`
/// times (Tijdeman's chairman assignment).
pub fn interleave(counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let active = counts.iter().filter(|&&c| c > 0).count();
    // Slack C = 1 / (2n - 2) is carried as the integer denominator `d`.
    let d = (2 * active.saturating_sub(1)).max(1) as u128;
    let t_big = total as u128;
    let mut done = vec![0usize; counts.len()];
    let mut out = Vec::with_capacity(total);
    for t in 1..=total as u128 {
        let mut best: Option<usize> = None;
        let mut fallback: Option<usize> = None;
        for (i, &c) in counts.iter().enumerate() {
            if done[i] >= c {
                continue;
            }
            let (a, c) = (done[i] as u128, c as u128);
            // deadline_i = (a + 1 - C) * T / c, compared by cross-multiplication
            let key = |j: usize| ((done[j] as u128 + 1) * d - 1, counts[j] as u128);
            let earlier = |j: Option<usize>| match j {
                None => true,
                Some(j) => {
                    let (nj, cj) = key(j);
                    let (ni, ci) = key(i);
                    ni * cj < nj * ci
                }
            };
            if earlier(fallback) {
                fallback = Some(i);
            }
            let eligible = (t * c).saturating_sub(a * t_big) * d >= t_big;
            if eligible && earlier(best) {
                best = Some(i);
            }
        }
        let pick = best.or(fallback).expect("remaining slots");
        done[pick] += 1;
        out.push(pick);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn remainder_examples() {
        assert_eq!(largest_remainder(100, &[0.75, 0.10, 0.15]), vec![75, 10, 15]);
        assert_eq!(largest_remainder(20, &[0.3, 0.3, 0.15, 0.15, 0.05, 0.05]), vec![6, 6, 3, 3, 1, 1]);
        let c = largest_remainder(101, &[0.75, 0.10, 0.15]);
        assert_eq!(c.iter().sum::<usize>(), 101);
        assert_eq!(largest_remainder(0, &[1.0, 2.0]), vec![0, 0]);
        assert_eq!(largest_remainder(3, &[1.0, 1.0]), vec![2, 1]);
    }

    #[test]
    fn interleave_small() {
        assert_eq!(interleave(&[1, 1]), vec![0, 1]);
        assert_eq!(interleave(&[3]), vec![0, 0, 0]);
        assert_eq!(interleave(&[2, 0, 1]).len(), 3);
    }

    fn max_deviation(counts: &[usize]) -> f64 {
        let seq = interleave(counts);
        let total = seq.len() as f64;
        let mut done = vec![0usize; counts.len()];
        let mut worst = 0f64;
        for (t, &i) in seq.iter().enumerate() {
            done[i] += 1;
            for (k, &c) in counts.iter().enumerate() {
                let target = (t + 1) as f64 * c as f64 / total;
                worst = worst.max((done[k] as f64 - target).abs());
            }
        }
        assert_eq!(done, counts);
        worst
    }

    proptest! {
        #[test]
        fn prefixes_stay_within_one(counts in prop::collection::vec(0usize..40, 1..7)) {
            prop_assume!(counts.iter().sum::<usize>() > 0);
            prop_assert!(max_deviation(&counts) < 1.0 + 1e-9);
        }

        #[test]
        fn remainder_sums_to_total(total in 0usize..10_000, shares in prop::collection::vec(0.01f64..1.0, 1..8)) {
            let c = largest_remainder(total, &shares);
            prop_assert_eq!(c.iter().sum::<usize>(), total);
            let sum: f64 = shares.iter().sum();
            for (k, s) in c.iter().zip(&shares) {
                prop_assert!((*k as f64 - total as f64 * s / sum).abs() < 1.0);
            }
        }
    }
}

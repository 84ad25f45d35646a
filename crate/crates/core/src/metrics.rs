//! Team consistency (pairwise Kendall correlation of per-episode payoffs)
//! and moving-average smoothing for reported curves.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

fn sgn(a: f64, b: f64) -> f64 {
    match a.partial_cmp(&b) {
        Some(Ordering::Greater) => 1.0,
        Some(Ordering::Less) => -1.0,
        // Ties and incomparable values (NaN, ∞ − ∞) contribute nothing.
        _ => 0.0,
    }
}

/// κ_ij = 2/(ℓ(ℓ−1)) Σ_{m<n} sgn(P_im − P_in)·sgn(P_jm − P_jn).
pub fn kendall_pair(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(domain(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let l = a.len();
    if l < 2 {
        return Err(domain("kendall correlation needs at least two episodes"));
    }
    let mut acc = 0.0;
    for m in 0..l {
        for n in m + 1..l {
            acc += sgn(a[m], a[n]) * sgn(b[m], b[n]);
        }
    }
    Ok(2.0 * acc / (l * (l - 1)) as f64)
}

/// Normalisation of the team index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyDivisor {
    /// (1/M) Σ_{i<j} κ_ij, as the index is usually written.
    M,
    /// Mean over the C(M, 2) pairs.
    Pairs,
}

/// Pairwise coefficients in (0,1), (0,2), …, (1,2), … order plus the team index.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    pub kappa: f64,
    pub pairs: Vec<((usize, usize), f64)>,
}

pub fn consistency(series: &[Vec<f64>], divisor: ConsistencyDivisor) -> Result<Consistency> {
    let m = series.len();
    if m < 2 {
        return Err(domain("consistency needs at least two pursuer series"));
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            pairs.push(((i, j), kendall_pair(&series[i], &series[j])?));
        }
    }
    let total: f64 = pairs.iter().map(|(_, k)| k).sum();
    let kappa = match divisor {
        ConsistencyDivisor::M => total / m as f64,
        ConsistencyDivisor::Pairs => total / pairs.len() as f64,
    };
    Ok(Consistency { kappa, pairs })
}

/// κ = (1/M) Σ_{i<j} κ_ij.
pub fn consistency_index(series: &[Vec<f64>]) -> Result<f64> {
    Ok(consistency(series, ConsistencyDivisor::M)?.kappa)
}

/// κ over sliding windows of episodes; entry k covers episodes
/// (end − window, end] with end = window + k.
pub fn windowed_consistency(series: &[Vec<f64>], window: usize, divisor: ConsistencyDivisor) -> Result<Vec<(usize, Consistency)>> {
    if window < 2 {
        return Err(domain("consistency window must cover at least two episodes"));
    }
    let len = series.first().map_or(0, Vec::len);
    if series.iter().any(|s| s.len() != len) {
        return Err(domain("pursuer series have different lengths"));
    }
    let mut out = Vec::new();
    for end in window..=len {
        let slice: Vec<Vec<f64>> = series.iter().map(|s| s[end - window..end].to_vec()).collect();
        out.push((end, consistency(&slice, divisor)?));
    }
    Ok(out)
}

/// Centered moving average; windows shrink symmetrically-truncated at the
/// edges so every output averages only existing samples.
pub fn smooth_curve(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(domain(format!("smoothing window must be odd and positive, got {window}")));
    }
    let half = window / 2;
    let n = values.len();
    let mut prefix = vec![0.0; n + 1];
    for (k, v) in values.iter().enumerate() {
        prefix[k + 1] = prefix[k] + v;
    }
    Ok((0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            if values[lo..hi].iter().all(|&v| v == values[k]) {
                // Keeps constant stretches exact despite prefix-sum rounding.
                values[k]
            } else {
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            }
        })
        .collect())
}

/// First index at which `curve` reaches `start + fraction·(final − start)`
/// (in the direction of change), with start and final taken from the ends.
pub fn episodes_to_fraction(curve: &[f64], fraction: f64) -> Option<usize> {
    let (&first, &last) = (curve.first()?, curve.last()?);
    let threshold = first + fraction * (last - first);
    if last >= first {
        curve.iter().position(|&v| v >= threshold)
    } else {
        curve.iter().position(|&v| v <= threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_pair(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_pair(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(kendall_pair(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), -1.0 / 3.0);
        assert!(kendall_pair(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_pair(&[1.0], &[1.0]).is_err());
        assert_eq!(kendall_pair(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn consistency_examples() {
        let s = vec![vec![1.0, 2.0, 3.0]; 3];
        assert_eq!(consistency_index(&s).unwrap(), 1.0);
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, 2.0, 4.0, 3.0];
        assert_abs_diff_eq!(kendall_pair(&a, &b).unwrap(), 2.0 / 3.0);
        let c = vec![2.0, 1.0, 4.0, 3.0];
        assert_abs_diff_eq!(kendall_pair(&a, &c).unwrap(), 1.0 / 3.0);
        let d = vec![1.0, 3.0, 2.0, 4.0, 5.0];
        let e = vec![1.0, 2.0, 3.0, 5.0, 4.0];
        // ℓ = 5, 10 pairs, 2 discordant → 0.6.
        assert_abs_diff_eq!(kendall_pair(&d, &e).unwrap(), 0.6, epsilon = 1e-15);
        for m in 2..7 {
            let same = vec![vec![3.0, 1.0, 2.0, 5.0]; m];
            let pairs = (m * (m - 1) / 2) as f64;
            assert_abs_diff_eq!(consistency_index(&same).unwrap(), pairs / m as f64);
            assert_abs_diff_eq!(consistency(&same, ConsistencyDivisor::Pairs).unwrap().kappa, 1.0);
        }
        assert!(consistency_index(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn m2_single_pair_half() {
        let p = vec![0.0, 1.0, 2.0, 3.0];
        let q = vec![1.0, 0.0, 2.0, 2.0];
        // Pair (0,1) discordant, (2,3) tied, the other four concordant: (4 − 1)/6.
        assert_abs_diff_eq!(kendall_pair(&p, &q).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(consistency_index(&[p, q]).unwrap(), 0.25, epsilon = 1e-15);
    }

    fn brute_kendall(a: &[f64], b: &[f64]) -> f64 {
        let l = a.len();
        let mut num = 0i64;
        for m in 0..l {
            for n in 0..l {
                if m < n {
                    let sa = (a[m] - a[n]).signum() as i64 * i64::from(a[m] != a[n]);
                    let sb = (b[m] - b[n]).signum() as i64 * i64::from(b[m] != b[n]);
                    num += sa * sb;
                }
            }
        }
        2.0 * num as f64 / (l * (l - 1)) as f64
    }

    #[test]
    fn kendall_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let l = rng.gen_range(2..=50);
            // Small integer range forces ties.
            let a: Vec<f64> = (0..l).map(|_| f64::from(rng.gen_range(0..10))).collect();
            let b: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(kendall_pair(&a, &b).unwrap(), brute_kendall(&a, &b));
        }
    }

    #[test]
    fn smoothing_examples() {
        let v = [4.0, -1.0, 7.5, 2.0];
        assert_eq!(smooth_curve(&v, 1).unwrap(), v.to_vec());
        assert_eq!(smooth_curve(&[0.0, 3.0, 0.0], 3).unwrap(), vec![1.5, 1.0, 1.5]);
        let c = vec![0.1; 40];
        for w in [1, 3, 5, 51, 101] {
            assert_eq!(smooth_curve(&c, w).unwrap(), c);
        }
        assert!(smooth_curve(&v, 0).is_err());
        assert!(smooth_curve(&v, 4).is_err());
        assert!(smooth_curve(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn windowed_and_fraction() {
        let s = vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]];
        let w = windowed_consistency(&s, 3, ConsistencyDivisor::M).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].0, 3);
        assert_eq!(w[1].1.kappa, 0.5);
        assert_eq!(episodes_to_fraction(&[0.0, 0.5, 0.95, 1.0], 0.9), Some(2));
        assert_eq!(episodes_to_fraction(&[1.0, 0.0], 0.9), Some(1));
        assert_eq!(episodes_to_fraction(&[], 0.9), None);
    }

    proptest::proptest! {
        #[test]
        fn kendall_symmetric_and_rank_invariant(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40),
            shift in -50.0f64..50.0, scale in 0.01f64..10.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let k = kendall_pair(&a, &b).unwrap();
            proptest::prop_assert_eq!(k, kendall_pair(&b, &a).unwrap());
            let ta: Vec<f64> = a.iter().map(|x| (x * scale + shift).exp().ln_1p()).collect();
            let tb: Vec<f64> = b.iter().map(|x| x.powi(3) + shift).collect();
            // Monotone maps can merge values only through rounding; compare on untied data.
            let untied = |v: &[f64]| { let mut s = v.to_vec(); s.sort_by(f64::total_cmp); s.windows(2).all(|w| w[0] != w[1]) };
            if untied(&ta) && untied(&tb) && untied(&a) && untied(&b) {
                proptest::prop_assert_eq!(k, kendall_pair(&ta, &tb).unwrap());
            }
        }

        #[test]
        fn consistency_invariant_under_relabeling(
            raw in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 6), 2..5),
            rot in 0usize..4,
        ) {
            let mut perm = raw.clone();
            let len = perm.len();
            perm.rotate_left(rot % len);
            let a = consistency_index(&raw).unwrap();
            let b = consistency_index(&perm).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

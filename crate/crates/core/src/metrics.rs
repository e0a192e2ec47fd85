//! Rank-correlation and regret metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 items, got {0}")]
    TooShort(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("all values of {0} are tied; tau-b is undefined")]
    AllTied(&'static str),
    #[error("k = {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(MetricError::TooShort(pred.len()));
    }
    if !pred.iter().all(|v| v.is_finite()) {
        return Err(MetricError::NonFinite("predictions"));
    }
    if !truth.iter().all(|v| v.is_finite()) {
        return Err(MetricError::NonFinite("truth"));
    }
    Ok(())
}

fn tau_b(n0: u64, n1: u64, n2: u64, concordant_minus_discordant: i64) -> Result<f64, MetricError> {
    if n1 == n0 {
        return Err(MetricError::AllTied("predictions"));
    }
    if n2 == n0 {
        return Err(MetricError::AllTied("truth"));
    }
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok((concordant_minus_discordant as f64 / denom).clamp(-1.0, 1.0))
}

fn tied_pairs_in_runs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` with a stable merge sort and returns the number of inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let n = pred.len();
    let mut pairs: Vec<(f64, f64)> = pred.iter().copied().zip(truth.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs_in_runs(&xs);
    let n3 = tied_pairs_in_runs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tied_pairs_in_runs(&ys);

    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    tau_b(n0, n1, n2, s)
}

/// Kendall tau-b by direct pair enumeration. Test oracle for [`kendall_tau`].
pub fn kendall_tau_bruteforce(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let n = pred.len();
    let (mut s, mut n1, mut n2) = (0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (pred[i] - pred[j]).signum() as i64 * (pred[i] != pred[j]) as i64;
            let b = (truth[i] - truth[j]).signum() as i64 * (truth[i] != truth[j]) as i64;
            s += a * b;
            n1 += (a == 0) as u64;
            n2 += (b == 0) as u64;
        }
    }
    tau_b((n as u64) * (n as u64 - 1) / 2, n1, n2, s)
}

/// Best true accuracy minus the best true accuracy among the `k`
/// highest-predicted items. Ties in `pred` break toward lower index.
pub fn topk_regret(pred: &[f64], truth: &[f64], k: usize) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let n = pred.len();
    if k == 0 || k > n {
        return Err(MetricError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
    let best = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let picked = order[..k].iter().map(|&i| truth[i]).fold(f64::NEG_INFINITY, f64::max);
    Ok(best - picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub n: usize,
    pub ktau: f64,
    /// `(k, regret)` pairs.
    pub regrets: Vec<(usize, f64)>,
}

impl RankReport {
    pub fn compute(pred: &[f64], truth: &[f64], ks: &[usize]) -> Result<Self, MetricError> {
        let ktau = kendall_tau(pred, truth)?;
        let regrets = ks
            .iter()
            .filter(|&&k| k <= pred.len())
            .map(|&k| topk_regret(pred, truth, k).map(|r| (k, r)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            n: pred.len(),
            ktau,
            regrets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_reversed() {
        let x = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        let r: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&r, &x).unwrap(), -1.0);
    }

    #[test]
    fn all_tied_is_an_error() {
        assert_eq!(kendall_tau(&[1.0, 2.0], &[3.0, 3.0]), Err(MetricError::AllTied("truth")));
        assert_eq!(kendall_tau_bruteforce(&[1.0, 1.0], &[3.0, 4.0]), Err(MetricError::AllTied("predictions")));
    }

    #[test]
    fn known_tau_b_with_ties() {
        // Pairs: (1,1),(2,2),(2,3),(3,3). Concordant 4, discordant 0, one tie
        // in each variable; tau_b = 4 / sqrt(5 * 5).
        let t = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 3.0]).unwrap();
        assert!((t - 0.8).abs() < 1e-15);
    }

    #[test]
    fn regret_examples() {
        let truth = [0.2, 0.9, 0.5];
        assert_eq!(topk_regret(&[0.0, 0.0, 0.0], &truth, 3).unwrap(), 0.0);
        assert_eq!(topk_regret(&truth, &truth, 1).unwrap(), 0.0);
        assert!((topk_regret(&[1.0, 0.0, 0.5], &truth, 1).unwrap() - 0.7).abs() < 1e-12);
        assert!(topk_regret(&truth, &truth, 0).is_err());
    }

    fn tied_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u8..6).prop_map(f64::from), len)
    }

    proptest! {
        #[test]
        fn matches_bruteforce(x in prop::collection::vec(-1e3f64..1e3, 2..60), seed in any::<u64>()) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 7.0 + (seed.wrapping_mul(i as u64 + 1) % 97) as f64).sin()).collect();
            match (kendall_tau(&x, &y), kendall_tau_bruteforce(&x, &y)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn matches_bruteforce_with_ties((x, y) in (2usize..40).prop_flat_map(|n| (tied_vec(n), tied_vec(n)))) {
            match (kendall_tau(&x, &y), kendall_tau_bruteforce(&x, &y)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn monotone_transform_invariant(x in prop::collection::vec(-5f64..5.0, 2..50), y in prop::collection::vec(-5f64..5.0, 50)) {
            let y = &y[..x.len()];
            if let Ok(t) = kendall_tau(&x, y) {
                let fx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
                let fy: Vec<f64> = y.iter().map(|v| v * v * v).collect();
                prop_assert_eq!(kendall_tau(&fx, &fy).unwrap(), t);
            }
        }

        #[test]
        fn antisymmetric_without_ties(x in prop::collection::hash_set(-1000i32..1000, 2..40)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = x.iter().map(|v| (v * 0.37).sin()).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                prop_assert!((kendall_tau(&neg, &y).unwrap() + t).abs() < 1e-12);
            }
        }
    }
}

//! Paired significance tests: exact McNemar and paired bootstrap.

use alloc::vec::Vec;

use rand::Rng;

use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("paired outcome table is empty")]
    EmptyTable,
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} paired items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("resample count must be positive")]
    NoResamples,
}

/// 2x2 table of paired binary outcomes for methods A and B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairedOutcomes {
    /// both wrong
    pub n00: u64,
    /// A wrong, B right
    pub n01: u64,
    /// A right, B wrong
    pub n10: u64,
    /// both right
    pub n11: u64,
}

impl PairedOutcomes {
    pub fn new(n00: u64, n01: u64, n10: u64, n11: u64) -> Result<Self, StatsError> {
        if n00 + n01 + n10 + n11 == 0 {
            return Err(StatsError::EmptyTable);
        }
        Ok(PairedOutcomes { n00, n01, n10, n11 })
    }

    pub fn from_outcomes(a: &[bool], b: &[bool]) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        let mut t = [0u64; 4];
        for (&x, &y) in a.iter().zip(b) {
            t[usize::from(x) * 2 + usize::from(y)] += 1;
        }
        PairedOutcomes::new(t[0], t[1], t[2], t[3])
    }

    /// Discordant counts `(b, c) = (n01, n10)`.
    pub fn discordant(&self) -> (u64, u64) {
        (self.n01, self.n10)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// Exact two-sided McNemar p-value,
/// `min(1, 2 * sum_{k<=min(b,c)} C(b+c, k) / 2^(b+c))`.
pub fn mcnemar_exact(po: &PairedOutcomes) -> f64 {
    let (b, c) = po.discordant();
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k_max = b.min(c);
    // log pmf of Binomial(n, 1/2), accumulated term by term
    let mut log_term = -(n as f64) * core::f64::consts::LN_2;
    let mut log_sum = f64::NEG_INFINITY;
    for k in 0..=k_max {
        log_sum = log_add(log_sum, log_term);
        log_term += libm::log((n - k) as f64) - libm::log((k + 1) as f64);
    }
    (2.0 * libm::exp(log_sum)).min(1.0)
}

/// Chi-square McNemar with continuity correction, `(|b - c| - 1)^2 / (b + c)`
/// on one degree of freedom. Reported next to the exact test for
/// cross-checking.
pub fn mcnemar_chi2(po: &PairedOutcomes) -> f64 {
    let (b, c) = po.discordant();
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let chi2 = diff * diff / n as f64;
    libm::erfc(libm::sqrt(chi2 / 2.0)).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapResult {
    /// `mean(b) - mean(a)` on the original sample.
    pub observed: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Paired bootstrap of `mean(b) - mean(a)` over item indices.
///
/// Resample `r` draws its indices from a generator seeded with
/// `derive_seed_indexed(seed, r)`, so results do not depend on evaluation
/// order. The p-value is twice the fraction of resamples whose statistic
/// does not share the observed sign (zero counts as opposing), capped at 1;
/// a zero observed delta gives p = 1. The interval is the 2.5/97.5
/// percentile range.
pub fn bootstrap_delta(
    a: &[f64],
    b: &[f64],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: a.len(),
        });
    }
    if n_resamples == 0 {
        return Err(StatsError::NoResamples);
    }
    let n = a.len();
    let observed = mean(b) - mean(a);

    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|r| {
            let mut g = rng::stream(rng::derive_seed_indexed(seed, r as u64));
            let mut sum = 0.0;
            for _ in 0..n {
                let i = g.random_range(0..n);
                sum += b[i] - a[i];
            }
            sum / n as f64
        })
        .collect();

    let p_value = if observed == 0.0 {
        1.0
    } else {
        let opposing = stats
            .iter()
            .filter(|&&s| if observed > 0.0 { s <= 0.0 } else { s >= 0.0 })
            .count();
        (2.0 * opposing as f64 / n_resamples as f64).min(1.0)
    };

    stats.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        observed,
        p_value,
        ci_low: percentile(&stats, 0.025),
        ci_high: percentile(&stats, 0.975),
        n_resamples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn binom(n: u64, k: u64) -> u128 {
        (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
    }

    /// Exact rational evaluation for small n.
    fn exact_oracle(b: u64, c: u64) -> f64 {
        let n = b + c;
        let tail: u128 = (0..=b.min(c)).map(|k| binom(n, k)).sum();
        (2.0 * tail as f64 / (1u128 << n) as f64).min(1.0)
    }

    fn po(b: u64, c: u64) -> PairedOutcomes {
        PairedOutcomes::new(3, b, c, 7).unwrap()
    }

    #[test]
    fn mcnemar_examples() {
        assert_eq!(binom(15, 5), 3003);
        assert_eq!((0..=5).map(|k| binom(15, k)).sum::<u128>(), 4944);
        assert_abs_diff_eq!(
            mcnemar_exact(&po(10, 5)),
            2.0 * 4944.0 / 32768.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(mcnemar_exact(&po(10, 5)), 0.30176, epsilon = 1e-5);
        assert_eq!(mcnemar_exact(&po(7, 7)), 1.0);
        assert_eq!(mcnemar_exact(&po(0, 0)), 1.0);
        assert_eq!(mcnemar_chi2(&po(0, 0)), 1.0);
    }

    #[test]
    fn mcnemar_matches_enumeration() {
        for b in 0..40 {
            for c in 0..40 {
                assert_abs_diff_eq!(
                    mcnemar_exact(&po(b, c)),
                    exact_oracle(b, c),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn mcnemar_large_counts_stay_finite() {
        let p = mcnemar_exact(&po(4000, 3900));
        assert!(p > 0.0 && p < 1.0);
        let p = mcnemar_exact(&po(5000, 100));
        assert!((0.0..1e-100).contains(&p));
    }

    #[test]
    fn chi2_close_to_exact_for_large_n() {
        let exact = mcnemar_exact(&po(130, 100));
        let chi = mcnemar_chi2(&po(130, 100));
        assert!((exact - chi).abs() < 0.01, "{exact} vs {chi}");
    }

    #[test]
    fn table_from_outcomes() {
        let a = [true, true, false, false, true];
        let b = [true, false, true, false, false];
        let t = PairedOutcomes::from_outcomes(&a, &b).unwrap();
        assert_eq!((t.n00, t.n01, t.n10, t.n11), (1, 1, 2, 1));
        assert_eq!(PairedOutcomes::new(0, 0, 0, 0), Err(StatsError::EmptyTable));
    }

    #[test]
    fn bootstrap_identical_samples() {
        let a: Vec<f64> = (0..50).map(|i| (i % 3) as f64 / 2.0).collect();
        let r = bootstrap_delta(&a, &a, 2000, 1).unwrap();
        assert_eq!(r.observed, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_full_separation() {
        let a = vec![0.0; 100];
        let b = vec![1.0; 100];
        let r = bootstrap_delta(&a, &b, 1000, 9).unwrap();
        assert_eq!(r.observed, 1.0);
        assert_eq!((r.ci_low, r.ci_high), (1.0, 1.0));
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn bootstrap_negative_delta() {
        let a = vec![1.0; 30];
        let mut b = vec![0.0; 30];
        b[0] = 1.0;
        let r = bootstrap_delta(&a, &b, 500, 4).unwrap();
        assert!(r.observed < 0.0);
        assert!(r.p_value < 0.01);
        assert!(r.ci_high < 0.0);
    }

    #[test]
    fn bootstrap_errors() {
        assert_eq!(
            bootstrap_delta(&[1.0, 2.0], &[1.0], 10, 0),
            Err(StatsError::LengthMismatch(2, 1))
        );
        assert!(matches!(
            bootstrap_delta(&[1.0], &[1.0], 10, 0),
            Err(StatsError::TooFew { .. })
        ));
        assert_eq!(
            bootstrap_delta(&[1.0, 0.0], &[1.0, 0.0], 0, 0),
            Err(StatsError::NoResamples)
        );
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&xs, 0.5), 2.0);
        assert_eq!(percentile(&xs, 0.125), 0.5);
        assert_eq!(percentile(&xs, 1.0), 4.0);
    }

    proptest! {
        #[test]
        fn mcnemar_symmetric_and_concordant_free(
            b in 0u64..200, c in 0u64..200, n00 in 0u64..50, n11 in 1u64..50,
        ) {
            let p = mcnemar_exact(&PairedOutcomes::new(n00, b, c, n11).unwrap());
            prop_assert_eq!(p, mcnemar_exact(&PairedOutcomes::new(n00, c, b, n11).unwrap()));
            prop_assert_eq!(p, mcnemar_exact(&PairedOutcomes::new(0, b, c, 1).unwrap()));
            prop_assert!((0.0..=1.0).contains(&p));
        }

        #[test]
        fn mcnemar_monotone_in_imbalance(n in 1u64..300) {
            let mut last = f64::INFINITY;
            // b - c grows as b goes from n/2 up to n
            for b in n.div_ceil(2)..=n {
                let p = mcnemar_exact(&po(b, n - b));
                prop_assert!(p <= last + 1e-15);
                last = p;
            }
        }

        #[test]
        fn bootstrap_is_deterministic(
            a in proptest::collection::vec(0.0f64..1.0, 2..40),
            seed in any::<u64>(),
        ) {
            let b: Vec<f64> = a.iter().map(|x| 1.0 - x).collect();
            let r1 = bootstrap_delta(&a, &b, 200, seed).unwrap();
            let r2 = bootstrap_delta(&a, &b, 200, seed).unwrap();
            prop_assert_eq!(r1.observed.to_bits(), r2.observed.to_bits());
            prop_assert_eq!(r1.p_value.to_bits(), r2.p_value.to_bits());
            prop_assert_eq!(r1.ci_low.to_bits(), r2.ci_low.to_bits());
            prop_assert_eq!(r1.ci_high.to_bits(), r2.ci_high.to_bits());
            prop_assert!(r1.ci_low <= r1.ci_high);
        }
    }
}

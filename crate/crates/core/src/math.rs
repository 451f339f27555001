//! Scalar special functions shared by the outage and allocation code.
//!
//! Everything here reduces to the Erlang(k, 1) distribution: the squared
//! effective channel gain seen by a ZF layer with diversity order `k` is a
//! sum of `k` unit-mean exponentials, so its CDF
//!
//! ```text
//!     F_k(x) = 1 - e^{-x} * sum_{l=0}^{k-1} x^l / l!
//! ```
//!
//! is the outage probability once `x` is the normalised decoding threshold.
//! Naive evaluation of `1 - e^{-x} * sum` cancels catastrophically for
//! `x << k` (the regime every high-SNR experiment lives in), so the CDF is
//! evaluated from the complementary series in that branch instead.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Relative truncation target for series evaluation.
const SERIES_EPS: f64 = 1e-17;

const LN_FACTORIAL_TABLE_LEN: usize = 257;

fn ln_factorial_table() -> &'static [f64; LN_FACTORIAL_TABLE_LEN] {
    static TABLE: OnceLock<[f64; LN_FACTORIAL_TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; LN_FACTORIAL_TABLE_LEN];
        for k in 2..LN_FACTORIAL_TABLE_LEN {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    })
}

/// `ln(k!)`, exact cumulative sum for the stream counts this crate meets.
pub fn ln_factorial(k: usize) -> f64 {
    if k < LN_FACTORIAL_TABLE_LEN {
        return ln_factorial_table()[k];
    }
    let mut acc = ln_factorial_table()[LN_FACTORIAL_TABLE_LEN - 1];
    for j in LN_FACTORIAL_TABLE_LEN..=k {
        acc += (j as f64).ln();
    }
    acc
}

/// CDF of a unit-rate Erlang with shape `k` — equivalently the outage
/// probability of a `k`-branch MRC link at normalised threshold `x`.
///
/// Two evaluation branches keep every digit meaningful:
/// * `x < k + 1`: complementary series
///   `e^{-x} x^k / k! * (1 + x/(k+1) + x^2/((k+1)(k+2)) + ...)`,
///   cancellation-free and accurate down to subnormal results;
/// * `x >= k + 1`: direct sum with per-term log-space evaluation.
pub fn mrc_outage_cdf(k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("diversity order must be positive".into()));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("threshold must be finite and nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    if x < kf + 1.0 {
        // Complementary series; ratio of consecutive terms is x/(k+1+j) < 1.
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut j = 1usize;
        loop {
            term *= x / (kf + j as f64);
            sum += term;
            if term <= SERIES_EPS * sum {
                break;
            }
            j += 1;
        }
        let ln_prefactor = kf * x.ln() - x - ln_factorial(k);
        Ok((ln_prefactor + sum.ln()).exp())
    } else {
        let mut survival = 0.0;
        for l in 0..k {
            survival += ((l as f64) * x.ln() - x - ln_factorial(l)).exp();
        }
        Ok(1.0 - survival)
    }
}

/// Density of the unit-rate Erlang with shape `k`: `x^{k-1} e^{-x} / (k-1)!`.
pub fn erlang_pdf(k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("diversity order must be positive".into()));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("threshold must be finite and nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok(if k == 1 { 1.0 } else { 0.0 });
    }
    Ok((((k - 1) as f64) * x.ln() - x - ln_factorial(k - 1)).exp())
}

/// `ln(e^r - 1)` without overflow for large `r` or cancellation for small.
pub fn ln_em1(r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("ln(e^r - 1) needs r > 0, got {r}")));
    }
    if r > 0.5 {
        // ln(e^r - 1) = r + ln(1 - e^{-r})
        Ok(r + (-(-r).exp()).ln_1p())
    } else {
        Ok(r.exp_m1().ln())
    }
}

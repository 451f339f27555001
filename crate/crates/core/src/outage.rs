//! Per-stream and system outage for a given power/rate allocation.
//!
//! Stream `i` (1-based, decoding order) of an `n x m` ZF-SIC receiver sees
//! an Erlang(`n - m + i`, 1) effective gain `g_i`, so with average power
//! `alpha_i` (normalised to `sum alpha_i = m`) and rate `R_i` nats it is in
//! outage when `ln(1 + alpha_i g_i gamma_eff) < R_i`, i.e. with probability
//!
//! ```text
//!     P_i = F_{k_i}( (e^{R_i} - 1) / (alpha_i gamma_eff) ).
//! ```
//!
//! Error propagation in the cancellation chain makes a single stream outage
//! fatal for the frame, hence the system outage `1 - prod (1 - P_i)` and
//! its first-order proxy `sum x_i^{k_i} / k_i!` used by the closed-form
//! allocators.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::math::{erlang_pdf, ln_em1, ln_factorial, mrc_outage_cdf};

/// A per-stream average power and rate assignment.
///
/// Powers follow the normalisation `sum alpha_i = m` for the primal
/// problems (the duality module relaxes the total); rates are in nats per
/// channel use.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub powers: Vec<f64>,
    pub rates: Vec<f64>,
}

impl Allocation {
    pub fn new(powers: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if powers.is_empty() || powers.len() != rates.len() {
            return Err(Error::Dimension(format!(
                "need equal, nonzero stream counts: {} powers vs {} rates",
                powers.len(),
                rates.len()
            )));
        }
        for (i, &a) in powers.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Domain(format!("power {} of stream {} invalid", a, i + 1)));
            }
        }
        for (i, &r) in rates.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::Domain(format!("rate {} of stream {} invalid", r, i + 1)));
            }
        }
        Ok(Self { powers, rates })
    }

    /// Equal power `alpha_i = 1`, equal rate on all `m` streams.
    pub fn uniform(m: usize, rate: f64) -> Result<Self> {
        Self::new(vec![1.0; m], vec![rate; m])
    }

    pub fn stream_count(&self) -> usize {
        self.powers.len()
    }

    /// Number of streams actually carrying rate.
    pub fn active_count(&self) -> usize {
        self.rates.iter().filter(|&&r| r > 0.0).count()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// Normalised decoding threshold `x_i = (e^{R_i} - 1) / (alpha_i gamma_eff)`.
///
/// Infinite when the stream carries rate on zero power.
fn threshold(cfg: &SystemConfig, alpha: f64, rate: f64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    rate.exp_m1() / (alpha * cfg.gamma0_eff())
}

/// Exact outage probability of stream `i` (1-based).
pub fn stream_outage_exact(cfg: &SystemConfig, i: usize, alpha: f64, rate: f64) -> Result<f64> {
    check_stream(cfg, i, alpha, rate)?;
    let x = threshold(cfg, alpha, rate);
    if !x.is_finite() {
        return Ok(1.0);
    }
    mrc_outage_cdf(cfg.diversity_order(i), x)
}

/// First-order (high-SNR) outage of stream `i`: `x_i^{k_i} / k_i!`.
///
/// Unlike the exact probability this is not capped at 1 — the closed-form
/// allocators rely on its polynomial shape — and it is `+inf` for a stream
/// carrying rate on zero power.
pub fn stream_outage_approx(cfg: &SystemConfig, i: usize, alpha: f64, rate: f64) -> Result<f64> {
    check_stream(cfg, i, alpha, rate)?;
    let x = threshold(cfg, alpha, rate);
    if x == 0.0 {
        return Ok(0.0);
    }
    if !x.is_finite() {
        return Ok(f64::INFINITY);
    }
    let k = cfg.diversity_order(i);
    Ok((k as f64 * x.ln() - ln_factorial(k)).exp())
}

/// Derivative of the first-order stream outage with respect to its rate:
/// `e^R (e^R - 1)^{k-1} / ((alpha gamma_eff)^k (k-1)!)`.
///
/// This is the marginal outage cost of loading one more nat onto the
/// stream, the quantity the rate water-filling equalises.
pub fn stream_rate_derivative(cfg: &SystemConfig, i: usize, alpha: f64, rate: f64) -> Result<f64> {
    check_stream(cfg, i, alpha, rate)?;
    if !(alpha > 0.0) {
        return Err(Error::Domain("rate derivative needs positive power".into()));
    }
    let k = cfg.diversity_order(i);
    let ag = alpha * cfg.gamma0_eff();
    if rate == 0.0 {
        // (e^R - 1)^{k-1} vanishes at R = 0 unless k = 1.
        return Ok(if k == 1 { 1.0 / ag } else { 0.0 });
    }
    let ln_d = rate + (k as f64 - 1.0) * ln_em1(rate)? - k as f64 * ag.ln() - ln_factorial(k - 1);
    Ok(ln_d.exp())
}

fn check_stream(cfg: &SystemConfig, i: usize, alpha: f64, rate: f64) -> Result<()> {
    if i < 1 || i > cfg.m {
        return Err(Error::Dimension(format!("stream index {i} outside 1..={}", cfg.m)));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Domain(format!("power must be finite and nonnegative, got {alpha}")));
    }
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::Domain(format!("rate must be finite and nonnegative, got {rate}")));
    }
    Ok(())
}

/// Outage summary for one allocation at one operating point.
#[derive(Debug, Clone)]
pub struct OutageReport {
    /// Exact per-stream outage probabilities, decoding order.
    pub per_stream: Vec<f64>,
    /// Exact system outage `1 - prod (1 - P_i)`.
    pub system_exact: f64,
    /// First-order proxy `sum x_i^{k_i} / k_i!` (may exceed 1 or be inf).
    pub system_approx: f64,
    /// Frame error floor `system_exact / 2` for ideally coded streams.
    pub ber: f64,
}

/// Evaluate exact and first-order outage for `alloc` under `cfg`.
pub fn system_outage(cfg: &SystemConfig, alloc: &Allocation) -> Result<OutageReport> {
    if alloc.stream_count() != cfg.m {
        return Err(Error::Dimension(format!(
            "allocation has {} streams, system has {}",
            alloc.stream_count(),
            cfg.m
        )));
    }
    let mut per_stream = Vec::with_capacity(cfg.m);
    let mut approx = 0.0f64;
    let mut ln_survival = 0.0f64;
    let mut certain = false;
    for i in 1..=cfg.m {
        let (a, r) = (alloc.powers[i - 1], alloc.rates[i - 1]);
        let p = stream_outage_exact(cfg, i, a, r)?;
        if p >= 1.0 {
            certain = true;
        } else {
            ln_survival += (-p).ln_1p();
        }
        per_stream.push(p);
        approx += stream_outage_approx(cfg, i, a, r)?;
    }
    let system_exact = if certain { 1.0 } else { -ln_survival.exp_m1() };
    Ok(OutageReport {
        per_stream,
        system_exact,
        system_approx: approx,
        ber: system_exact / 2.0,
    })
}

/// Exact gradient of the system outage with respect to every power and
/// every rate: `(dS/dalpha, dS/dR)`.
///
/// Uses `dP_i/dalpha_i = -f_{k_i}(x_i) x_i / alpha_i` and
/// `dP_i/dR_i = f_{k_i}(x_i) e^{R_i} / (alpha_i gamma_eff)` with the
/// survival product of the other streams as chain factor.
pub fn system_outage_gradient(
    cfg: &SystemConfig,
    alloc: &Allocation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let report = system_outage(cfg, alloc)?;
    let m = cfg.m;
    let mut d_alpha = vec![0.0; m];
    let mut d_rate = vec![0.0; m];
    for i in 1..=m {
        let (a, r) = (alloc.powers[i - 1], alloc.rates[i - 1]);
        let x = threshold(cfg, a, r);
        if !x.is_finite() || a == 0.0 {
            // Stream saturated (P_i = 1) or powered off: flat locally.
            continue;
        }
        let pdf = erlang_pdf(cfg.diversity_order(i), x)?;
        let others: f64 = report
            .per_stream
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i - 1)
            .map(|(_, p)| 1.0 - p)
            .product();
        d_alpha[i - 1] = -others * pdf * x / a;
        d_rate[i - 1] = others * pdf * r.exp() / (a * cfg.gamma0_eff());
    }
    Ok((d_alpha, d_rate))
}

/// Least-squares diversity estimate from an outage-vs-SNR trace.
#[derive(Debug, Clone, Copy)]
pub struct DiversityReport {
    /// Fitted slope of `-ln P` against `ln gamma0`.
    pub slope: f64,
    /// SNR span of the fit window in dB.
    pub window_db: f64,
    /// RMS residual of the linear fit in `-ln P`.
    pub residual: f64,
}

/// Fit `-ln p = d * ln gamma + c` over at least three positive samples.
pub fn diversity_fit(snr_db: &[f64], p_out: &[f64]) -> Result<DiversityReport> {
    if snr_db.len() != p_out.len() {
        return Err(Error::Dimension("SNR and outage traces differ in length".into()));
    }
    if snr_db.len() < 3 {
        return Err(Error::Dimension("diversity fit needs at least three points".into()));
    }
    let mut xs = Vec::with_capacity(snr_db.len());
    let mut ys = Vec::with_capacity(snr_db.len());
    for (&db, &p) in snr_db.iter().zip(p_out) {
        if !(p > 0.0) || p >= 1.0 {
            return Err(Error::Domain(format!("outage sample {p} outside (0, 1)")));
        }
        xs.push(db / 10.0 * std::f64::consts::LN_10);
        ys.push(-p.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Domain("all fit points share one SNR".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let e = y - (slope * x + intercept);
        ss += e * e;
    }
    let window_db = snr_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - snr_db.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DiversityReport { slope, window_db, residual: (ss / n).sqrt() })
}

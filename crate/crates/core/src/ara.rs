//! Average rate allocation (ARA): minimise system outage over the rate
//! simplex `sum R_i = m R` with all powers pinned at 1.
//!
//! Rate allocation changes the picture from power allocation in one deep
//! way: loading more rate onto high-diversity streams and less onto the
//! fragile early ones raises the system diversity itself, not just the
//! SNR offset. The price is an active-set decision — below a multiplexing
//! threshold it pays to mute the early streams entirely and pile the whole
//! rate budget onto the back of the decoding chain.
//!
//! The closed form (per active-set candidate `m_A`, always the last `m_A`
//! streams) is
//!
//! ```text
//!     R_i = ln g + (m R - m_A ln g)/(b k_i) + c_i,   k_i = n - m + i,
//! ```
//!
//! with coefficients `a, b, c_i` built from the active diversity orders;
//! the candidate with the lowest exact outage wins. The numerical solver
//! is a marginal-cost water-filling: the first-order outage derivative
//! `P_i'(R_i)` is equalised at a level ν chosen so rates add up to the
//! budget, with an optional projected-gradient polish on the exact outage.

use crate::apa::SolverDiagnostics;
use crate::config::{RateSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::math::ln_factorial;
use crate::outage::{
    stream_rate_derivative, system_outage, system_outage_gradient, Allocation, OutageReport,
};
use crate::solve::{project_simplex, projected_gradient_descent};

/// Relative tolerance of the outer water-level bisection on the rate sum.
const WATERFILL_TOL: f64 = 1e-12;
/// Absolute tolerance of the inner per-stream rate bisection.
const INNER_RATE_TOL: f64 = 1e-11;
const PG_MAX_ITER: usize = 10_000;

/// Theorem coefficients of one active-set candidate.
#[derive(Debug, Clone)]
pub struct AraCoefficients {
    pub a: f64,
    pub b: f64,
    /// `c_i` for the active streams, back `m_A` positions in order.
    pub c: Vec<f64>,
    /// Number of active streams `m_A`.
    pub active_count: usize,
}

/// Closed-form rate allocation together with its coefficient set.
#[derive(Debug, Clone)]
pub struct AraClosedForm {
    pub allocation: Allocation,
    pub coefficients: AraCoefficients,
    /// True when `1 < R < ln(1 + gamma_eff)` (the moderate-rate, low-outage
    /// regime the closed form is derived for).
    pub in_validity: bool,
}

/// Water-filled and exact-objective rate optima side by side.
#[derive(Debug, Clone)]
pub struct AraExact {
    pub first_order: Allocation,
    pub first_order_diag: SolverDiagnostics,
    pub exact: Allocation,
    pub exact_diag: SolverDiagnostics,
    pub in_validity: bool,
}

/// Closed-form outage prediction at the rate-optimised point.
#[derive(Debug, Clone)]
pub struct AraPrediction {
    /// Per-stream `ν/k_i` split and its sums.
    pub report: OutageReport,
    pub m_a: usize,
    /// Marginal-outage level `ν = γ^{-m_A/b} e^{(mR-a)/b}`.
    pub nu: f64,
    /// Predicted diversity gain `(m_A/b)(1 - r/m_A)`.
    pub diversity: f64,
    /// System constant as printed in the source analysis,
    /// `b (n-m_A+m-1)!/(n-1)! e^{(mR-a)/b} γ^{-m_A/b}`.
    pub printed_constant_outage: f64,
    /// Whether the printed constant matches the direct per-stream sum;
    /// false whenever `m_A < m` (the printed form overcounts).
    pub constant_consistent: bool,
}

/// Coefficients for the candidate with the last `m_a` streams active.
pub fn ara_coefficients(cfg: &SystemConfig, m_a: usize) -> Result<AraCoefficients> {
    if m_a == 0 || m_a > cfg.m {
        return Err(Error::Dimension(format!("active count {m_a} outside 1..={}", cfg.m)));
    }
    let ks: Vec<usize> = (1..=m_a).map(|j| cfg.n - m_a + j).collect();
    let a: f64 = ks.iter().map(|&k| ln_factorial(k - 1) / k as f64).sum();
    let b: f64 = ks.iter().map(|&k| 1.0 / k as f64).sum();
    let c: Vec<f64> = ks.iter().map(|&k| (ln_factorial(k - 1) - a / b) / k as f64).collect();
    Ok(AraCoefficients { a, b, c, active_count: m_a })
}

/// Closed-form candidate rates for `m_a` active streams at SNR boosted by
/// `snr_boost` (1 for plain ARA, `m/m_A` for the joint allocation).
///
/// Returns the full-length rate vector (zero on the muted prefix), or
/// `None` when the candidate assigns a non-positive rate and is dropped —
/// the theorem's construction rather than a clamped hybrid.
pub fn ara_candidate_rates(
    cfg: &SystemConfig,
    m_a: usize,
    total_rate: f64,
    snr_boost: f64,
) -> Result<Option<Vec<f64>>> {
    if !(total_rate > 0.0) || !total_rate.is_finite() {
        return Err(Error::Domain(format!("total rate must be positive, got {total_rate}")));
    }
    if !(snr_boost > 0.0) {
        return Err(Error::Domain(format!("SNR boost must be positive, got {snr_boost}")));
    }
    let coeff = ara_coefficients(cfg, m_a)?;
    let ln_g = (snr_boost * cfg.gamma0_eff()).ln();
    let shift = (total_rate - m_a as f64 * ln_g) / coeff.b;
    let mut rates = vec![0.0; cfg.m];
    for j in 1..=m_a {
        let k = (cfg.n - m_a + j) as f64;
        let r = ln_g + shift / k + coeff.c[j - 1];
        if !(r > 0.0) {
            return Ok(None);
        }
        rates[cfg.m - m_a + j - 1] = r;
    }
    Ok(Some(rates))
}

fn theorem_validity(cfg: &SystemConfig, per_stream_rate: f64) -> bool {
    per_stream_rate > 1.0 && per_stream_rate < cfg.gamma0_eff().ln_1p()
}

/// Closed-form ARA: evaluates every feasible active-set candidate and
/// returns the one with the lowest exact outage. Powers stay at 1.
pub fn ara_closed_form(cfg: &SystemConfig, spec: RateSpec) -> Result<AraClosedForm> {
    let rate = spec.per_stream_rate(cfg)?;
    let total = rate * cfg.m as f64;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for m_a in 1..=cfg.m {
        let Some(rates) = ara_candidate_rates(cfg, m_a, total, 1.0)? else {
            continue;
        };
        let alloc = Allocation::new(vec![1.0; cfg.m], rates.clone())?;
        let p = system_outage(cfg, &alloc)?.system_exact;
        if best.as_ref().is_none_or(|(bp, _, _)| p < *bp) {
            best = Some((p, m_a, rates));
        }
    }
    let Some((_, m_a, rates)) = best else {
        return Err(Error::Infeasible(
            "no active-set candidate yields positive rates".into(),
        ));
    };
    Ok(AraClosedForm {
        allocation: Allocation::new(vec![1.0; cfg.m], rates)?,
        coefficients: ara_coefficients(cfg, m_a)?,
        in_validity: theorem_validity(cfg, rate),
    })
}

/// Active-stream count by the positivity rule: the largest candidate whose
/// smallest closed-form rate is still positive.
pub fn ara_active_set_by_positivity(cfg: &SystemConfig, spec: RateSpec) -> Result<usize> {
    let total = spec.per_stream_rate(cfg)? * cfg.m as f64;
    for m_a in (1..=cfg.m).rev() {
        if ara_candidate_rates(cfg, m_a, total, 1.0)?.is_some() {
            return Ok(m_a);
        }
    }
    Ok(1)
}

/// Marginal-cost water-filling on the first-order objective.
///
/// Finds ν and rates such that `P_i'(R_i) = ν` on every stream with
/// positive rate, `P_i'(0) >= ν` on muted ones, and `sum R_i = total_rate`
/// (outer bisection to relative 1e-12, then an exact rescale). Streams
/// with zero power are muted unconditionally. Returns `(rates, ν, iters)`.
pub fn rate_waterfill(
    cfg: &SystemConfig,
    powers: &[f64],
    total_rate: f64,
) -> Result<(Vec<f64>, f64, usize)> {
    if powers.len() != cfg.m {
        return Err(Error::Dimension(format!(
            "need {} powers, got {}",
            cfg.m,
            powers.len()
        )));
    }
    if !(total_rate > 0.0) || !total_rate.is_finite() {
        return Err(Error::Domain(format!("total rate must be positive, got {total_rate}")));
    }
    if !powers.iter().any(|&a| a > 0.0) {
        return Err(Error::Infeasible("all streams are powered off".into()));
    }

    // Rate on stream i at marginal level ν: invert P_i'(R) = ν.
    let rate_at = |i: usize, nu: f64| -> Result<f64> {
        let alpha = powers[i - 1];
        if alpha <= 0.0 {
            return Ok(0.0);
        }
        if stream_rate_derivative(cfg, i, alpha, 0.0)? >= nu {
            return Ok(0.0);
        }
        let mut hi = (cfg.gamma0_eff() * alpha.max(1.0)).ln_1p() + 10.0;
        let mut guard = 0;
        while stream_rate_derivative(cfg, i, alpha, hi)? < nu {
            hi += 10.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Bracketing(format!(
                    "marginal level {nu} unreachable on stream {i}"
                )));
            }
        }
        let (mut lo, mut hi) = (0.0f64, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if stream_rate_derivative(cfg, i, alpha, mid)? < nu {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= INNER_RATE_TOL {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let total_at = |ln_nu: f64| -> Result<f64> {
        let mut s = 0.0;
        for i in 1..=cfg.m {
            s += rate_at(i, ln_nu.exp())?;
        }
        Ok(s)
    };

    // Seed the marginal level from the mid-budget derivative of the most
    // reliable active stream, then expand an additive bracket in ln ν.
    let active = powers.iter().filter(|&&a| a > 0.0).count();
    let seed_i = (1..=cfg.m).rev().find(|&i| powers[i - 1] > 0.0).expect("active stream");
    let seed_rate = total_rate / active as f64;
    let d0 = stream_rate_derivative(cfg, seed_i, powers[seed_i - 1], seed_rate)?;
    let mut lo = d0.max(f64::MIN_POSITIVE).ln();
    let mut hi = lo;
    let mut iterations = 0usize;
    if total_at(lo)? < total_rate {
        while total_at(hi)? < total_rate {
            hi += 2.0;
            iterations += 1;
            if iterations > 2000 {
                return Err(Error::Bracketing("rate multiplier ran away upward".into()));
            }
        }
    } else {
        while total_at(lo)? > total_rate {
            lo -= 2.0;
            iterations += 1;
            if iterations > 2000 {
                return Err(Error::Bracketing("rate multiplier ran away downward".into()));
            }
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..500 {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        let excess = total_at(mid)? - total_rate;
        if excess.abs() <= WATERFILL_TOL * total_rate {
            break;
        }
        if excess > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let nu = mid.exp();
    let mut rates: Vec<f64> = (1..=cfg.m).map(|i| rate_at(i, nu)).collect::<Result<_>>()?;
    let sum: f64 = rates.iter().sum();
    let fix = total_rate / sum;
    for r in &mut rates {
        *r *= fix;
    }
    Ok((rates, nu, iterations))
}

/// Exact-objective optimal rates at fixed powers.
///
/// Runs the water-filling for a seed, then polishes on the exact system
/// outage with projected gradient over the rate simplex of the *powered*
/// streams only — unpowered streams are pinned at zero rate, since any
/// rate placed on them is certain outage (a cliff the local gradient
/// cannot see). Returns the full-length rate vector and the final outage.
pub fn exact_rate_optimum(
    cfg: &SystemConfig,
    powers: &[f64],
    total_rate: f64,
    tolerance: f64,
) -> Result<(Vec<f64>, f64)> {
    let (wf, _, _) = rate_waterfill(cfg, powers, total_rate)?;
    let live: Vec<usize> = (0..cfg.m).filter(|&i| powers[i] > 0.0).collect();
    let embed = |red: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; cfg.m];
        for (slot, &i) in red.iter().zip(&live) {
            full[i] = *slot;
        }
        full
    };
    let objective = |red: &[f64]| -> f64 {
        let alloc = Allocation { powers: powers.to_vec(), rates: embed(red) };
        system_outage(cfg, &alloc).map(|o| o.system_exact).unwrap_or(f64::INFINITY)
    };
    let gradient = |red: &[f64]| -> Vec<f64> {
        let alloc = Allocation { powers: powers.to_vec(), rates: embed(red) };
        match system_outage_gradient(cfg, &alloc) {
            Ok((_, dr)) => live.iter().map(|&i| dr[i]).collect(),
            Err(_) => vec![0.0; red.len()],
        }
    };
    let seeds = [
        live.iter().map(|&i| wf[i]).collect::<Vec<f64>>(),
        vec![total_rate / live.len() as f64; live.len()],
    ];
    let x0 = seeds
        .into_iter()
        .min_by(|a, b| objective(a).partial_cmp(&objective(b)).expect("finite objective"))
        .expect("nonempty seed list");
    let pg = projected_gradient_descent(
        &objective,
        gradient,
        &x0,
        |v| project_simplex(v, total_rate, 0.0),
        tolerance,
        PG_MAX_ITER,
    )?;
    let out = objective(&pg.x);
    Ok((embed(&pg.x), out))
}

/// Water-filled solve of the ARA plus an exact-objective refinement.
///
/// `tolerance` bounds the refinement's projected-gradient residual; the
/// water-filling itself always runs to relative 1e-12 on the rate sum.
pub fn ara_exact(cfg: &SystemConfig, spec: RateSpec, tolerance: f64) -> Result<AraExact> {
    let rate = spec.per_stream_rate(cfg)?;
    let total = rate * cfg.m as f64;
    let powers = vec![1.0; cfg.m];
    let (rates, nu, iterations) = rate_waterfill(cfg, &powers, total)?;
    let first_order = Allocation::new(powers.clone(), rates)?;
    let first_order_diag = SolverDiagnostics {
        multiplier_power: None,
        multiplier_rate: Some(nu),
        iterations,
        residual: (first_order.total_rate() - total).abs(),
        converged: true,
    };

    let objective = |r: &[f64]| -> f64 {
        let alloc = Allocation { powers: powers.clone(), rates: r.to_vec() };
        system_outage(cfg, &alloc).map(|o| o.system_exact).unwrap_or(f64::INFINITY)
    };
    let gradient = |r: &[f64]| -> Vec<f64> {
        let alloc = Allocation { powers: powers.clone(), rates: r.to_vec() };
        system_outage_gradient(cfg, &alloc).map(|(_, dr)| dr).unwrap_or_else(|_| vec![0.0; r.len()])
    };
    let mut seeds: Vec<Vec<f64>> = vec![first_order.rates.clone(), vec![rate; cfg.m]];
    if let Ok(cf) = ara_closed_form(cfg, spec) {
        seeds.push(cf.allocation.rates);
    }
    let x0 = seeds
        .into_iter()
        .min_by(|a, b| objective(a).partial_cmp(&objective(b)).expect("finite objective"))
        .expect("nonempty seed list");
    let pg = projected_gradient_descent(
        objective,
        gradient,
        &x0,
        |v| project_simplex(v, total, 0.0),
        tolerance,
        PG_MAX_ITER,
    )?;
    let exact = Allocation::new(powers, pg.x.clone())?;
    let (_, dr) = system_outage_gradient(cfg, &exact)?;
    let active: Vec<f64> = exact
        .rates
        .iter()
        .zip(&dr)
        .filter(|(&r, _)| r > 1e-9)
        .map(|(_, &g)| g)
        .collect();
    let exact_diag = SolverDiagnostics {
        multiplier_power: None,
        multiplier_rate: if active.is_empty() {
            None
        } else {
            Some(active.iter().sum::<f64>() / active.len() as f64)
        },
        iterations: pg.iterations,
        residual: pg.residual,
        converged: pg.converged,
    };
    Ok(AraExact {
        first_order,
        first_order_diag,
        exact,
        exact_diag,
        in_validity: theorem_validity(cfg, rate),
    })
}

/// Closed-form outage prediction: per-stream `P_i = ν/k_i` on the active
/// set, the diversity gain it implies, and the printed system constant
/// cross-checked against the direct sum.
pub fn ara_predicted_outage(cfg: &SystemConfig, spec: RateSpec) -> Result<AraPrediction> {
    let closed = ara_closed_form(cfg, spec)?;
    let m_a = closed.coefficients.active_count;
    let (a, b) = (closed.coefficients.a, closed.coefficients.b);
    let total = spec.per_stream_rate(cfg)? * cfg.m as f64;
    let gamma = cfg.gamma0_eff();
    let nu = ((total - a) / b - (m_a as f64 / b) * gamma.ln()).exp();

    let mut per_stream = vec![0.0; cfg.m];
    for j in 1..=m_a {
        let i = cfg.m - m_a + j;
        per_stream[i - 1] = nu / cfg.diversity_order(i) as f64;
    }
    let system_approx: f64 = per_stream.iter().sum();
    let mut ln_survival = 0.0;
    let mut certain = false;
    for &p in &per_stream {
        if p >= 1.0 {
            certain = true;
        } else {
            ln_survival += (-p).ln_1p();
        }
    }
    let system_exact = if certain { 1.0 } else { -ln_survival.exp_m1() };
    let report =
        OutageReport { per_stream, system_exact, system_approx, ber: system_exact / 2.0 };

    let r_equiv = total / gamma.ln_1p();
    let diversity = (m_a as f64 / b) * (1.0 - r_equiv / m_a as f64);
    let printed_constant_outage = (b.ln()
        + ln_factorial(cfg.n - m_a + cfg.m - 1)
        - ln_factorial(cfg.n - 1)
        + (total - a) / b
        - (m_a as f64 / b) * gamma.ln())
    .exp();
    let direct = b * nu;
    let constant_consistent = ((printed_constant_outage - direct) / direct).abs() < 1e-9;
    Ok(AraPrediction {
        report,
        m_a,
        nu,
        diversity,
        printed_constant_outage,
        constant_consistent,
    })
}

/// Multiplexing-gain threshold above which both streams of a 2x2 system
/// stay active: `1/2 + 3 ln 3 / (4 ln gamma_eff)`.
pub fn ara_threshold_2x2(cfg: &SystemConfig) -> Result<f64> {
    if cfg.n != 2 || cfg.m != 2 {
        return Err(Error::Config(format!(
            "closed-form threshold needs a 2x2 system, got {}x{}",
            cfg.n, cfg.m
        )));
    }
    let ln_g = cfg.gamma0_eff().ln();
    if !(ln_g > 0.0) {
        return Err(Error::Domain("threshold needs gamma_eff > 1".into()));
    }
    Ok(0.5 + 0.75 * 3f64.ln() / ln_g)
}

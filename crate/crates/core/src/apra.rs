//! Joint average power and rate allocation (APRA).
//!
//! Allowing both knobs to move at once sounds like a harder problem, but
//! in the moderate-rate regime it collapses to something clean: spread the
//! power *uniformly* over the streams worth keeping, and water-fill the
//! rates exactly as the rate-only allocator would — just at an SNR boosted
//! by `m / m_A`, the budget reclaimed from the muted streams. Below the
//! activation threshold this boost is where the joint gain lives (a factor
//! `(m/m_A)^{k}` in outage); above it the joint allocator degenerates to
//! the rate-only one and the curves coincide.
//!
//! Three solvers live here, in increasing fidelity:
//!
//!  * `apra_closed_form` — candidate enumeration over the active-set size
//!    with the boosted-SNR closed-form rates, best exact outage wins;
//!  * `apra_exact` first stage — alternating minimisation on the
//!    first-order objective (rate water-filling at fixed powers, then a
//!    power rebalance using the moderate-rate gradient coupling
//!    `dP/dα ≈ -(1/α) dP/dR`), whose fixed point is uniform power over
//!    the active set;
//!  * `apra_exact` second stage — projected gradient on the exact outage
//!    over both simplices jointly, which abandons exact uniformity in
//!    favour of `α_i ∝ 1 - e^{-R_i}` and buys the last fraction of a
//!    percent.

use crate::apa::SolverDiagnostics;
use crate::ara::{ara_candidate_rates, exact_rate_optimum, rate_waterfill};
use crate::config::{RateSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::math::{ln_em1, ln_factorial};
use crate::outage::{
    stream_rate_derivative, system_outage, system_outage_gradient, Allocation,
};
use crate::solve::{project_simplex, projected_gradient_descent};

const MAX_ROUNDS: usize = 100;
const MULTIPLIER_MOVE_TOL: f64 = 1e-10;
const PG_MAX_ITER: usize = 10_000;

/// Closed-form joint allocation: uniform power `m / m_A` over the last
/// `m_A` streams, rate-only closed-form rates at the boosted SNR.
#[derive(Debug, Clone)]
pub struct ApraClosedForm {
    pub allocation: Allocation,
    pub m_a: usize,
    /// True when every active rate sits in `(1, ln(1 + gamma_eff))`.
    pub in_validity: bool,
}

/// Alternating-minimisation fixed point and its exact-objective polish.
#[derive(Debug, Clone)]
pub struct ApraExact {
    /// First-order joint optimum: uniform power over the active set.
    pub first_order: Allocation,
    /// Multipliers `nu_alpha` (power) and `nu_R` (rate) plus the joint
    /// stationarity residual of the first-order KKT system.
    pub first_order_diag: SolverDiagnostics,
    /// Exact-outage joint optimum; powers here are *not* uniform.
    pub exact: Allocation,
    pub exact_diag: SolverDiagnostics,
    /// Convexity regime flag: all active rates above `ln 2`.
    pub lemma_validity: bool,
}

/// Activation thresholds: the multiplexing gain above which every stream
/// stays active at this SNR, and the SNR above which the requested gain
/// keeps every stream active.
#[derive(Debug, Clone, Copy)]
pub struct ApraThreshold {
    pub r_threshold: f64,
    /// `+inf` when no finite SNR activates all streams at this gain.
    pub snr_threshold_db: f64,
}

/// Best closed-form candidate over all active-set sizes.
pub fn apra_closed_form(cfg: &SystemConfig, spec: RateSpec) -> Result<ApraClosedForm> {
    let rate = spec.per_stream_rate(cfg)?;
    let total = rate * cfg.m as f64;
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    for m_a in 1..=cfg.m {
        let boost = cfg.m as f64 / m_a as f64;
        let Some(rates) = ara_candidate_rates(cfg, m_a, total, boost)? else {
            continue;
        };
        let mut powers = vec![0.0; cfg.m];
        for p in powers.iter_mut().skip(cfg.m - m_a) {
            *p = boost;
        }
        let alloc = Allocation::new(powers.clone(), rates.clone())?;
        let p = system_outage(cfg, &alloc)?.system_exact;
        if best.as_ref().is_none_or(|(bp, _, _, _)| p < *bp) {
            best = Some((p, m_a, powers, rates));
        }
    }
    let Some((_, m_a, powers, rates)) = best else {
        return Err(Error::Infeasible(
            "no active-set candidate yields positive rates".into(),
        ));
    };
    let ln_cap = cfg.gamma0_eff().ln_1p();
    let in_validity = rates.iter().filter(|&&r| r > 0.0).all(|&r| r > 1.0 && r < ln_cap);
    Ok(ApraClosedForm { allocation: Allocation::new(powers, rates)?, m_a, in_validity })
}

/// First-order marginal rate cost scaled by `1/alpha` — the approximate
/// power gradient `-dP/dalpha` of the moderate-rate coupling.
fn approx_power_cost(cfg: &SystemConfig, i: usize, alpha: f64, rate: f64) -> Result<f64> {
    Ok(stream_rate_derivative(cfg, i, alpha, rate)? / alpha)
}

/// Rebalance powers at fixed rates: equalise `(1/alpha) dP/dR` across the
/// rated streams under `sum alpha = budget`. Streams without rate get no
/// power. Returns the powers and the common level `nu_alpha`.
fn power_rebalance(cfg: &SystemConfig, rates: &[f64], budget: f64) -> Result<(Vec<f64>, f64)> {
    let active: Vec<usize> = (0..cfg.m).filter(|&i| rates[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::Infeasible("no rated stream to power".into()));
    }
    let gamma = cfg.gamma0_eff();
    // ln alpha_i(nu) from e^R (e^R-1)^{k-1} / (gamma^k (k-1)!) = nu alpha^{k+1}.
    let ln_alpha = |i: usize, ln_nu: f64| -> Result<f64> {
        let k = cfg.diversity_order(i + 1) as f64;
        let r = rates[i];
        let ln_num = r + (k - 1.0) * ln_em1(r)? - k * gamma.ln()
            - ln_factorial(cfg.diversity_order(i + 1) - 1);
        Ok((ln_num - ln_nu) / (k + 1.0))
    };
    let sum_at = |ln_nu: f64| -> Result<f64> {
        let mut s = 0.0;
        for &i in &active {
            s += ln_alpha(i, ln_nu)?.exp();
        }
        Ok(s)
    };
    // Seed from the level that gives the first active stream its uniform
    // share, then bracket additively in ln nu (sum is decreasing in nu).
    let i0 = active[0];
    let share = budget / active.len() as f64;
    let k0 = cfg.diversity_order(i0 + 1) as f64;
    let seed = rates[i0] + (k0 - 1.0) * ln_em1(rates[i0])? - k0 * gamma.ln()
        - ln_factorial(cfg.diversity_order(i0 + 1) - 1)
        - (k0 + 1.0) * share.ln();
    // The sum decreases in nu: walk lo down until its sum clears the
    // budget and hi up until its sum drops below, giving
    // sum_at(lo) >= budget >= sum_at(hi).
    let (mut lo, mut hi) = (seed, seed);
    let mut guard = 0;
    while sum_at(lo)? < budget {
        lo -= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Bracketing("power multiplier ran away downward".into()));
        }
    }
    while sum_at(hi)? > budget {
        hi += 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Bracketing("power multiplier ran away upward".into()));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..500 {
        mid = 0.5 * (lo + hi);
        let s = sum_at(mid)?;
        if (s - budget).abs() <= 1e-13 * budget {
            break;
        }
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut powers = vec![0.0; cfg.m];
    let mut sum = 0.0;
    for &i in &active {
        let a = ln_alpha(i, mid)?.exp();
        powers[i] = a;
        sum += a;
    }
    let fix = budget / sum;
    for p in &mut powers {
        *p *= fix;
    }
    Ok((powers, mid.exp()))
}

/// One alternating run from a power seed. Returns the allocation, the two
/// multipliers, the round count, and whether the multipliers settled.
fn alternate(
    cfg: &SystemConfig,
    powers0: Vec<f64>,
    total_rate: f64,
) -> Result<(Allocation, f64, f64, usize, bool)> {
    let budget: f64 = powers0.iter().sum();
    let mut powers = powers0;
    let mut rates = vec![0.0; cfg.m];
    let (mut nu_r, mut nu_a) = (f64::NAN, f64::NAN);
    let mut converged = false;
    let mut rounds = 0;
    for round in 1..=MAX_ROUNDS {
        rounds = round;
        let (r, nr, _) = rate_waterfill(cfg, &powers, total_rate)?;
        let (p, na) = power_rebalance(cfg, &r, budget)?;
        rates = r;
        powers = p;
        let moved = |new: f64, old: f64| ((new - old) / new.abs().max(f64::MIN_POSITIVE)).abs();
        if moved(nr, nu_r) < MULTIPLIER_MOVE_TOL && moved(na, nu_a) < MULTIPLIER_MOVE_TOL {
            nu_r = nr;
            nu_a = na;
            converged = true;
            break;
        }
        nu_r = nr;
        nu_a = na;
    }
    Ok((Allocation::new(powers, rates)?, nu_r, nu_a, rounds, converged))
}

/// Joint stationarity residual of the first-order KKT system: relative
/// spread of `dP/dR` around `nu_R` and of `(1/alpha) dP/dR` around
/// `nu_alpha` over the active streams, plus any muted stream whose entry
/// cost undercuts the rate level.
fn joint_kkt_residual(
    cfg: &SystemConfig,
    alloc: &Allocation,
    nu_r: f64,
    nu_a: f64,
) -> Result<f64> {
    let mut residual = 0.0f64;
    for i in 1..=cfg.m {
        let (a, r) = (alloc.powers[i - 1], alloc.rates[i - 1]);
        if r > 0.0 && a > 0.0 {
            let d = stream_rate_derivative(cfg, i, a, r)?;
            residual = residual.max((d / nu_r - 1.0).abs());
            residual = residual.max((approx_power_cost(cfg, i, a, r)? / nu_a - 1.0).abs());
        } else if a > 0.0 {
            let entry = stream_rate_derivative(cfg, i, a, 0.0)?;
            if entry < nu_r {
                residual = residual.max((nu_r - entry) / nu_r);
            }
        }
    }
    Ok(residual)
}

/// Alternating first-order solve plus exact-objective joint refinement.
///
/// Every feasible active-set basin is tried (the alternation cannot grow
/// an active set once a stream is muted, so basins are explored by
/// seeding); winners are picked by exact outage at each stage.
pub fn apra_exact(cfg: &SystemConfig, spec: RateSpec, tolerance: f64) -> Result<ApraExact> {
    let rate = spec.per_stream_rate(cfg)?;
    let total = rate * cfg.m as f64;
    let m = cfg.m as f64;

    // Seed powers: all streams on, plus each feasible closed-form pattern.
    let mut seeds: Vec<Vec<f64>> = vec![vec![1.0; cfg.m]];
    for m_a in 1..=cfg.m {
        let boost = m / m_a as f64;
        if ara_candidate_rates(cfg, m_a, total, boost)?.is_some() {
            let mut p = vec![0.0; cfg.m];
            for slot in p.iter_mut().skip(cfg.m - m_a) {
                *slot = boost;
            }
            seeds.push(p);
        }
    }
    let mut best: Option<(f64, Allocation, f64, f64, usize, bool)> = None;
    for seed in seeds {
        let (alloc, nu_r, nu_a, rounds, converged) = alternate(cfg, seed, total)?;
        let p = system_outage(cfg, &alloc)?.system_exact;
        if best.as_ref().is_none_or(|(bp, ..)| p < *bp) {
            best = Some((p, alloc, nu_r, nu_a, rounds, converged));
        }
    }
    let (p_first, first_order, nu_r, nu_a, rounds, converged) =
        best.expect("the all-on seed always yields a fixed point");
    let first_order_diag = SolverDiagnostics {
        multiplier_power: Some(nu_a),
        multiplier_rate: Some(nu_r),
        iterations: rounds,
        residual: joint_kkt_residual(cfg, &first_order, nu_r, nu_a)?,
        converged,
    };

    // Exact refinement inside the winning basin: joint projected gradient
    // over the live suffix, seeded from the fixed point and from the
    // exact-coupling heuristic alpha_i ~ 1 - e^{-R_i}.
    let live: Vec<usize> = (0..cfg.m).filter(|&i| first_order.powers[i] > 0.0).collect();
    let embed = |z: &[f64]| -> Allocation {
        let (mut powers, mut rates) = (vec![0.0; cfg.m], vec![0.0; cfg.m]);
        for (slot, &i) in z.iter().zip(&live) {
            powers[i] = *slot;
        }
        for (slot, &i) in z[live.len()..].iter().zip(&live) {
            rates[i] = *slot;
        }
        Allocation { powers, rates }
    };
    let objective = |z: &[f64]| -> f64 {
        system_outage(cfg, &embed(z)).map(|o| o.system_exact).unwrap_or(f64::INFINITY)
    };
    let gradient = |z: &[f64]| -> Vec<f64> {
        match system_outage_gradient(cfg, &embed(z)) {
            Ok((da, dr)) => live
                .iter()
                .map(|&i| da[i])
                .chain(live.iter().map(|&i| dr[i]))
                .collect(),
            Err(_) => vec![0.0; z.len()],
        }
    };
    let project = |z: &[f64]| -> Result<Vec<f64>> {
        let mut p = project_simplex(&z[..live.len()], m, 0.0)?;
        p.extend(project_simplex(&z[live.len()..], total, 0.0)?);
        Ok(p)
    };
    let pack = |alloc: &Allocation| -> Vec<f64> {
        live.iter()
            .map(|&i| alloc.powers[i])
            .chain(live.iter().map(|&i| alloc.rates[i]))
            .collect()
    };
    let mut z_seeds = vec![pack(&first_order)];
    {
        // Heuristic start: powers proportional to 1 - e^{-R_i} at the
        // fixed-point rates, rates re-filled for those powers.
        let mut powers = vec![0.0; cfg.m];
        let mut norm = 0.0;
        for &i in &live {
            powers[i] = -(-first_order.rates[i]).exp_m1();
            norm += powers[i];
        }
        if norm > 0.0 {
            for p in &mut powers {
                *p *= m / norm;
            }
            if let Ok((rates, _, _)) = rate_waterfill(cfg, &powers, total) {
                z_seeds.push(pack(&Allocation { powers, rates }));
            }
        }
    }
    let z0 = z_seeds
        .into_iter()
        .min_by(|a, b| objective(a).partial_cmp(&objective(b)).expect("finite objective"))
        .expect("nonempty seed list");
    let pg = projected_gradient_descent(&objective, gradient, &z0, project, tolerance, PG_MAX_ITER)?;
    let refined = embed(&pg.x);
    let (exact, p_refined) = if objective(&pg.x) <= p_first {
        (refined, objective(&pg.x))
    } else {
        (first_order.clone(), p_first)
    };
    let (da, dr) = system_outage_gradient(cfg, &exact)?;
    let mean_over_live = |v: &[f64]| -> f64 {
        let s: f64 = live.iter().map(|&i| v[i]).sum();
        s / live.len() as f64
    };
    let exact_diag = SolverDiagnostics {
        multiplier_power: Some(-mean_over_live(&da)),
        multiplier_rate: Some(mean_over_live(&dr)),
        iterations: pg.iterations,
        residual: pg.residual,
        converged: pg.converged && p_refined.is_finite(),
    };
    let lemma_validity = first_order
        .rates
        .iter()
        .filter(|&&r| r > 0.0)
        .all(|&r| r > std::f64::consts::LN_2);
    Ok(ApraExact { first_order, first_order_diag, exact, exact_diag, lemma_validity })
}

/// Largest improvement found by perturbing `alloc`'s powers by `rel` along
/// zero-sum active-set directions and re-optimising the rates exactly.
///
/// A well-converged joint optimum certifies itself by returning at most a
/// solver-tolerance-sized value.
pub fn power_perturbation_certificate(
    cfg: &SystemConfig,
    alloc: &Allocation,
    rel: f64,
    tolerance: f64,
) -> Result<f64> {
    let base = system_outage(cfg, alloc)?.system_exact;
    let total = alloc.total_rate();
    let live: Vec<usize> = (0..cfg.m).filter(|&i| alloc.powers[i] > 0.0).collect();
    let mut best_improvement = 0.0f64;
    if live.len() < 2 {
        return Ok(0.0);
    }
    let anchor = *live.last().expect("nonempty live set");
    for &i in &live[..live.len() - 1] {
        for sign in [1.0, -1.0] {
            let mut powers = alloc.powers.clone();
            let step = sign * rel * powers[i].min(powers[anchor]);
            powers[i] += step;
            powers[anchor] -= step;
            if powers[i] <= 0.0 || powers[anchor] <= 0.0 {
                continue;
            }
            let (_, p) = exact_rate_optimum(cfg, &powers, total, tolerance)?;
            best_improvement = best_improvement.max(base - p);
        }
    }
    Ok(best_improvement)
}

/// Multiplexing-gain threshold for all-stream activity of a 2x2 system:
/// `1/2 + 3 ln 12 / (4 ln gamma_eff)`.
pub fn apra_threshold_2x2(cfg: &SystemConfig) -> Result<f64> {
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
    Ok(0.5 + 0.75 * 12f64.ln() / ln_g)
}

/// First-order predicted log-outage of the `m_a` candidate at total rate
/// `total = r ln gamma` with the `m/m_a` SNR boost — the quantity whose
/// argmin defines the activation threshold.
fn predicted_ln_outage(cfg: &SystemConfig, m_a: usize, total: f64, gamma: f64) -> Result<f64> {
    let ks: Vec<usize> = (1..=m_a).map(|j| cfg.n - m_a + j).collect();
    let a: f64 = ks.iter().map(|&k| ln_factorial(k - 1) / k as f64).sum();
    let b: f64 = ks.iter().map(|&k| 1.0 / k as f64).sum();
    let boosted = (cfg.m as f64 / m_a as f64) * gamma;
    Ok(b.ln() + (total - a) / b - (m_a as f64 / b) * boosted.ln())
}

/// Numeric activation threshold at `gamma`: the smallest gain whose
/// predicted-outage argmin keeps all `m` streams on. Uses the asymptotic
/// rate convention `total = r ln gamma` the predictions are derived in.
pub fn apra_threshold_scan(cfg: &SystemConfig, gamma: f64) -> Result<f64> {
    if cfg.m == 1 {
        return Ok(0.0);
    }
    if !(gamma > 1.0) {
        return Err(Error::Domain("threshold scan needs gamma_eff > 1".into()));
    }
    let full_wins = |r: f64| -> Result<bool> {
        let total = r * gamma.ln();
        let mut best = (f64::INFINITY, 0usize);
        for m_a in 1..=cfg.m {
            let v = predicted_ln_outage(cfg, m_a, total, gamma)?;
            if v < best.0 {
                best = (v, m_a);
            }
        }
        Ok(best.1 == cfg.m)
    };
    let (mut lo, mut hi) = (1e-6, cfg.m as f64 - 1e-6);
    if full_wins(lo)? {
        return Ok(lo);
    }
    if !full_wins(hi)? {
        return Err(Error::Bracketing(
            "full active set never wins below r = m at this SNR".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if full_wins(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Both activation thresholds for a configuration and rate target.
///
/// `r_threshold` is evaluated at the configuration's own SNR. The SNR
/// threshold inverts the same relation at the requested multiplexing gain
/// (a fixed-rate spec is first converted to its equivalent gain at the
/// configuration's SNR); gains at or below the infinite-SNR critical value
/// have no finite threshold and report `+inf`.
pub fn apra_threshold(cfg: &SystemConfig, spec: RateSpec) -> Result<ApraThreshold> {
    if cfg.m == 1 {
        return Ok(ApraThreshold { r_threshold: 0.0, snr_threshold_db: f64::NEG_INFINITY });
    }
    let r = match spec {
        RateSpec::MultiplexingGain(r) => r,
        RateSpec::FixedRate(_) => {
            cfg.m as f64 * spec.per_stream_rate(cfg)? / cfg.gamma0_eff().ln_1p()
        }
    };
    if cfg.n == 2 && cfg.m == 2 {
        let r_threshold = apra_threshold_2x2(cfg)?;
        let snr_threshold_db = if r > 0.5 {
            let ln_g = 3.0 * 12f64.ln() / (2.0 * (2.0 * r - 1.0));
            10.0 * ln_g.exp().log10()
        } else {
            f64::INFINITY
        };
        return Ok(ApraThreshold { r_threshold, snr_threshold_db });
    }
    let r_threshold = apra_threshold_scan(cfg, cfg.gamma0_eff())?;
    // Invert the scan over SNR by bisection on ln gamma; the threshold
    // falls with SNR toward its critical limit.
    let crit = |ln_g: f64| -> Result<bool> { Ok(apra_threshold_scan(cfg, ln_g.exp())? <= r) };
    let (mut lo, mut hi) = (0.1f64, 500.0f64);
    if crit(lo)? {
        return Ok(ApraThreshold { r_threshold, snr_threshold_db: 10.0 * lo.exp().log10() });
    }
    if !crit(hi)? {
        return Ok(ApraThreshold { r_threshold, snr_threshold_db: f64::INFINITY });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if crit(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Ok(ApraThreshold { r_threshold, snr_threshold_db: 10.0 * (0.5 * (lo + hi)).exp().log10() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ara::ara_closed_form;

    fn cfg_2x2_30db() -> SystemConfig {
        SystemConfig::new(2, 2, 1000.0, 1.0).unwrap()
    }

    #[test]
    fn closed_form_boosts_snr_below_threshold() {
        // r = 2/3 sits below the 30 dB activation threshold (~0.7698):
        // the single-stream candidate with doubled power wins.
        let cf = apra_closed_form(&cfg_2x2_30db(), RateSpec::MultiplexingGain(2.0 / 3.0)).unwrap();
        assert_eq!(cf.m_a, 1);
        assert_eq!(cf.allocation.powers, vec![0.0, 2.0]);
        assert_eq!(cf.allocation.rates[0], 0.0);
        assert!((cf.allocation.rates[1] - 4.605_836_519_543_48).abs() < 1e-12);
        let p = system_outage(&cfg_2x2_30db(), &cf.allocation).unwrap().system_exact;
        assert!((p - 1.187_007_090_065_508_3e-3).abs() < 1e-15, "outage = {p}");
        assert!(cf.in_validity);
    }

    #[test]
    fn closed_form_matches_rate_only_above_threshold() {
        // r = 0.9 exceeds the threshold: all streams stay on with unit
        // power and the allocation is identical to the rate-only one.
        let cfg = cfg_2x2_30db();
        let spec = RateSpec::MultiplexingGain(0.9);
        let cf = apra_closed_form(&cfg, spec).unwrap();
        assert_eq!(cf.m_a, 2);
        assert_eq!(cf.allocation.powers, vec![1.0, 1.0]);
        assert!((cf.allocation.rates[0] - 1.842_667_774_595_086_7).abs() < 1e-12);
        assert!((cf.allocation.rates[1] - 4.375_211_526_788_611_9).abs() < 1e-12);
        let rate_only = ara_closed_form(&cfg, spec).unwrap();
        assert_eq!(cf.allocation.rates, rate_only.allocation.rates);
        let p = system_outage(&cfg, &cf.allocation).unwrap().system_exact;
        assert!((p - 8.205_169_065_320_391e-3).abs() < 1e-15, "outage = {p}");
    }

    #[test]
    fn closed_form_handles_wider_arrays_and_single_stream() {
        let cfg = SystemConfig::new(4, 4, 1000.0, 1.0).unwrap();
        let cf = apra_closed_form(&cfg, RateSpec::MultiplexingGain(2.0)).unwrap();
        assert_eq!(cf.m_a, 3);
        let third = 4.0 / 3.0;
        for (i, &p) in cf.allocation.powers.iter().enumerate() {
            let want = if i == 0 { 0.0 } else { third };
            assert!((p - want).abs() < 1e-12, "powers = {:?}", cf.allocation.powers);
        }
        let want = [0.0, 3.296_456_694_588_545, 4.827_165_973_723_651, 5.693_886_890_318_245];
        for (got, want) in cf.allocation.rates.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "rates = {:?}", cf.allocation.rates);
        }
        let p = system_outage(&cfg, &cf.allocation).unwrap().system_exact;
        assert!((p - 3.973_293_506_301_558e-4).abs() < 1e-16, "outage = {p}");

        let m1 = SystemConfig::new(2, 1, 1000.0, 1.0).unwrap();
        let cf = apra_closed_form(&m1, RateSpec::FixedRate(2.0)).unwrap();
        assert_eq!(cf.allocation.powers, vec![1.0]);
        assert_eq!(cf.allocation.rates, vec![2.0]);
    }

    #[test]
    fn alternation_fixed_point_is_uniform_over_the_active_set() {
        let cfg = cfg_2x2_30db();
        let sol = apra_exact(&cfg, RateSpec::MultiplexingGain(0.9), 1e-9).unwrap();
        // Above threshold: both streams on, powers uniform to 1e-6.
        let p = &sol.first_order.powers;
        assert!((p[0] / p[1] - 1.0).abs() < 1e-6, "powers = {p:?}");
        assert!((sol.first_order.total_power() - 2.0).abs() < 1e-9);
        let r = &sol.first_order.rates;
        assert!((r[0] - 1.838_463_815_109_748).abs() < 1e-8, "R_1 = {}", r[0]);
        assert!((r[1] - 4.379_415_486_273_951).abs() < 1e-8, "R_2 = {}", r[1]);
        let nu_r = sol.first_order_diag.multiplier_rate.unwrap();
        let nu_a = sol.first_order_diag.multiplier_power.unwrap();
        assert!((nu_r - 6.286_873_039_773_316e-3).abs() < 1e-9, "nu_R = {nu_r}");
        // Uniform powers m/m_A = 1 make the two levels coincide.
        assert!((nu_a / nu_r - 1.0).abs() < 1e-6, "nu_alpha/nu_R = {}", nu_a / nu_r);
        assert!(sol.first_order_diag.converged);
        assert!(sol.first_order_diag.residual < 1e-6);
        assert!(sol.lemma_validity);
    }

    #[test]
    fn alternation_reaches_the_boosted_single_stream_basin() {
        // Below threshold the best basin mutes stream 1 entirely; the
        // alternation seeded from the closed-form pattern lands there.
        let cfg = cfg_2x2_30db();
        let sol = apra_exact(&cfg, RateSpec::MultiplexingGain(2.0 / 3.0), 1e-9).unwrap();
        assert_eq!(sol.first_order.powers[0], 0.0);
        assert!((sol.first_order.powers[1] - 2.0).abs() < 1e-12);
        assert!((sol.first_order.rates[1] - 4.605_836_519_543_48).abs() < 1e-10);
        let p = system_outage(&cfg, &sol.first_order).unwrap().system_exact;
        assert!((p - 1.187_007_090_065_508_3e-3).abs() < 1e-12);
        // The exact polish cannot leave the basin or lose to it.
        let pe = system_outage(&cfg, &sol.exact).unwrap().system_exact;
        assert!(pe <= p + 1e-18);
        assert_eq!(sol.exact.powers[0], 0.0);
    }

    #[test]
    fn exact_polish_leaves_uniformity_for_the_true_joint_optimum() {
        let cfg = cfg_2x2_30db();
        let sol = apra_exact(&cfg, RateSpec::MultiplexingGain(0.9), 1e-9).unwrap();
        let p_first = system_outage(&cfg, &sol.first_order).unwrap().system_exact;
        let p_exact = system_outage(&cfg, &sol.exact).unwrap().system_exact;
        assert!(p_exact <= p_first, "polish cannot lose");
        assert!(
            (p_exact - 8.154_771_935_238_226e-3).abs() < 1e-8,
            "joint optimum outage = {p_exact}"
        );
        assert!(
            (sol.exact.powers[0] - 0.907_374_525_988_57).abs() < 2e-3,
            "alpha_1 = {}",
            sol.exact.powers[0]
        );
        // KKT structure of the exact optimum: alpha_i proportional to
        // 1 - e^{-R_i} across the active set.
        let ratio = |i: usize| sol.exact.powers[i] / -(-sol.exact.rates[i]).exp_m1();
        assert!(
            (ratio(0) / ratio(1) - 1.0).abs() < 1e-3,
            "coupling ratios {} vs {}",
            ratio(0),
            ratio(1)
        );
        // Certificate: +-1% zero-sum power shifts (rates re-optimised)
        // cannot improve a converged joint optimum beyond tolerance.
        let gain = power_perturbation_certificate(&cfg, &sol.exact, 0.01, 1e-9).unwrap();
        assert!(gain <= 1e-6 * p_exact, "perturbation found {gain} improvement");
    }

    #[test]
    fn snr_shift_identity_links_the_two_allocators() {
        // With a fixed per-stream rate the joint allocation at gamma
        // equals the rate-only allocation at (m/m_A) gamma exactly.
        let cfg = SystemConfig::new(2, 2, 100.0, 1.0).unwrap();
        let cf = apra_closed_form(&cfg, RateSpec::FixedRate(2.0)).unwrap();
        assert_eq!(cf.m_a, 1);
        let p = system_outage(&cfg, &cf.allocation).unwrap().system_exact;
        assert!((p - 3.009_503_741_310_421e-2).abs() < 1e-14, "outage = {p}");
        let boosted = SystemConfig::new(2, 2, 100.0 * 2.0, 1.0).unwrap();
        let shifted = Allocation::new(vec![1.0, 1.0], cf.allocation.rates.clone()).unwrap();
        let p_shift = system_outage(&boosted, &shifted).unwrap().system_exact;
        assert!((p - p_shift).abs() < 1e-16, "shift identity broken: {p} vs {p_shift}");
    }

    #[test]
    fn single_stream_power_boost_quarters_the_outage() {
        // Deep SNR, both allocators single-active: doubling the power of
        // a diversity-2 stream divides its outage by 4 asymptotically.
        let cfg = SystemConfig::new(2, 2, 1e6, 1.0).unwrap();
        let spec = RateSpec::FixedRate(1.0);
        let joint = apra_closed_form(&cfg, spec).unwrap();
        let rate_only = ara_closed_form(&cfg, spec).unwrap();
        assert_eq!((joint.m_a, rate_only.coefficients.active_count), (1, 1));
        let pj = system_outage(&cfg, &joint.allocation).unwrap().system_exact;
        let pr = system_outage(&cfg, &rate_only.allocation).unwrap().system_exact;
        let ratio = pj / pr;
        assert!((ratio - 0.250_000_532_421_696).abs() < 1e-9, "ratio = {ratio}");
    }

    #[test]
    fn thresholds_match_the_closed_forms() {
        let cfg = cfg_2x2_30db();
        let r_th = apra_threshold_2x2(&cfg).unwrap();
        assert!((r_th - 0.769_795_311_511_906_2).abs() < 1e-12, "r_th = {r_th}");
        let ara_th = crate::ara::ara_threshold_2x2(&cfg).unwrap();
        assert!(ara_th < r_th, "joint threshold must exceed the rate-only one");

        let th = apra_threshold(&cfg, RateSpec::MultiplexingGain(1.0)).unwrap();
        assert!((th.snr_threshold_db - 16.187_718_690_714_372).abs() < 1e-9,
            "snr threshold = {}", th.snr_threshold_db);
        let th = apra_threshold(&cfg, RateSpec::MultiplexingGain(0.8)).unwrap();
        assert!((th.snr_threshold_db - 26.979_531_151_190_62).abs() < 1e-9,
            "snr threshold = {}", th.snr_threshold_db);
        let th = apra_threshold(&cfg, RateSpec::MultiplexingGain(0.4)).unwrap();
        assert!(th.snr_threshold_db.is_infinite() && th.snr_threshold_db > 0.0,
            "sub-critical gain has no finite threshold");

        // The numeric scan agrees with the 2x2 closed form and covers
        // shapes the closed form cannot.
        let scan = apra_threshold_scan(&cfg, cfg.gamma0_eff()).unwrap();
        assert!((scan - r_th).abs() < 1e-6, "scan = {scan} vs closed {r_th}");
        let cfg44 = SystemConfig::new(4, 4, 1000.0, 1.0).unwrap();
        let scan = apra_threshold_scan(&cfg44, cfg44.gamma0_eff()).unwrap();
        assert!((scan - 2.488_904_308_036_672).abs() < 1e-6, "4x4 scan = {scan}");
        assert!(apra_threshold_2x2(&cfg44).is_err());

        let m1 = SystemConfig::new(3, 1, 1000.0, 1.0).unwrap();
        let th = apra_threshold(&m1, RateSpec::MultiplexingGain(0.5)).unwrap();
        assert_eq!(th.r_threshold, 0.0);
    }

    #[test]
    fn lemma_flag_drops_below_ln2_rates() {
        let cfg = cfg_2x2_30db();
        let sol = apra_exact(&cfg, RateSpec::FixedRate(0.3), 1e-9).unwrap();
        assert!(!sol.lemma_validity, "rates {:?}", sol.first_order.rates);
        // The solver still returns a budget-feasible allocation.
        assert!((sol.first_order.total_rate() - 0.6).abs() < 1e-9);
        assert!((sol.first_order.total_power() - 2.0).abs() < 1e-9);
    }
}

//! Dual problems: least total power meeting an outage ceiling, and largest
//! total rate under one.
//!
//! Both duals recycle the primal machinery instead of running a general
//! constrained solver. The power dual exploits a scaling structure: at any
//! total budget the optimal power *shape* is the primal shape, so the
//! solution is the primal split rescaled until the outage sits exactly on
//! the constraint. Rates do not enter the objective multiplicatively, so
//! the rate dual has no such shortcut; it bisects the total rate, solving
//! the min-outage rate split at each candidate, against the fact that the
//! optimised outage is strictly increasing in the rate budget.
//!
//! A solution is reported on the boundary (`|P_out − ε| / ε` at the 1e-10
//! level, comfortably inside the 1e-8 contract) unless ε is so close to 1
//! that the required power collapses to nothing, in which case the result
//! carries a `degenerate` flag rather than pretending significance.

use crate::apa::apa_exact;
use crate::ara::ara_exact;
use crate::config::{RateSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::outage::{system_outage, Allocation};
use crate::solve::bisect;

/// Bracket-width target for the scale/rate bisections, in log space.
const DUAL_BISECT_TOL: f64 = 1e-13;
/// ε at least this close to 1 makes the power dual degenerate.
const DEGENERATE_EPSILON: f64 = 0.999;
/// A scale this far below the primal budget is numerically meaningless.
const DEGENERATE_SCALE: f64 = 1e-6;

/// Outage ceiling for a dual problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConstraint {
    epsilon: f64,
}

impl DualConstraint {
    /// A target outage probability, strictly inside (0, 1).
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) || !epsilon.is_finite() {
            return Err(Error::Domain(format!(
                "target outage must lie strictly inside (0, 1), got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Least-total-power solution meeting an outage ceiling.
#[derive(Debug, Clone)]
pub struct PowerDual {
    /// Power split (summing to `total_power`) and the fixed per-stream rates.
    pub allocation: Allocation,
    /// Minimised power sum.
    pub total_power: f64,
    /// Achieved system outage; on the boundary unless degenerate.
    pub outage: f64,
    /// Set when ε is close enough to 1 that the answer is a formality —
    /// vanishing power already satisfies the ceiling to working precision.
    pub degenerate: bool,
}

/// Largest-total-rate solution under an outage ceiling.
#[derive(Debug, Clone)]
pub struct RateDual {
    /// Rate split (unit powers) achieving the maximal total.
    pub allocation: Allocation,
    /// Maximised rate sum, in nats.
    pub total_rate: f64,
    /// Achieved system outage at the solution, on the boundary.
    pub outage: f64,
}

/// Minimise the total power that keeps the optimised outage at `epsilon`,
/// with every stream carrying `rate` nats.
///
/// The power shape comes from one primal solve; only the scalar budget is
/// searched. The returned allocation's powers sum to `total_power`.
pub fn min_total_power(
    cfg: &SystemConfig,
    rate: f64,
    constraint: DualConstraint,
    tolerance: f64,
) -> Result<PowerDual> {
    let epsilon = constraint.epsilon();
    let primal = apa_exact(cfg, rate, tolerance)?;
    let m = cfg.m as f64;
    let shape: Vec<f64> = primal.exact.powers.iter().map(|a| a / m).collect();
    let rates = primal.exact.rates.clone();

    let outage_at = |total: f64| -> Result<f64> {
        let powers: Vec<f64> = shape.iter().map(|w| w * total).collect();
        let alloc = Allocation { powers, rates: rates.clone() };
        Ok(system_outage(cfg, &alloc)?.system_exact)
    };

    // Bracket the budget around the primal one. Downwards the outage rises
    // toward 1, so a lower endpoint always exists; upwards it falls toward
    // zero unless the shape starves a stream outright, in which case the
    // ceiling is unattainable and the infimum is reported instead.
    let mut lo = m;
    let mut p_lo = outage_at(lo)?;
    while p_lo < epsilon {
        lo *= 0.5;
        if lo < 1e-290 {
            break;
        }
        p_lo = outage_at(lo)?;
    }
    let mut hi = m;
    let mut p_hi = outage_at(hi)?;
    let mut doublings = 0;
    while p_hi > epsilon {
        hi *= 2.0;
        doublings += 1;
        if doublings > 900 {
            return Err(Error::Infeasible(format!(
                "outage ceiling {epsilon} unreachable by scaling this power shape; \
                 achievable infimum ~{p_hi} at total power {hi}"
            )));
        }
        p_hi = outage_at(hi)?;
    }

    let ln_total = bisect(
        |ln_s| match outage_at(ln_s.exp()) {
            Ok(p) => p - epsilon,
            Err(_) => f64::NAN,
        },
        lo.ln(),
        hi.ln(),
        DUAL_BISECT_TOL,
    )?;
    let total_power = ln_total.exp();
    let outage = outage_at(total_power)?;
    let powers: Vec<f64> = shape.iter().map(|w| w * total_power).collect();
    let degenerate = epsilon >= DEGENERATE_EPSILON || total_power < DEGENERATE_SCALE * m;
    Ok(PowerDual {
        allocation: Allocation { powers, rates },
        total_power,
        outage,
        degenerate,
    })
}

/// Maximise the total rate whose best split keeps the outage at `epsilon`,
/// at unit per-stream powers.
///
/// Each candidate total is handed to the rate-allocation primal for its
/// min-outage split; the optimised outage is strictly increasing in the
/// total, so the constraint has a unique crossing.
pub fn max_total_rate(
    cfg: &SystemConfig,
    constraint: DualConstraint,
    tolerance: f64,
) -> Result<RateDual> {
    let epsilon = constraint.epsilon();
    let m = cfg.m as f64;
    let solve_at = |total: f64| -> Result<(Allocation, f64)> {
        let sol = ara_exact(cfg, RateSpec::FixedRate(total / m), tolerance)?;
        let p = system_outage(cfg, &sol.exact)?.system_exact;
        Ok((sol.exact, p))
    };

    // Bracket the total rate: outage sinks to zero with the rate budget and
    // climbs to 1 as the budget outruns the channel.
    let mut lo = 0.05 * m;
    let mut p_lo = solve_at(lo)?.1;
    while p_lo > epsilon {
        lo *= 0.25;
        if lo < 1e-200 {
            return Err(Error::Infeasible(format!(
                "outage ceiling {epsilon} sits below the zero-rate limit; \
                 smallest probed outage {p_lo}"
            )));
        }
        p_lo = solve_at(lo)?.1;
    }
    let mut hi = m * cfg.gamma0_eff().ln_1p().max(1.0);
    let mut p_hi = solve_at(hi)?.1;
    let mut doublings = 0;
    while p_hi < epsilon {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Bracketing(format!(
                "outage stayed below {epsilon} out to total rate {hi}"
            )));
        }
        p_hi = solve_at(hi)?.1;
    }

    let ln_total = bisect(
        |ln_rho| match solve_at(ln_rho.exp()) {
            Ok((_, p)) => p - epsilon,
            Err(_) => f64::NAN,
        },
        lo.ln(),
        hi.ln(),
        DUAL_BISECT_TOL,
    )?;
    let total_rate = ln_total.exp();
    let (allocation, outage) = solve_at(total_rate)?;
    Ok(RateDual { allocation, total_rate, outage })
}

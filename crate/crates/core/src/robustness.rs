//! Local sensitivity of the optimised outage to parameter perturbations.
//!
//! The measure is dimensionless: `δ = |ΔP*/P*| / |Δu/u|` for a parameter
//! `u` (one stream's power or rate). Three estimators are provided, in
//! decreasing order of assumption and increasing order of cost:
//!
//!  * closed form — the asymptotic expressions for each allocator
//!    (`δ_1 ≈ n-m+1` with the `b_i` ladder for power allocation; the
//!    `R_i*/b`-type constants for rate allocation);
//!  * multiplier — `δ = ν u*/P*` from the stationarity of the solved
//!    optimum, exact on the first-order objective, approximate on the
//!    exact one;
//!  * finite difference — central difference of the exact outage,
//!    assumption-free, the referee for the other two.
//!
//! Perturbations are unilateral: one parameter moves and nothing else is
//! re-imposed, matching the definition above. A constraint-preserving
//! variant (the rest of the block rescaled to keep the budget) is offered
//! separately because the two answer different questions — "what if this
//! amplifier drifts" versus "what if the budget is re-split".
//!
//! A word of caution encoded in the tests: the closed-form rate constant
//! `(n-1)!/(b (n-m_A+m-1)!)` is only consistent with the multiplier and
//! finite-difference estimates when all streams are active (`m_A = m`).
//! With muted streams it understates the sensitivity — by a factor of
//! about 2.28 for a 2x2 system with one stream off at 30 dB — for the
//! same reason the matching closed-form outage constant overcounts there;
//! both forms are exposed rather than silently repaired.

use crate::apa::{apa_coefficients, apa_exact};
use crate::apra::apra_exact;
use crate::ara::{ara_closed_form, ara_coefficients, ara_exact};
use crate::apra::apra_closed_form;
use crate::config::{RateSpec, Strategy, SystemConfig};
use crate::error::{Error, Result};
use crate::math::ln_factorial;
use crate::outage::{system_outage, Allocation};

const SOLVER_TOL: f64 = 1e-9;

/// Which knob of which stream a sensitivity refers to (1-based stream).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    Power(usize),
    Rate(usize),
}

/// How a sensitivity was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    Multiplier,
    FiniteDifference,
}

/// Which solved point a sensitivity was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimumPoint {
    /// The first-order (water-filling / KKT) optimum.
    FirstOrder,
    /// The exact-objective projected-gradient refinement.
    Refined,
}

/// One sensitivity estimate.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityReport {
    pub parameter: Parameter,
    /// Dimensionless local sensitivity, nonnegative.
    pub delta: f64,
    pub method: Method,
    pub at: OptimumPoint,
    /// True when a feasibility edge forced a one-sided difference.
    pub one_sided: bool,
}

fn report(parameter: Parameter, delta: f64, method: Method, at: OptimumPoint) -> SensitivityReport {
    SensitivityReport { parameter, delta, method, at, one_sided: false }
}

/// Printed closed-form rate/power constant `(n-1)!/(b (n-m_A+m-1)!)`.
fn printed_rate_constant(cfg: &SystemConfig, m_a: usize, b: f64) -> f64 {
    (ln_factorial(cfg.n - 1) - ln_factorial(cfg.n - m_a + cfg.m - 1)).exp() / b
}

/// Asymptotic closed-form sensitivities of a strategy's optimum.
///
/// Power allocation reports one δ per stream power; rate allocation one δ
/// per active stream rate; the joint allocator both (its power δ is the
/// same for every active stream — the uniform-power structure at work).
pub fn sensitivity_closed_form(
    cfg: &SystemConfig,
    spec: RateSpec,
    strategy: Strategy,
) -> Result<Vec<SensitivityReport>> {
    let at = OptimumPoint::FirstOrder;
    match strategy {
        Strategy::Uniform => Err(Error::Config(
            "uniform allocation has no optimum to be sensitive around".into(),
        )),
        Strategy::Apa => {
            let rate = spec.per_stream_rate(cfg)?;
            let t = rate.exp_m1() / cfg.gamma0_eff();
            let coeff = apa_coefficients(cfg);
            let lead = (cfg.n - cfg.m + 1) as f64;
            let mut out = vec![report(Parameter::Power(1), lead, Method::ClosedForm, at)];
            for i in 2..=cfg.m {
                let expo = (i as f64 - 1.0) / (cfg.n - cfg.m + i + 1) as f64;
                let delta = coeff.b_i(i) * lead / cfg.m as f64 * t.powf(expo);
                out.push(report(Parameter::Power(i), delta, Method::ClosedForm, at));
            }
            Ok(out)
        }
        Strategy::Ara => {
            let closed = ara_closed_form(cfg, spec)?;
            let m_a = closed.coefficients.active_count;
            let c = printed_rate_constant(cfg, m_a, closed.coefficients.b);
            Ok((1..=cfg.m)
                .filter(|&i| closed.allocation.rates[i - 1] > 0.0)
                .map(|i| {
                    let delta = c * closed.allocation.rates[i - 1];
                    report(Parameter::Rate(i), delta, Method::ClosedForm, at)
                })
                .collect())
        }
        Strategy::Apra => {
            let closed = apra_closed_form(cfg, spec)?;
            let b = ara_coefficients(cfg, closed.m_a)?.b;
            let c = printed_rate_constant(cfg, closed.m_a, b);
            let mut out = Vec::new();
            for i in 1..=cfg.m {
                if closed.allocation.rates[i - 1] > 0.0 {
                    out.push(report(Parameter::Power(i), c, Method::ClosedForm, at));
                    let delta = c * closed.allocation.rates[i - 1];
                    out.push(report(Parameter::Rate(i), delta, Method::ClosedForm, at));
                }
            }
            Ok(out)
        }
    }
}

/// Solved optimum of a strategy plus its multipliers `(nu_power, nu_rate)`.
fn strategy_optimum(
    cfg: &SystemConfig,
    spec: RateSpec,
    strategy: Strategy,
    at: OptimumPoint,
) -> Result<(Allocation, Option<f64>, Option<f64>)> {
    match strategy {
        Strategy::Uniform => Err(Error::Config(
            "uniform allocation has no optimum to be sensitive around".into(),
        )),
        Strategy::Apa => {
            let sol = apa_exact(cfg, spec.per_stream_rate(cfg)?, SOLVER_TOL)?;
            Ok(match at {
                OptimumPoint::FirstOrder => {
                    (sol.first_order, sol.first_order_diag.multiplier_power, None)
                }
                OptimumPoint::Refined => (sol.exact, sol.exact_diag.multiplier_power, None),
            })
        }
        Strategy::Ara => {
            let sol = ara_exact(cfg, spec, SOLVER_TOL)?;
            Ok(match at {
                OptimumPoint::FirstOrder => {
                    (sol.first_order, None, sol.first_order_diag.multiplier_rate)
                }
                OptimumPoint::Refined => (sol.exact, None, sol.exact_diag.multiplier_rate),
            })
        }
        Strategy::Apra => {
            let sol = apra_exact(cfg, spec, SOLVER_TOL)?;
            Ok(match at {
                OptimumPoint::FirstOrder => (
                    sol.first_order,
                    sol.first_order_diag.multiplier_power,
                    sol.first_order_diag.multiplier_rate,
                ),
                OptimumPoint::Refined => (
                    sol.exact,
                    sol.exact_diag.multiplier_power,
                    sol.exact_diag.multiplier_rate,
                ),
            })
        }
    }
}

/// Multiplier-identity sensitivities `δ = ν u*/P*` at a solved optimum.
pub fn sensitivity_multiplier(
    cfg: &SystemConfig,
    spec: RateSpec,
    strategy: Strategy,
    at: OptimumPoint,
) -> Result<Vec<SensitivityReport>> {
    let (alloc, nu_power, nu_rate) = strategy_optimum(cfg, spec, strategy, at)?;
    let p_star = system_outage(cfg, &alloc)?.system_exact;
    if !(p_star > 0.0) {
        return Err(Error::Domain("optimised outage vanished; sensitivity undefined".into()));
    }
    let mut out = Vec::new();
    for i in 1..=cfg.m {
        if let Some(nu) = nu_power {
            let u = alloc.powers[i - 1];
            if u > 0.0 {
                out.push(report(Parameter::Power(i), nu * u / p_star, Method::Multiplier, at));
            }
        }
        if let Some(nu) = nu_rate {
            let u = alloc.rates[i - 1];
            if u > 0.0 {
                out.push(report(Parameter::Rate(i), nu * u / p_star, Method::Multiplier, at));
            }
        }
    }
    Ok(out)
}

fn parameter_value(alloc: &Allocation, parameter: Parameter) -> Result<f64> {
    let (idx, slot) = match parameter {
        Parameter::Power(i) => (i, &alloc.powers),
        Parameter::Rate(i) => (i, &alloc.rates),
    };
    if idx < 1 || idx > alloc.stream_count() {
        return Err(Error::Dimension(format!(
            "stream index {idx} outside 1..={}",
            alloc.stream_count()
        )));
    }
    Ok(slot[idx - 1])
}

fn with_parameter(alloc: &Allocation, parameter: Parameter, value: f64) -> Allocation {
    let mut out = alloc.clone();
    match parameter {
        Parameter::Power(i) => out.powers[i - 1] = value,
        Parameter::Rate(i) => out.rates[i - 1] = value,
    }
    out
}

/// Finite-difference and multiplier estimates for one parameter.
#[derive(Debug, Clone, Copy)]
pub struct FdSensitivity {
    pub finite_difference: SensitivityReport,
    /// Absent when the strategy carries no multiplier for this knob
    /// (e.g. a power parameter under rate-only allocation).
    pub multiplier: Option<SensitivityReport>,
}

/// Central-difference sensitivity of the exact outage at the refined
/// optimum, with the matching multiplier-identity estimate.
///
/// The relative step must lie in `[1e-6, 1e-2]`. The perturbation is
/// unilateral. A side whose evaluation fails or saturates flips the
/// estimate to one-sided and flags it.
pub fn sensitivity_finite_difference(
    cfg: &SystemConfig,
    spec: RateSpec,
    strategy: Strategy,
    parameter: Parameter,
    step: f64,
) -> Result<FdSensitivity> {
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::Domain(format!(
            "relative step {step} outside [1e-6, 1e-2]"
        )));
    }
    let (alloc, nu_power, nu_rate) = strategy_optimum(cfg, spec, strategy, OptimumPoint::Refined)?;
    let p_star = system_outage(cfg, &alloc)?.system_exact;
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(Error::Domain(format!(
            "optimised outage {p_star} leaves no room for local analysis"
        )));
    }
    let u = parameter_value(&alloc, parameter)?;
    let at = OptimumPoint::Refined;

    let nu = match parameter {
        Parameter::Power(_) => nu_power,
        Parameter::Rate(_) => nu_rate,
    };
    let multiplier =
        nu.map(|nu| report(parameter, nu * u / p_star, Method::Multiplier, at));

    if u == 0.0 {
        // A muted knob cannot move relatively; its sensitivity is nil by
        // the normalised definition.
        return Ok(FdSensitivity {
            finite_difference: report(parameter, 0.0, Method::FiniteDifference, at),
            multiplier,
        });
    }
    let eval = |v: f64| -> Option<f64> {
        let p = system_outage(cfg, &with_parameter(&alloc, parameter, v)).ok()?.system_exact;
        (p < 1.0).then_some(p)
    };
    let up = eval(u * (1.0 + step));
    let dn = eval(u * (1.0 - step));
    let (delta, one_sided) = match (up, dn) {
        (Some(pu), Some(pd)) => ((pu - pd).abs() / (2.0 * step * p_star), false),
        (Some(pu), None) => ((pu - p_star).abs() / (step * p_star), true),
        (None, Some(pd)) => ((p_star - pd).abs() / (step * p_star), true),
        (None, None) => {
            return Err(Error::Domain(
                "both perturbation sides left the evaluable region".into(),
            ))
        }
    };
    Ok(FdSensitivity {
        finite_difference: SensitivityReport {
            parameter,
            delta,
            method: Method::FiniteDifference,
            at,
            one_sided,
        },
        multiplier,
    })
}

/// Constraint-preserving variant: the perturbed knob keeps its block's
/// budget by rescaling the other entries of the same block.
///
/// This answers a different question than the unilateral estimate — the
/// budget is re-imposed — and is labeled by this function only, never
/// mixed into the plain finite-difference reports. A block with a single
/// carrier cannot be perturbed this way and reports zero.
pub fn sensitivity_constraint_preserving(
    cfg: &SystemConfig,
    spec: RateSpec,
    strategy: Strategy,
    parameter: Parameter,
    step: f64,
) -> Result<SensitivityReport> {
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::Domain(format!(
            "relative step {step} outside [1e-6, 1e-2]"
        )));
    }
    let (alloc, _, _) = strategy_optimum(cfg, spec, strategy, OptimumPoint::Refined)?;
    let p_star = system_outage(cfg, &alloc)?.system_exact;
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(Error::Domain(format!(
            "optimised outage {p_star} leaves no room for local analysis"
        )));
    }
    let u = parameter_value(&alloc, parameter)?;
    let at = OptimumPoint::Refined;
    let block = |a: &Allocation| match parameter {
        Parameter::Power(_) => a.powers.clone(),
        Parameter::Rate(_) => a.rates.clone(),
    };
    let total: f64 = block(&alloc).iter().sum();
    if u == 0.0 || total - u <= 0.0 {
        return Ok(report(parameter, 0.0, Method::FiniteDifference, at));
    }
    let idx = match parameter {
        Parameter::Power(i) | Parameter::Rate(i) => i - 1,
    };
    let eval = |v: f64| -> Result<f64> {
        let mut values = block(&alloc);
        let scale = (total - v) / (total - u);
        for (j, slot) in values.iter_mut().enumerate() {
            *slot = if j == idx { v } else { *slot * scale };
        }
        let candidate = match parameter {
            Parameter::Power(_) => Allocation { powers: values, rates: alloc.rates.clone() },
            Parameter::Rate(_) => Allocation { powers: alloc.powers.clone(), rates: values },
        };
        Ok(system_outage(cfg, &candidate)?.system_exact)
    };
    let pu = eval(u * (1.0 + step))?;
    let pd = eval(u * (1.0 - step))?;
    Ok(report(
        parameter,
        (pu - pd).abs() / (2.0 * step * p_star),
        Method::FiniteDifference,
        at,
    ))
}

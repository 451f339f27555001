//! Small numerical solvers: bisection, bracket expansion, Euclidean simplex
//! projection, and a projected-gradient loop with Armijo backtracking.
//!
//! Nothing here knows about outage probabilities; these are the generic
//! engines the allocation modules drive.

use crate::error::{Error, Result};

const MAX_BISECT_ITER: usize = 240;

/// Find a root of `f` inside `[lo, hi]` by bisection.
///
/// `f(lo)` and `f(hi)` must have opposite signs (a zero endpoint is returned
/// immediately). Stops once the bracket width drops below
/// `tol * max(1, |mid|)` or the midpoint stops moving in f64.
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() {
        return Err(Error::Bracketing(format!("NaN at bracket endpoints f({lo})={flo}, f({hi})={fhi}")));
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracketing(format!(
            "no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}"
        )));
    }
    for _ in 0..MAX_BISECT_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid.clamp(lo, hi));
        }
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * mid.abs().max(1.0) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expand multiplicatively from `x0 > 0` until `f` changes sign, assuming
/// `f` is monotone on the positive axis. Returns a sign-changing bracket.
pub fn bracket_multiplicative(f: impl Fn(f64) -> f64, x0: f64) -> Result<(f64, f64)> {
    if !(x0 > 0.0) || !x0.is_finite() {
        return Err(Error::Bracketing(format!("bracket seed must be positive, got {x0}")));
    }
    let f0 = f(x0);
    if f0 == 0.0 {
        return Ok((x0, x0));
    }
    if f0.is_nan() {
        return Err(Error::Bracketing(format!("NaN at bracket seed {x0}")));
    }
    const GROW: f64 = 8.0;
    // Try both directions; monotonicity means at most one succeeds.
    let mut up = x0;
    for _ in 0..200 {
        let next = up * GROW;
        if !next.is_finite() {
            break;
        }
        if f(next).signum() != f0.signum() {
            return Ok((up, next));
        }
        up = next;
    }
    let mut down = x0;
    for _ in 0..200 {
        let next = down / GROW;
        if next == 0.0 {
            break;
        }
        if f(next).signum() != f0.signum() {
            return Ok((next, down));
        }
        down = next;
    }
    Err(Error::Bracketing(format!(
        "no sign change found expanding from {x0} (f({x0}) = {f0})"
    )))
}

/// Euclidean projection of `v` onto `{ x : x_i >= floor, sum x_i = total }`.
pub fn project_simplex(v: &[f64], total: f64, floor: f64) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    let budget = total - floor * n as f64;
    if budget < -1e-12 {
        return Err(Error::Infeasible(format!(
            "simplex {{sum = {total}, x >= {floor}}} with {n} coordinates is empty"
        )));
    }
    let budget = budget.max(0.0);
    // Shift so the constraint becomes the standard nonnegative simplex.
    let mut w: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = w.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("non-finite coordinate"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &wj) in sorted.iter().enumerate() {
        cumsum += wj;
        let cand = (cumsum - budget) / (j as f64 + 1.0);
        if wj - cand > 0.0 {
            theta = cand;
        } else {
            break;
        }
    }
    for x in &mut w {
        *x = (*x - theta).max(0.0) + floor;
    }
    // Kill the residual rounding error in the sum constraint.
    let sum: f64 = w.iter().sum();
    if sum > 0.0 && total > 0.0 {
        let fix = total / sum;
        for x in &mut w {
            *x *= fix;
        }
    }
    Ok(w)
}

/// Result of a projected-gradient run.
#[derive(Debug, Clone)]
pub struct PgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the unit-step gradient mapping at the final iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Minimise `f` over a convex set given by `project`, starting at `x0`.
///
/// The gradient is rescaled by `f(x0)` so the stopping residual is
/// meaningful whether the objective sits at 1e-2 or 1e-12. Steps use
/// Armijo backtracking from a unit step; the run stops when the gradient
/// mapping falls below `tol` or after `max_iter` iterations.
pub fn projected_gradient_descent(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    project: impl Fn(&[f64]) -> Result<Vec<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<PgOutcome> {
    const ARMIJO: f64 = 1e-4;
    const STEP_FLOOR: f64 = 1e-12;

    let mut x = project(x0)?;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Domain(format!("objective not finite at start: {fx}")));
    }
    let scale = fx.abs().max(f64::MIN_POSITIVE);
    let mut residual = f64::INFINITY;

    for iter in 0..max_iter {
        let g: Vec<f64> = grad(&x).iter().map(|gi| gi / scale).collect();
        let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
        let mapped = project(&trial)?;
        residual = x
            .iter()
            .zip(&mapped)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(PgOutcome { x, iterations: iter, residual, converged: true });
        }

        let mut t = 1.0;
        let mut moved = false;
        while t >= STEP_FLOOR {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let y = project(&trial)?;
            let decrease: f64 = g.iter().zip(x.iter().zip(&y)).map(|(gi, (xi, yi))| gi * (xi - yi)).sum();
            let fy = f(&y);
            if fy.is_finite() && fy <= fx - ARMIJO * decrease.max(0.0) * scale && fy < fx {
                x = y;
                fx = fy;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // No descent direction survives backtracking: numerically stationary.
            return Ok(PgOutcome { x, iterations: iter, residual, converged: residual < tol.max(1e-6) });
        }
    }
    Ok(PgOutcome { x, iterations: max_iter, residual, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt_two() {
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-12, "sqrt(2) via bisection: {root}");
    }

    #[test]
    fn bisect_rejects_unbracketed_roots() {
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn bracket_expansion_straddles_the_root() {
        // Decreasing on the positive axis, root at 1/3.
        let (lo, hi) = bracket_multiplicative(|x| 1.0 / x - 3.0, 1.0).unwrap();
        assert!(lo <= 1.0 / 3.0 && 1.0 / 3.0 <= hi, "bracket [{lo}, {hi}] misses 1/3");
        let root = bisect(|x| 1.0 / x - 3.0, lo, hi, 1e-14).unwrap();
        assert!((root - 1.0 / 3.0).abs() < 1e-12);
        // Root far above the seed.
        let (lo, hi) = bracket_multiplicative(|x| x - 1e9, 1.0).unwrap();
        assert!(lo <= 1e9 && 1e9 <= hi);
        assert!(bracket_multiplicative(|x| x + 1.0, 1.0).is_err(), "no root to find");
    }

    fn check_projection_kkt(v: &[f64], x: &[f64], total: f64, floor: f64) {
        let sum: f64 = x.iter().sum();
        assert!((sum - total).abs() < 1e-9 * total.abs().max(1.0), "sum constraint: {sum}");
        for &xi in x {
            assert!(xi >= floor - 1e-12, "floor violated: {xi} < {floor}");
        }
        // Interior coordinates share a common shift v_i - x_i.
        let shifts: Vec<f64> = v
            .iter()
            .zip(x)
            .filter(|(_, &xi)| xi > floor + 1e-9)
            .map(|(vi, xi)| vi - xi)
            .collect();
        for w in shifts.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-8, "unequal interior shifts {shifts:?}");
        }
        // Clamped coordinates must not want to grow past the interior shift.
        if let Some(&s) = shifts.first() {
            for (vi, &xi) in v.iter().zip(x) {
                if xi <= floor + 1e-9 {
                    assert!(vi - floor <= s + 1e-8, "clamped coordinate wants in: v={vi}");
                }
            }
        }
    }

    #[test]
    fn simplex_projection_satisfies_kkt() {
        let cases: &[(&[f64], f64, f64)] = &[
            (&[2.0, 0.0], 2.0, 0.0),
            (&[0.8, 0.8], 1.0, 0.0),
            (&[5.0, -3.0, 0.0], 3.0, 0.1),
            (&[0.2, 0.9, 0.5], 1.0, 0.0),
            (&[1.0, 1.0, 1.0, 1.0], 2.0, 0.25),
        ];
        for (v, total, floor) in cases {
            let x = project_simplex(v, *total, *floor).unwrap();
            check_projection_kkt(v, &x, *total, *floor);
        }
        // A feasible point projects to itself.
        let v = [0.25, 0.5, 0.25];
        let x = project_simplex(&v, 1.0, 0.1).unwrap();
        for (a, b) in v.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12, "feasible point moved: {v:?} -> {x:?}");
        }
        assert!(project_simplex(&[1.0, 1.0], 1.0, 0.6).is_err(), "empty set must error");
    }

    #[test]
    fn projected_gradient_minimises_distance_to_simplex() {
        let c = [0.2, 0.9, 0.5];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum::<f64>();
        let grad = |x: &[f64]| x.iter().zip(&c).map(|(xi, ci)| 2.0 * (xi - ci)).collect();
        let out = projected_gradient_descent(
            f,
            grad,
            &[1.0 / 3.0; 3],
            |v| project_simplex(v, 1.0, 0.0),
            1e-10,
            10_000,
        )
        .unwrap();
        assert!(out.converged, "PG failed to converge: residual {}", out.residual);
        let direct = project_simplex(&c, 1.0, 0.0).unwrap();
        for (a, b) in out.x.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-6, "PG vs projection: {:?} vs {direct:?}", out.x);
        }
    }
}

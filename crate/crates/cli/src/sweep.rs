//! Grid evaluation: one row per (SNR point, strategy) pair.
//!
//! Points are solved in parallel and then sorted by grid position first,
//! configured strategy order second, so the emitted table is byte-stable
//! whatever the thread count.  Monte Carlo draws are sharded from the
//! configured seed inside the library, which keeps them deterministic too.
//!
//! Every float in a finished row has been passed through the `%.6e`
//! emission format once (see [`crate::csv::quantize`]); that is what lets
//! the CSV layer promise `parse(emit(rows)) == rows` with plain `f64`
//! equality instead of tolerance smudge.
//!
//! A solver failure at one grid point lands in that row's `error` column
//! and the sweep keeps going — a 60-point figure should not be held
//! hostage by one cranky corner.  The first-order outage column is capped
//! at 1: past saturation the proxy grows without bound and the cap keeps
//! the column inside [0, 1] like its neighbours.

use rayon::prelude::*;
use vblast_core::{
    apa::{apa_exact, snr_gain},
    apra::apra_exact,
    ara::ara_exact,
    channel::monte_carlo_outage,
    outage::system_outage,
    Allocation, Strategy,
};

use crate::config::SweepConfig;
use crate::csv::quantize;

const SOLVE_TOL: f64 = 1e-9;

/// One evaluated operating point.  Optional fields are empty CSV cells:
/// Monte Carlo columns when trials are off, the gain column on non-APA
/// rows, the running diversity slope on each strategy's first grid point,
/// and everything numeric when `error` is set (then `alphas`/`rates` are
/// empty vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub strategy: Strategy,
    pub p_out_exact: Option<f64>,
    pub p_out_approx: Option<f64>,
    pub p_out_mc: Option<f64>,
    pub mc_stderr: Option<f64>,
    /// Streams actually carrying rate at the optimum.
    pub m_a: Option<usize>,
    pub alphas: Vec<f64>,
    pub rates: Vec<f64>,
    /// SNR gain over the uniform reference, dB; APA rows only.
    pub snr_gain_db: Option<f64>,
    /// Two-point diversity slope against the previous grid point of the
    /// same strategy: `-Δln P / Δln γ`.
    pub diversity_running: Option<f64>,
    pub error: String,
}

struct Solved {
    alloc: Allocation,
    p_exact: f64,
    p_approx: f64,
    mc: Option<(f64, f64)>,
    gain_db: Option<f64>,
}

fn solve_point(
    config: &SweepConfig,
    snr_db: f64,
    strategy: Strategy,
) -> vblast_core::Result<Solved> {
    let sys = config.system_at(snr_db)?;
    let per_rate = config.rate.per_stream_rate(&sys)?;
    let mut gain_db = None;
    let alloc = match strategy {
        Strategy::Uniform => Allocation::uniform(sys.m, per_rate)?,
        Strategy::Apa => {
            let sol = apa_exact(&sys, per_rate, SOLVE_TOL)?;
            // The gain solve can fail in the saturated flats (outage pinned
            // at 1 has no uniform-SNR preimage); the column just stays empty.
            gain_db = snr_gain(&sys, per_rate, &sol.exact).ok().map(|g| g.gain_db);
            sol.exact
        }
        Strategy::Ara => ara_exact(&sys, config.rate, SOLVE_TOL)?.exact,
        Strategy::Apra => apra_exact(&sys, config.rate, SOLVE_TOL)?.exact,
    };
    let report = system_outage(&sys, &alloc)?;
    let mc = if config.mc_trials > 0 {
        let est = monte_carlo_outage(&sys, &alloc, config.mc_trials, config.seed)?;
        Some((est.p_out, est.stderr))
    } else {
        None
    };
    Ok(Solved {
        alloc,
        p_exact: report.system_exact,
        p_approx: report.system_approx.min(1.0),
        mc,
        gain_db,
    })
}

/// Evaluate the whole grid.  Rows come back sorted and quantised,
/// ready for [`crate::csv::emit_rows`].
pub fn run_sweep(config: &SweepConfig) -> Vec<SweepRow> {
    let points = config.snr_points();
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|pi| (0..config.strategies.len()).map(move |si| (pi, si)))
        .collect();

    let mut solved: Vec<((usize, usize), SweepRow)> = tasks
        .par_iter()
        .map(|&(pi, si)| {
            let snr_db = points[pi];
            let strategy = config.strategies[si];
            let row = match solve_point(config, snr_db, strategy) {
                Ok(s) => SweepRow {
                    snr_db,
                    strategy,
                    p_out_exact: Some(s.p_exact),
                    p_out_approx: Some(s.p_approx),
                    p_out_mc: s.mc.map(|(p, _)| p),
                    mc_stderr: s.mc.map(|(_, se)| se),
                    m_a: Some(s.alloc.active_count()),
                    alphas: s.alloc.powers,
                    rates: s.alloc.rates,
                    snr_gain_db: s.gain_db,
                    diversity_running: None,
                    error: String::new(),
                },
                Err(e) => SweepRow {
                    snr_db,
                    strategy,
                    p_out_exact: None,
                    p_out_approx: None,
                    p_out_mc: None,
                    mc_stderr: None,
                    m_a: None,
                    alphas: Vec::new(),
                    rates: Vec::new(),
                    snr_gain_db: None,
                    diversity_running: None,
                    error: e.to_string(),
                },
            };
            ((pi, si), row)
        })
        .collect();
    solved.sort_by_key(|&(key, _)| key);
    let mut rows: Vec<SweepRow> = solved.into_iter().map(|(_, row)| row).collect();

    // Running diversity slope, filled post hoc per strategy: the last
    // successfully solved point with a usable outage serves as the anchor,
    // so one failed row leaves a gap but does not break the chain.
    let mut last: Vec<Option<(f64, f64)>> = vec![None; config.strategies.len()];
    for row in rows.iter_mut() {
        let si = config.strategies.iter().position(|&s| s == row.strategy).unwrap();
        if let Some(p) = row.p_out_exact.filter(|&p| p > 0.0 && p.is_finite()) {
            if let Some((snr_prev, p_prev)) = last[si] {
                let dln_gamma = (row.snr_db - snr_prev) * std::f64::consts::LN_10 / 10.0;
                row.diversity_running = Some((p_prev.ln() - p.ln()) / dln_gamma);
            }
            last[si] = Some((row.snr_db, p));
        }
    }

    for row in rows.iter_mut() {
        row.snr_db = quantize(row.snr_db);
        row.p_out_exact = row.p_out_exact.map(quantize);
        row.p_out_approx = row.p_out_approx.map(quantize);
        row.p_out_mc = row.p_out_mc.map(quantize);
        row.mc_stderr = row.mc_stderr.map(quantize);
        row.snr_gain_db = row.snr_gain_db.map(quantize);
        row.diversity_running = row.diversity_running.map(quantize);
        for a in row.alphas.iter_mut() {
            *a = quantize(*a);
        }
        for r in row.rates.iter_mut() {
            *r = quantize(*r);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn rows_come_back_sorted_and_fully_populated() {
        let cfg = parse_config(
            "rate_nats = 2\nsnr_db_start = 10\nsnr_db_stop = 30\nsnr_db_step = 10\nstrategies = uniform, apa",
        )
        .unwrap();
        let rows = run_sweep(&cfg);
        assert_eq!(rows.len(), 6, "3 points x 2 strategies");
        let order: Vec<(f64, Strategy)> = rows.iter().map(|r| (r.snr_db, r.strategy)).collect();
        assert_eq!(
            order,
            vec![
                (10.0, Strategy::Uniform),
                (10.0, Strategy::Apa),
                (20.0, Strategy::Uniform),
                (20.0, Strategy::Apa),
                (30.0, Strategy::Uniform),
                (30.0, Strategy::Apa),
            ],
            "grid position first, configured strategy order second"
        );
        for row in &rows {
            assert!(row.error.is_empty(), "no solver failures expected: {}", row.error);
            assert_eq!(row.alphas.len(), 2, "full power vector");
            assert_eq!(row.rates.len(), 2, "full rate vector");
            assert_eq!(row.m_a, Some(2), "both streams active at R = 2");
            assert!(row.p_out_mc.is_none(), "Monte Carlo off by default");
            let (pe, pa) = (row.p_out_exact.unwrap(), row.p_out_approx.unwrap());
            assert!(pe > 0.0 && pe <= 1.0, "exact outage is a probability: {pe}");
            assert!(pa >= 0.0 && pa <= 1.0, "first-order column capped at 1: {pa}");
        }
    }

    #[test]
    fn optimised_power_rows_beat_uniform_and_carry_a_gain() {
        let cfg = parse_config(
            "rate_nats = 2\nsnr_db_start = 20\nsnr_db_stop = 40\nsnr_db_step = 10\nstrategies = uniform, apa",
        )
        .unwrap();
        let rows = run_sweep(&cfg);
        for pair in rows.chunks(2) {
            let (uni, apa) = (&pair[0], &pair[1]);
            assert!(
                apa.p_out_exact.unwrap() <= uni.p_out_exact.unwrap(),
                "optimised power must not lose to uniform at {} dB",
                uni.snr_db
            );
            let gain = apa.snr_gain_db.expect("gain column filled on APA rows");
            assert!(gain > 0.0, "positive gain over uniform, got {gain} dB");
            assert!(uni.snr_gain_db.is_none(), "gain column empty on uniform rows");
        }
    }

    #[test]
    fn running_diversity_appears_from_the_second_point_on() {
        let cfg = parse_config(
            "rate_nats = 1\nsnr_db_start = 25\nsnr_db_stop = 40\nsnr_db_step = 5\nstrategies = uniform",
        )
        .unwrap();
        let rows = run_sweep(&cfg);
        assert!(rows[0].diversity_running.is_none(), "no slope before two points");
        for row in &rows[1..] {
            let d = row.diversity_running.expect("slope from the second point on");
            // 2x2 uniform: first-order diversity 1, still drifting at finite SNR.
            assert!(d > 0.5 && d < 2.0, "plausible uniform slope, got {d}");
        }
    }

    #[test]
    fn identical_configs_give_identical_rows_including_monte_carlo() {
        let text = "mux_gain = 1\nsnr_db_start = 10\nsnr_db_stop = 15\nsnr_db_step = 5\nmc_trials = 2000\nseed = 9";
        let cfg = parse_config(text).unwrap();
        let a = run_sweep(&cfg);
        let b = run_sweep(&cfg);
        assert_eq!(a, b, "sweeps are deterministic, Monte Carlo included");
        assert!(
            a.iter().all(|r| r.p_out_mc.is_some() && r.mc_stderr.is_some()),
            "Monte Carlo columns filled when trials > 0"
        );
    }
}

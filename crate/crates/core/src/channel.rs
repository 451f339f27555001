//! Rayleigh channel sampling and Monte Carlo outage validation.
//!
//! The ZF-SIC receiver decodes stream 1 first, nulling the `m - 1` not yet
//! decoded streams, then cancels and moves on. Its effective power gains
//! fall out of a QR decomposition of the channel matrix with the columns
//! reversed so the first-decoded stream sits last: `g_i = |r_{jj}|^2` with
//! `j = m - i + 1`. For i.i.d. CN(0, 1) entries, `g_i` is Erlang with
//! shape `n - m + i` and unit rate — the analytic model the rest of the
//! crate is built on. The sampler here exists to validate that claim and
//! the outage formulas end to end.
//!
//! Monte Carlo runs are split into fixed-size shards of [`SHARD_TRIALS`]
//! trials. Shard `s` draws from `ChaCha8Rng` seeded with the master seed
//! on stream `s`, so the estimate depends only on `(seed, trials)` and not
//! on thread count or scheduling.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::outage::Allocation;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::FRAC_1_SQRT_2;

/// Trials per RNG shard; fixed so results never depend on parallelism.
pub const SHARD_TRIALS: u64 = 8192;

/// Effective ZF-SIC power gains of an `n x m` channel, decoding order.
///
/// `h` is column-major with `n * m` entries; column `j` is the signature
/// of transmit stream `j + 1`.
pub fn effective_gains(h: &[Complex64], n: usize, m: usize) -> Result<Vec<f64>> {
    if n == 0 || m == 0 || n < m {
        return Err(Error::Dimension(format!("need n >= m >= 1, got n={n}, m={m}")));
    }
    if h.len() != n * m {
        return Err(Error::Dimension(format!(
            "channel matrix needs {} entries, got {}",
            n * m,
            h.len()
        )));
    }
    // Column-reversed copy: stream 1 (decoded first) becomes column m.
    let mut a = vec![Complex64::ZERO; n * m];
    for j in 0..m {
        a[j * n..(j + 1) * n].copy_from_slice(&h[(m - 1 - j) * n..(m - j) * n]);
    }
    // Householder QR; |r_jj|^2 is the norm of column j's live tail.
    let mut diag_sq = vec![0.0f64; m];
    for j in 0..m {
        let norm_sq: f64 = a[j * n + j..(j + 1) * n].iter().map(|z| z.norm_sqr()).sum();
        diag_sq[j] = norm_sq;
        if j + 1 == m || norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        // v = x + sign(x_0) ||x|| e_1, with the complex sign of x_0.
        let x0 = a[j * n + j];
        let phase = if x0.norm() == 0.0 { Complex64::ONE } else { x0 / x0.norm() };
        let mut v: Vec<Complex64> = a[j * n + j..(j + 1) * n].to_vec();
        v[0] += phase * norm;
        let v_norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if v_norm_sq == 0.0 {
            continue;
        }
        for col in (j + 1)..m {
            let tail = &mut a[col * n + j..(col + 1) * n];
            let dot: Complex64 = v.iter().zip(tail.iter()).map(|(vi, ti)| vi.conj() * ti).sum();
            let scale = dot * (2.0 / v_norm_sq);
            for (ti, vi) in tail.iter_mut().zip(&v) {
                *ti -= scale * vi;
            }
        }
    }
    // Column j of the reversed matrix carries stream m - j.
    diag_sq.reverse();
    Ok(diag_sq)
}

/// Draw one i.i.d. CN(0, 1) channel and return its effective gains.
pub fn sample_channel_gains(cfg: &SystemConfig, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    let h: Vec<Complex64> = (0..cfg.n * cfg.m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect();
    effective_gains(&h, cfg.n, cfg.m)
}

/// Result of a Monte Carlo outage run.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEstimate {
    pub p_out: f64,
    /// Binomial standard error `sqrt(p (1 - p) / trials)`.
    pub stderr: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Decoding thresholds `x_i`; `+inf` marks a stream that always fails.
fn outage_thresholds(cfg: &SystemConfig, alloc: &Allocation) -> Result<Vec<f64>> {
    if alloc.stream_count() != cfg.m {
        return Err(Error::Dimension(format!(
            "allocation has {} streams, system has {}",
            alloc.stream_count(),
            cfg.m
        )));
    }
    let g_eff = cfg.gamma0_eff();
    Ok(alloc
        .powers
        .iter()
        .zip(&alloc.rates)
        .map(|(&a, &r)| {
            if r == 0.0 {
                0.0
            } else if a == 0.0 {
                f64::INFINITY
            } else {
                r.exp_m1() / (a * g_eff)
            }
        })
        .collect())
}

/// Outage count of a single shard: `ChaCha8Rng(seed)` on stream `shard`.
///
/// Exposed so reduction order can be audited; [`monte_carlo_outage`] is
/// exactly the sum of these counts over shards.
pub fn shard_outage_count(
    cfg: &SystemConfig,
    alloc: &Allocation,
    seed: u64,
    shard: u64,
    trials: u64,
) -> Result<u64> {
    let thresholds = outage_thresholds(cfg, alloc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    let mut count = 0u64;
    for _ in 0..trials {
        let gains = sample_channel_gains(cfg, &mut rng)?;
        if gains.iter().zip(&thresholds).any(|(&g, &x)| g < x) {
            count += 1;
        }
    }
    Ok(count)
}

/// Estimate the system outage of `alloc` by simulating `trials` channels.
///
/// Deterministic in `(seed, trials)`: work is split into fixed shards of
/// [`SHARD_TRIALS`] channels, one RNG stream per shard, summed in shard
/// order whatever the thread count.
pub fn monte_carlo_outage(
    cfg: &SystemConfig,
    alloc: &Allocation,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if trials == 0 {
        return Err(Error::Config("Monte Carlo needs at least one trial".into()));
    }
    let shards = trials.div_ceil(SHARD_TRIALS);
    let counts: Vec<Result<u64>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * SHARD_TRIALS;
            let len = SHARD_TRIALS.min(trials - lo);
            shard_outage_count(cfg, alloc, seed, s, len)
        })
        .collect();
    let mut total = 0u64;
    for c in counts {
        total += c?;
    }
    let p = total as f64 / trials as f64;
    Ok(MonteCarloEstimate {
        p_out: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
        seed,
    })
}

/// Kolmogorov–Smirnov statistic of `samples` against the Erlang(`k`, 1)
/// CDF. Sorts the slice in place.
pub fn ks_statistic_erlang(samples: &mut [f64], k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Dimension("KS test needs samples".into()));
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = crate::math::mrc_outage_cdf(k, x)?;
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: residual of `h_i` after projecting out the
    /// not-yet-decoded columns with classical Gram-Schmidt.
    fn gains_by_projection(h: &[Complex64], n: usize, m: usize) -> Vec<f64> {
        let col = |j: usize| &h[j * n..(j + 1) * n];
        (0..m)
            .map(|i| {
                let mut basis: Vec<Vec<Complex64>> = Vec::new();
                for j in (i + 1)..m {
                    let mut v = col(j).to_vec();
                    for b in &basis {
                        let dot: Complex64 =
                            b.iter().zip(v.iter()).map(|(bi, vi)| bi.conj() * vi).sum();
                        for (vi, bi) in v.iter_mut().zip(b) {
                            *vi -= dot * bi;
                        }
                    }
                    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    if norm > 1e-300 {
                        for vi in &mut v {
                            *vi /= norm;
                        }
                        basis.push(v);
                    }
                }
                let mut r = col(i).to_vec();
                for b in &basis {
                    let dot: Complex64 =
                        b.iter().zip(r.iter()).map(|(bi, ri)| bi.conj() * ri).sum();
                    for (ri, bi) in r.iter_mut().zip(b) {
                        *ri -= dot * bi;
                    }
                }
                r.iter().map(|z| z.norm_sqr()).sum()
            })
            .collect()
    }

    #[test]
    fn effective_gains_match_hand_computed_projections() {
        // Columns h_1 = (1, 0), h_2 = (1, 1): stream 1 is decoded first and
        // must null h_2 (residual 1/2); stream 2 then enjoys full MRC (2).
        let h = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        let g = effective_gains(&h, 2, 2).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12, "nulled gain: {}", g[0]);
        assert!((g[1] - 2.0).abs() < 1e-12, "MRC gain: {}", g[1]);
    }

    #[test]
    fn qr_gains_agree_with_gram_schmidt_on_random_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, m) in &[(2usize, 2usize), (4, 4), (4, 2), (5, 3), (3, 1)] {
            for _ in 0..40 {
                let h: Vec<Complex64> = (0..n * m)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    })
                    .collect();
                let fast = effective_gains(&h, n, m).unwrap();
                let slow = gains_by_projection(&h, n, m);
                for (i, (a, b)) in fast.iter().zip(&slow).enumerate() {
                    assert!(
                        (a - b).abs() <= 1e-10 * b.max(1.0),
                        "{n}x{m} stream {}: QR {a} vs projection {b}",
                        i + 1
                    );
                }
            }
        }
    }

    #[test]
    fn sampled_gains_follow_the_erlang_model() {
        let cfg = SystemConfig::new(4, 3, 100.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 4000usize;
        let mut per_stream: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); cfg.m];
        for _ in 0..trials {
            let g = sample_channel_gains(&cfg, &mut rng).unwrap();
            for (bucket, gi) in per_stream.iter_mut().zip(g) {
                bucket.push(gi);
            }
        }
        // 1% KS critical value for large n.
        let crit = 1.628 / (trials as f64).sqrt();
        for (idx, bucket) in per_stream.iter_mut().enumerate() {
            let k = cfg.diversity_order(idx + 1);
            let mean = bucket.iter().sum::<f64>() / trials as f64;
            assert!(
                (mean - k as f64).abs() < 4.0 * (k as f64 / trials as f64).sqrt(),
                "stream {} mean {mean} vs shape {k}",
                idx + 1
            );
            let d = ks_statistic_erlang(bucket, k).unwrap();
            assert!(d < crit, "stream {} KS statistic {d} exceeds {crit}", idx + 1);
        }
    }

    #[test]
    fn monte_carlo_confirms_the_analytic_outage() {
        // 2x2 at 10 dB, uniform rates of 1 nat: exact outage 0.16897158...
        let cfg = SystemConfig::with_snr_db(2, 2, 10.0, 0.0).unwrap();
        let alloc = Allocation::uniform(2, 1.0).unwrap();
        let exact = 0.168_971_581_661_407_6;
        let mc = monte_carlo_outage(&cfg, &alloc, 200_000, 42).unwrap();
        assert!(
            (mc.p_out - exact).abs() < 4.0 * mc.stderr,
            "MC {} vs exact {exact} (stderr {})",
            mc.p_out,
            mc.stderr
        );
        let expected_se = (mc.p_out * (1.0 - mc.p_out) / 200_000.0).sqrt();
        assert!((mc.stderr - expected_se).abs() < 1e-15);
        assert_eq!(mc.trials, 200_000);
        assert_eq!(mc.seed, 42);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_shard_additive() {
        let cfg = SystemConfig::with_snr_db(2, 2, 10.0, 0.0).unwrap();
        let alloc = Allocation::uniform(2, 1.0).unwrap();
        let trials = 3 * SHARD_TRIALS + 1000;
        let a = monte_carlo_outage(&cfg, &alloc, trials, 9).unwrap();
        let b = monte_carlo_outage(&cfg, &alloc, trials, 9).unwrap();
        assert_eq!(a.p_out, b.p_out, "same seed must reproduce bit-exactly");
        // Serial shard-by-shard recount matches the parallel reduction.
        let mut total = 0u64;
        let mut left = trials;
        let mut shard = 0u64;
        while left > 0 {
            let len = SHARD_TRIALS.min(left);
            total += shard_outage_count(&cfg, &alloc, 9, shard, len).unwrap();
            shard += 1;
            left -= len;
        }
        assert_eq!(a.p_out, total as f64 / trials as f64, "shard sum mismatch");
        let c = monte_carlo_outage(&cfg, &alloc, trials, 10).unwrap();
        assert_ne!(a.p_out, c.p_out, "different seeds should differ");
    }

    #[test]
    fn degenerate_allocations_simulate_correctly() {
        let cfg = SystemConfig::with_snr_db(2, 2, 10.0, 0.0).unwrap();
        // Zero-rate streams never fail.
        let idle = Allocation::uniform(2, 0.0).unwrap();
        let mc = monte_carlo_outage(&cfg, &idle, 5000, 1).unwrap();
        assert_eq!(mc.p_out, 0.0);
        // Rate on a dead stream always fails.
        let dead = Allocation::new(vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
        let mc = monte_carlo_outage(&cfg, &dead, 5000, 1).unwrap();
        assert_eq!(mc.p_out, 1.0);
        assert!(monte_carlo_outage(&cfg, &idle, 0, 1).is_err());
    }
}

//! System-level configuration: antenna counts, nominal SNR, coding gap.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Static description of the link: `n` receive antennas, `m` transmit
/// streams, nominal per-stream SNR `gamma0` (linear), and the SNR gap to
/// capacity `gap >= 1` (linear) of the actual modulation and coding.
///
/// Stream indices are 1-based in every public API, matching the decoding
/// order of the successive-cancellation receiver: stream `i` is detected
/// `i`-th and enjoys diversity order `n - m + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    pub gamma0: f64,
    pub gap: f64,
}

impl SystemConfig {
    pub fn new(n: usize, m: usize, gamma0: f64, gap: f64) -> Result<Self> {
        if m == 0 || n < m {
            return Err(Error::Config(format!(
                "need n >= m >= 1 transmit/receive antennas, got n={n}, m={m}"
            )));
        }
        if !(gamma0 > 0.0) || !gamma0.is_finite() {
            return Err(Error::Config(format!("nominal SNR must be positive, got {gamma0}")));
        }
        if !(gap >= 1.0) || !gap.is_finite() {
            return Err(Error::Config(format!("SNR gap must be >= 1 (0 dB), got {gap}")));
        }
        Ok(Self { n, m, gamma0, gap })
    }

    /// Convenience constructor taking SNR and gap in decibels.
    pub fn with_snr_db(n: usize, m: usize, snr_db: f64, gap_db: f64) -> Result<Self> {
        Self::new(n, m, 10f64.powf(snr_db / 10.0), 10f64.powf(gap_db / 10.0))
    }

    /// Gap-reduced SNR actually available to the code: `gamma0 / gap`.
    pub fn gamma0_eff(&self) -> f64 {
        self.gamma0 / self.gap
    }

    /// Diversity order of stream `i` (1-based): `n - m + i`.
    pub fn diversity_order(&self, i: usize) -> usize {
        debug_assert!(i >= 1 && i <= self.m);
        self.n - self.m + i
    }
}

/// How the per-stream rate targets are specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSpec {
    /// Every stream carries `r` nats per channel use before reallocation.
    FixedRate(f64),
    /// Total rate scales with SNR: `m * R = r * ln(1 + gamma0_eff)`.
    MultiplexingGain(f64),
}

impl RateSpec {
    /// Per-stream rate target in nats for the given configuration.
    pub fn per_stream_rate(&self, cfg: &SystemConfig) -> Result<f64> {
        let r = match *self {
            RateSpec::FixedRate(r) => r,
            RateSpec::MultiplexingGain(g) => {
                if !(g >= 0.0) {
                    return Err(Error::Config(format!("multiplexing gain must be >= 0, got {g}")));
                }
                g / cfg.m as f64 * cfg.gamma0_eff().ln_1p()
            }
        };
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Config(format!("per-stream rate must be positive, got {r}")));
        }
        Ok(r)
    }
}

/// Allocation strategies exposed by the library and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Equal power, equal rate (the plain receiver).
    Uniform,
    /// Optimised average powers, equal rates.
    Apa,
    /// Equal powers, optimised rates.
    Ara,
    /// Jointly optimised powers and rates.
    Apra,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Apa => "apa",
            Strategy::Ara => "ara",
            Strategy::Apra => "apra",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Strategy::Uniform),
            "apa" => Ok(Strategy::Apa),
            "ara" => Ok(Strategy::Ara),
            "apra" => Ok(Strategy::Apra),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected uniform|apa|ara|apra)"
            ))),
        }
    }
}

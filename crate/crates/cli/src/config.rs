//! Flat key–value sweep configuration: parsing, defaults, validation.
//!
//! One `key = value` pair per line; `#` starts a comment (full-line or
//! trailing) and blank lines are skipped.  Recognised keys:
//!
//! ```text
//! n = 2                     # receive antennas            (default 2)
//! m = 2                     # transmit streams            (default 2)
//! snr_db_start = 0          # grid start, dB              (default 0)
//! snr_db_stop = 40          # grid stop, inclusive, dB    (default 40)
//! snr_db_step = 2           # grid step, dB, > 0          (default 2)
//! gap_db = 0                # SNR gap to capacity, dB     (default 0)
//! rate_nats = 2.0           # per-stream rate, nats      \
//! rate_bits = 2.885         # per-stream rate, bits       } exactly one
//! mux_gain = 0.666667       # multiplexing gain r        /
//! strategies = uniform, apa, ara, apra    # evaluation order (default all)
//! mc_trials = 100000        # Monte Carlo trials, 0 = off (default 0)
//! seed = 42                 # Monte Carlo seed            (default 0)
//! ```
//!
//! Unknown keys, duplicate keys and malformed values are rejected with the
//! offending line number: a sweep that silently ignored a typo like
//! `snr_db_setp` would sweep the wrong grid and nobody would notice until
//! the figure looked odd.  Rates given in bits are converted to nats here,
//! at the boundary, so everything downstream speaks one unit.

use std::fmt;

use vblast_core::{RateSpec, Strategy, SystemConfig};

/// Hard cap on grid size so a fat-fingered step cannot eat the machine.
const MAX_POINTS: usize = 100_000;

/// A rejected configuration, with the source line when one is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line in the config text; `None` for cross-field checks and
    /// flag-built configurations that never had lines.
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn global(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A validated sweep recipe.  `rate` is per stream; strategies are
/// evaluated (and emitted) in the order listed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n: usize,
    pub m: usize,
    pub snr_db_start: f64,
    pub snr_db_stop: f64,
    pub snr_db_step: f64,
    pub gap_db: f64,
    pub rate: RateSpec,
    pub strategies: Vec<Strategy>,
    pub mc_trials: u64,
    pub seed: u64,
}

impl SweepConfig {
    /// The SNR grid in dB: `start, start + step, ...` up to and including
    /// `stop` (with a small slack so `0:2:40` really ends at 40).
    pub fn snr_points(&self) -> Vec<f64> {
        let mut points = Vec::new();
        let mut j = 0usize;
        loop {
            let snr = self.snr_db_start + j as f64 * self.snr_db_step;
            if snr > self.snr_db_stop + 1e-9 {
                break;
            }
            points.push(snr);
            j += 1;
        }
        points
    }

    /// System description at one grid point.
    pub fn system_at(&self, snr_db: f64) -> vblast_core::Result<SystemConfig> {
        SystemConfig::with_snr_db(self.n, self.m, snr_db, self.gap_db)
    }
}

/// Partially specified configuration: what a file or a flag set provides
/// before defaults fill the gaps.  `merge` lets command-line flags override
/// file values field by field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDraft {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub snr_db_start: Option<f64>,
    pub snr_db_stop: Option<f64>,
    pub snr_db_step: Option<f64>,
    pub gap_db: Option<f64>,
    pub rate_nats: Option<f64>,
    pub rate_bits: Option<f64>,
    pub mux_gain: Option<f64>,
    pub strategies: Option<Vec<Strategy>>,
    pub mc_trials: Option<u64>,
    pub seed: Option<u64>,
}

impl ConfigDraft {
    /// Overlay `over` on `self`, field by field.  Setting any rate key in
    /// `over` clears all of `self`'s rate keys first — overriding
    /// `rate_nats = 2` with `--mux-gain 1` must not leave two rate specs
    /// behind.
    pub fn merge(mut self, over: ConfigDraft) -> ConfigDraft {
        if over.rate_nats.is_some() || over.rate_bits.is_some() || over.mux_gain.is_some() {
            self.rate_nats = None;
            self.rate_bits = None;
            self.mux_gain = None;
        }
        ConfigDraft {
            n: over.n.or(self.n),
            m: over.m.or(self.m),
            snr_db_start: over.snr_db_start.or(self.snr_db_start),
            snr_db_stop: over.snr_db_stop.or(self.snr_db_stop),
            snr_db_step: over.snr_db_step.or(self.snr_db_step),
            gap_db: over.gap_db.or(self.gap_db),
            rate_nats: over.rate_nats.or(self.rate_nats),
            rate_bits: over.rate_bits.or(self.rate_bits),
            mux_gain: over.mux_gain.or(self.mux_gain),
            strategies: over.strategies.or(self.strategies),
            mc_trials: over.mc_trials.or(self.mc_trials),
            seed: over.seed.or(self.seed),
        }
    }

    /// Apply defaults and the cross-field checks, producing a usable
    /// configuration or a field-named complaint.
    pub fn finish(self) -> Result<SweepConfig, ConfigError> {
        let n = self.n.unwrap_or(2);
        let m = self.m.unwrap_or(2);
        if m == 0 || n < m {
            return Err(ConfigError::global(format!(
                "need n >= m >= 1 antennas, got n = {n}, m = {m}"
            )));
        }

        let start = self.snr_db_start.unwrap_or(0.0);
        let stop = self.snr_db_stop.unwrap_or(40.0);
        let step = self.snr_db_step.unwrap_or(2.0);
        if !step.is_finite() || step <= 0.0 {
            return Err(ConfigError::global(format!(
                "snr_db_step must be positive, got {step}"
            )));
        }
        if !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(ConfigError::global(format!(
                "snr_db_stop ({stop}) must not precede snr_db_start ({start})"
            )));
        }
        let points = ((stop - start) / step) as usize + 1;
        if points > MAX_POINTS {
            return Err(ConfigError::global(format!(
                "sweep would have {points} points; the cap is {MAX_POINTS}"
            )));
        }

        let gap_db = self.gap_db.unwrap_or(0.0);
        if !gap_db.is_finite() || gap_db < 0.0 {
            return Err(ConfigError::global(format!(
                "gap_db must be >= 0, got {gap_db}"
            )));
        }

        let rate = match (self.rate_nats, self.rate_bits, self.mux_gain) {
            (Some(r), None, None) => RateSpec::FixedRate(r),
            (None, Some(b), None) => RateSpec::FixedRate(b * std::f64::consts::LN_2),
            (None, None, Some(g)) => RateSpec::MultiplexingGain(g),
            (None, None, None) => {
                return Err(ConfigError::global(
                    "no rate target: set exactly one of rate_nats, rate_bits, mux_gain",
                ))
            }
            _ => {
                return Err(ConfigError::global(
                    "conflicting rate targets: set exactly one of rate_nats, rate_bits, mux_gain",
                ))
            }
        };
        match rate {
            RateSpec::FixedRate(r) if !(r > 0.0) || !r.is_finite() => {
                return Err(ConfigError::global(format!(
                    "per-stream rate must be positive, got {r} nats"
                )));
            }
            RateSpec::MultiplexingGain(g) if !(g > 0.0) || !g.is_finite() => {
                return Err(ConfigError::global(format!(
                    "mux_gain must be positive, got {g}"
                )));
            }
            _ => {}
        }

        let strategies = self.strategies.unwrap_or_else(|| {
            vec![Strategy::Uniform, Strategy::Apa, Strategy::Ara, Strategy::Apra]
        });
        if strategies.is_empty() {
            return Err(ConfigError::global("strategies must not be empty"));
        }
        for (i, s) in strategies.iter().enumerate() {
            if strategies[..i].contains(s) {
                return Err(ConfigError::global(format!("strategy '{s}' listed twice")));
            }
        }

        Ok(SweepConfig {
            n,
            m,
            snr_db_start: start,
            snr_db_stop: stop,
            snr_db_step: step,
            gap_db,
            rate,
            strategies,
            mc_trials: self.mc_trials.unwrap_or(0),
            seed: self.seed.unwrap_or(0),
        })
    }
}

fn parse_number<T: std::str::FromStr>(
    key: &str,
    value: &str,
    line: usize,
) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| {
        ConfigError::at(line, format!("field '{key}': cannot parse '{value}'"))
    })
}

/// Parse a comma-separated strategy list, e.g. `"uniform, apa"`.  Shared
/// by the config-file parser and the `--strategies` flag; repeats are
/// caught later, in [`ConfigDraft::finish`].
pub fn parse_strategy_list(value: &str) -> Result<Vec<Strategy>, ConfigError> {
    let mut out = Vec::new();
    for token in value.split(',') {
        let token = token.trim();
        if token.is_empty() {
            return Err(ConfigError::global(
                "field 'strategies': empty entry (stray comma?)",
            ));
        }
        let strategy: Strategy = token
            .parse()
            .map_err(|e| ConfigError::global(format!("field 'strategies': {e}")))?;
        out.push(strategy);
    }
    Ok(out)
}

fn parse_strategies(value: &str, line: usize) -> Result<Vec<Strategy>, ConfigError> {
    parse_strategy_list(value).map_err(|e| ConfigError::at(line, e.message))
}

/// Parse config text into a draft, reporting the first offending line.
/// Defaults are *not* applied here — `finish` does that — so a file and a
/// flag set can be merged before resolution.
pub fn parse_draft(text: &str) -> Result<ConfigDraft, ConfigError> {
    let mut draft = ConfigDraft::default();
    let mut seen: Vec<(String, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => {
                return Err(ConfigError::at(
                    line,
                    format!("expected 'key = value', got '{stripped}'"),
                ))
            }
        };
        if value.is_empty() {
            return Err(ConfigError::at(line, format!("field '{key}': empty value")));
        }
        if let Some(&(_, first)) = seen.iter().find(|(k, _)| k == key).as_ref() {
            return Err(ConfigError::at(
                line,
                format!("duplicate key '{key}' (first set on line {first})"),
            ));
        }
        seen.push((key.to_string(), line));

        match key {
            "n" => draft.n = Some(parse_number(key, value, line)?),
            "m" => draft.m = Some(parse_number(key, value, line)?),
            "snr_db_start" => draft.snr_db_start = Some(parse_number(key, value, line)?),
            "snr_db_stop" => draft.snr_db_stop = Some(parse_number(key, value, line)?),
            "snr_db_step" => draft.snr_db_step = Some(parse_number(key, value, line)?),
            "gap_db" => draft.gap_db = Some(parse_number(key, value, line)?),
            "rate_nats" => draft.rate_nats = Some(parse_number(key, value, line)?),
            "rate_bits" => draft.rate_bits = Some(parse_number(key, value, line)?),
            "mux_gain" => draft.mux_gain = Some(parse_number(key, value, line)?),
            "strategies" => draft.strategies = Some(parse_strategies(value, line)?),
            "mc_trials" => draft.mc_trials = Some(parse_number(key, value, line)?),
            "seed" => draft.seed = Some(parse_number(key, value, line)?),
            other => {
                return Err(ConfigError::at(line, format!("unknown key '{other}'")));
            }
        }
    }
    Ok(draft)
}

/// Parse and validate a complete configuration in one step.
pub fn parse_config(text: &str) -> Result<SweepConfig, ConfigError> {
    parse_draft(text)?.finish()
}

/// Read a configuration file from disk.
pub fn load_config(path: &std::path::Path) -> Result<SweepConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::global(format!("cannot read '{}': {e}", path.display()))
    })?;
    parse_config(&text)
}

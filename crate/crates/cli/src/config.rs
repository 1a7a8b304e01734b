//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key is optional; missing keys keep the calibrated defaults. Unknown
//! and repeated keys are errors that carry the line number.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sascorr_core::model::ModelError;
use sascorr_core::ModelConfig;
use thiserror::Error;

pub const DEFAULT_N_PULSES: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SIDE_PEAKS: usize = 10;
pub const DEFAULT_BATCHES: u64 = 100;
/// Preferred bin width when the width is `auto`.
pub const TARGET_BIN_WIDTH_PS: u64 = 100;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Line { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: ModelError },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinWidth {
    /// Divisor of the rep period closest to [`TARGET_BIN_WIDTH_PS`].
    Auto,
    Fixed(u64),
}

impl BinWidth {
    pub fn resolve(self, rep_period_ps: u64) -> u64 {
        match self {
            BinWidth::Auto => auto_bin_width(rep_period_ps, TARGET_BIN_WIDTH_PS),
            BinWidth::Fixed(w) => w,
        }
    }
}

impl FromStr for BinWidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(BinWidth::Auto);
        }
        match s.parse::<u64>() {
            Ok(0) | Err(_) => Err(format!("bin width must be `auto` or a positive integer, got {s:?}")),
            Ok(w) => Ok(BinWidth::Fixed(w)),
        }
    }
}

impl fmt::Display for BinWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinWidth::Auto => f.write_str("auto"),
            BinWidth::Fixed(w) => write!(f, "{w}"),
        }
    }
}

/// Divisor of `period` closest to `target`; the smaller one wins a tie.
pub fn auto_bin_width(period: u64, target: u64) -> u64 {
    let mut best = 1u64;
    let mut d = 1u64;
    while d * d <= period {
        if period.is_multiple_of(d) {
            for c in [d, period / d] {
                if (c.abs_diff(target), c) < (best.abs_diff(target), best) {
                    best = c;
                }
            }
        }
        d += 1;
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub n_pulses: u64,
    pub seed: u64,
    pub powers_mw: Vec<f64>,
    pub side_peaks: usize,
    pub batches: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            n_pulses: DEFAULT_N_PULSES,
            seed: DEFAULT_SEED,
            powers_mw: Vec::new(),
            side_peaks: DEFAULT_SIDE_PEAKS,
            batches: DEFAULT_BATCHES,
            output_dir: PathBuf::from("."),
        }
    }
}

pub const KEYS: [&str; 23] = [
    "laser.wavelength_nm",
    "laser.rep_rate_hz",
    "laser.pulse_duration_fs",
    "laser.power_mw",
    "material.phonon_wavenumber_cm",
    "material.temperature_k",
    "material.stokes_wavelength_nm",
    "material.antistokes_wavelength_nm",
    "rates.k_s",
    "rates.k_r",
    "rates.k_th",
    "rates.eta_s",
    "rates.eta_as",
    "rates.stokes_statistics",
    "detector.jitter_ps",
    "detector.dead_time_ps",
    "coincidence.window_ps",
    "run.n_pulses",
    "run.seed",
    "run.powers_mw",
    "sweep.side_peaks",
    "sweep.batches",
    "output.dir",
];

fn num<T: FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?}"))
}

/// Comma-separated powers, each finite and >= 0.
pub fn parse_powers(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|p| {
            let p = p.trim();
            match p.parse::<f64>() {
                Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
                _ => Err(format!("power {p:?} must be a finite number >= 0")),
            }
        })
        .collect()
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        match key {
            "laser.wavelength_nm" => m.laser.wavelength_nm = num(value)?,
            "laser.rep_rate_hz" => m.laser.rep_rate_hz = num(value)?,
            "laser.pulse_duration_fs" => m.laser.pulse_duration_fs = num(value)?,
            "laser.power_mw" => m.laser.power_mw = num(value)?,
            "material.phonon_wavenumber_cm" => m.material.phonon_wavenumber_cm = num(value)?,
            "material.temperature_k" => m.material.temperature_k = num(value)?,
            "material.stokes_wavelength_nm" => m.material.stokes_wavelength_nm = num(value)?,
            "material.antistokes_wavelength_nm" => m.material.antistokes_wavelength_nm = num(value)?,
            "rates.k_s" => m.rates.k_s = num(value)?,
            "rates.k_r" => m.rates.k_r = num(value)?,
            "rates.k_th" => m.rates.k_th = num(value)?,
            "rates.eta_s" => m.rates.eta_s = num(value)?,
            "rates.eta_as" => m.rates.eta_as = num(value)?,
            "rates.stokes_statistics" => m.rates.stokes_statistics = value.parse()?,
            "detector.jitter_ps" => m.detector_jitter_ps = num(value)?,
            "detector.dead_time_ps" => m.dead_time_ps = num(value)?,
            "coincidence.window_ps" => m.coincidence_window_ps = num(value)?,
            "run.n_pulses" => {
                self.n_pulses = num(value)?;
                if self.n_pulses == 0 {
                    return Err("run.n_pulses must be at least 1".into());
                }
            }
            "run.seed" => self.seed = num(value)?,
            "run.powers_mw" => self.powers_mw = parse_powers(value)?,
            "sweep.side_peaks" => {
                self.side_peaks = num(value)?;
                if self.side_peaks < 1 {
                    return Err("sweep.side_peaks must be at least 1".into());
                }
            }
            "sweep.batches" => {
                self.batches = num(value)?;
                if self.batches == 0 {
                    return Err("sweep.batches must be at least 1".into());
                }
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parse config text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ConfigError::Line {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some((_, first)) = seen.iter().find(|(k, _)| *k == key) {
                return Err(err(format!("duplicate key {key:?} (first set on line {first})")));
            }
            cfg.set(key, value).map_err(|msg| err(format!("{key}: {msg}")))?;
            seen.push((key, line));
        }
        cfg.model.validate().map_err(|source| ConfigError::Invalid {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sascorr_core::StokesStatistics;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_accepted() {
        let values = [
            "785", "76e6", "130", "8.6", "1332", "300", "880", "710", "0.8", "1e-4", "1e-5", "0.5", "0.5",
            "thermal", "350", "0", "1000", "10", "7", "1,2,3", "10", "100", "out",
        ];
        let text: String = KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect();
        let cfg = parse(&text).unwrap();
        assert_eq!(cfg.model.rates.stokes_statistics, StokesStatistics::Thermal);
        assert_eq!(cfg.powers_mw, vec![1.0, 2.0, 3.0]);
        assert_eq!(cfg.n_pulses, 10);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn values_and_comments() {
        let cfg = parse("rates.k_th = 0   # no thermal background\nrun.seed=42\nsweep.side_peaks = 20\n").unwrap();
        assert_eq!(cfg.model.rates.k_th, 0.0);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.side_peaks, 20);
    }

    fn line_of(e: ConfigError) -> usize {
        match e {
            ConfigError::Line { line, .. } => line,
            other => panic!("expected a line error, got {other}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = parse("run.seed = 1\n\nrates.k_x = 2\n").unwrap_err();
        assert!(e.to_string().contains("rates.k_x"), "{e}");
        assert_eq!(line_of(e), 3);
    }

    #[test]
    fn duplicate_key_reports_both_lines() {
        let e = parse("run.seed = 1\nrun.seed = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        assert_eq!(line_of(e), 2);
    }

    #[test]
    fn malformed_lines() {
        assert_eq!(line_of(parse("# c\nrun.seed 4\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("run.seed = -1\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("run.n_pulses = 0\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("run.powers_mw = 1, -2\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("sweep.side_peaks = 0\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("rates.stokes_statistics = squeezed\n").unwrap_err()), 1);
    }

    #[test]
    fn model_invariants_are_revalidated() {
        let e = parse("rates.eta_s = 1.5\n").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { .. }), "{e}");
        assert!(parse("coincidence.window_ps = 20000\n").is_err());
    }

    #[test]
    fn auto_bin_width_divides_period() {
        assert_eq!(auto_bin_width(13158, 100), 102);
        assert_eq!(auto_bin_width(12500, 100), 100);
        assert_eq!(auto_bin_width(7, 100), 7);
        assert_eq!(auto_bin_width(1, 100), 1);
        for t in [13158u64, 10_000, 997, 12_345] {
            assert_eq!(t % auto_bin_width(t, 100), 0);
        }
    }

    #[test]
    fn bin_width_parsing() {
        assert_eq!("auto".parse::<BinWidth>(), Ok(BinWidth::Auto));
        assert_eq!("102".parse::<BinWidth>(), Ok(BinWidth::Fixed(102)));
        assert!("0".parse::<BinWidth>().is_err());
        assert!("x".parse::<BinWidth>().is_err());
        assert_eq!(BinWidth::Auto.resolve(13158), 102);
    }
}

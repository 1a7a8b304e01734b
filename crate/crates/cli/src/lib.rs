//! Command-line front end: simulate, correlate, sweep, fit and oracle.

pub mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sascorr_core::correlator::{self, CorrError};
use sascorr_core::model::{self, ModelError};
use sascorr_core::powerfit::{self, DataSeries, FitError};
use sascorr_core::rng::derive_seed;
use sascorr_core::sim::{self, SimError, SweepOptions};
use sascorr_core::tagstore::{self, TagError, TagFileHeader, TagStream};
use sascorr_core::{ModelConfig, StokesStatistics};
use thiserror::Error;

use crate::config::{parse_powers, BinWidth, ConfigError, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Tags { path: PathBuf, source: TagError },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: FitError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn model_exit(e: &ModelError) -> i32 {
    match e {
        ModelError::InvalidConfig(_) | ModelError::NegativePower(_) | ModelError::NonPositivePower(_) => exit::CONFIG,
        _ => exit::NUMERICAL,
    }
}

fn fit_exit(e: &FitError) -> i32 {
    match e {
        FitError::MissingColumn(_) | FitError::BadNumber { .. } | FitError::Csv(_) => exit::DATA,
        FitError::EmptyBasis | FitError::DuplicateExponent(_) | FitError::NoCandidates => exit::CONFIG,
        _ => exit::NUMERICAL,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::CONFIG,
            CliError::Tags { .. } => exit::DATA,
            CliError::Data { source, .. } | CliError::Fit(source) => fit_exit(source),
            CliError::Sim(SimError::Model(e)) | CliError::Model(e) => model_exit(e),
            CliError::Sim(_) => exit::CONFIG,
            CliError::Corr(CorrError::Unsorted { .. }) => exit::DATA,
            CliError::Corr(CorrError::NonPositiveInput) => exit::NUMERICAL,
            CliError::Corr(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sascorr", version, about = "Stokes/anti-Stokes photon correlation simulator and analyser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one run and write an RTG1 tag file plus a summary.
    Simulate(SimulateArgs),
    /// Histogram an RTG1 file and estimate g2 from the pulse comb.
    Correlate(CorrelateArgs),
    /// Monte Carlo sweep over laser powers, one CSV row per power.
    Sweep(SweepArgs),
    /// Fit power-law models to one column of a CSV.
    Fit(FitArgs),
    /// Closed-form rates, coincidences and g2 for a list of powers.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.n_pulses`.
    #[arg(long)]
    pub pulses: Option<u64>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(n) = self.pulses {
            if n == 0 {
                return Err(CliError::Usage("--pulses must be at least 1".into()));
            }
            cfg.n_pulses = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Laser power in mW (defaults to `laser.power_mw`).
    #[arg(long)]
    pub power: Option<f64>,
    /// Tag file to write (defaults to `tags.rtg` in `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// RTG1 tag file.
    #[arg(long)]
    pub tags: PathBuf,
    /// Bin width in ps, or `auto` for the divisor of the rep period nearest 100 ps.
    #[arg(long, default_value = "auto")]
    pub bin_width: BinWidth,
    /// Half-width of each comb peak in ps.
    #[arg(long, default_value_t = 1000)]
    pub window: u64,
    /// Histogram covers peaks -K..=K.
    #[arg(long, default_value_t = config::DEFAULT_SIDE_PEAKS)]
    pub max_lag_peaks: usize,
    /// Also estimate both autocorrelations by an HBT split and report R.
    #[arg(long)]
    pub auto: bool,
    /// Seed of the HBT split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (defaults to the tag file's directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated powers in mW (overrides `run.powers_mw`).
    #[arg(long)]
    pub powers: Option<String>,
    /// Overrides `sweep.side_peaks`.
    #[arg(long)]
    pub side_peaks: Option<usize>,
    /// Overrides `sweep.batches`.
    #[arg(long)]
    pub batches: Option<u64>,
    /// CSV to write (defaults to `sweep.csv` in `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Column to fit.
    #[arg(long)]
    pub column: String,
    #[arg(long, default_value = "power_mW")]
    pub power_column: String,
    /// Uncertainty column; defaults to `<column>_sigma` when present.
    #[arg(long)]
    pub sigma_column: Option<String>,
    /// Fit with unit weights even if a sigma column exists.
    #[arg(long, conflicts_with = "sigma_column")]
    pub no_sigma: bool,
    /// Candidate bases, `;` between bases and `,` between exponents.
    #[arg(long, default_value = "1;2;3;1,2;2,3")]
    pub bases: String,
    /// Write a log-log plot of the data and fits.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated powers in mW (overrides `run.powers_mw`).
    #[arg(long)]
    pub powers: Option<String>,
    /// CSV to write; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, stdout),
        Command::Correlate(a) => cmd_correlate(&a, stdout),
        Command::Sweep(a) => cmd_sweep(&a, stdout),
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Oracle(a) => cmd_oracle(&a, stdout),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn print(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn digest_hex(model: &ModelConfig) -> String {
    tagstore::digest_hex(&tagstore::config_digest(&model.canonical_text()))
}

fn powers_or_config(flag: Option<&str>, cfg: &RunConfig, min: usize) -> Result<Vec<f64>> {
    let powers = match flag {
        Some(text) => parse_powers(text).map_err(|e| CliError::Usage(format!("--powers: {e}")))?,
        None => cfg.powers_mw.clone(),
    };
    if powers.len() < min {
        return Err(CliError::Usage(format!(
            "need at least {min} powers (pass --powers or set run.powers_mw), got {}",
            powers.len()
        )));
    }
    Ok(powers)
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.run.load()?;
    let power = a.power.unwrap_or(cfg.model.laser.power_mw);
    if !(power.is_finite() && power >= 0.0) {
        return Err(CliError::Usage(format!("--power must be a finite number >= 0, got {power}")));
    }
    let path = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("tags.rtg"));
    let (tags, summary) = sim::simulate_run(&cfg.model, power, cfg.n_pulses, cfg.seed)?;
    let records = tags.to_records();
    let digest = tagstore::config_digest(&cfg.model.canonical_text());
    let header = TagFileHeader::new(cfg.model.rep_period_ps(), records.len() as u64, digest);
    let bytes = tagstore::encode(&header, &records).map_err(|source| CliError::Tags {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &bytes)?;

    let expected = model::expected_rates(&cfg.model, power)?;
    let n = summary.n_pulses as f64;
    let mut s = String::new();
    let _ = writeln!(s, "tag_file = {}", path.display());
    let _ = writeln!(s, "version = {VERSION}");
    let _ = writeln!(s, "config_digest = {}", tagstore::digest_hex(&digest));
    let _ = writeln!(s, "seed = {}", summary.seed);
    let _ = writeln!(s, "power_mw = {power}");
    let _ = writeln!(s, "n_pulses = {}", summary.n_pulses);
    let _ = writeln!(s, "rep_period_ps = {}", cfg.model.rep_period_ps());
    let _ = writeln!(s, "duration_s = {}", summary.elapsed_s);
    let _ = writeln!(s, "stokes_tags = {}", summary.stokes_tags);
    let _ = writeln!(s, "as_tags = {}", summary.as_tags);
    let _ = writeln!(s, "rate_S_Hz = {}", summary.rate_s_hz());
    let _ = writeln!(s, "rate_aS_Hz = {}", summary.rate_as_hz());
    let rep = cfg.model.laser.rep_rate_hz;
    let _ = writeln!(s, "expected_rate_S_Hz = {}", rep * cfg.model.rates.eta_s * expected.m_s);
    let _ = writeln!(s, "expected_rate_aS_Hz = {}", rep * cfg.model.rates.eta_as * expected.m_as());
    let _ = writeln!(s, "expected_click_rate_S_Hz = {}", expected.detected_s_hz);
    let _ = writeln!(s, "expected_click_rate_aS_Hz = {}", expected.detected_as_hz);
    let _ = writeln!(s, "mean_stokes_per_pulse = {}", summary.mean_stokes());
    let _ = writeln!(s, "mean_as_pair_per_pulse = {}", summary.mean_as_pair());
    let _ = writeln!(s, "mean_as_thermal_per_pulse = {}", summary.mean_as_thermal());
    let _ = writeln!(s, "mean_stokes_detected_per_pulse = {}", summary.stokes_detected as f64 / n);
    let _ = writeln!(s, "mean_as_detected_per_pulse = {}", summary.as_detected as f64 / n);
    let sidecar = summary_path(&path);
    write_file(&sidecar, s.as_bytes())?;
    print(out, &s)
}

/// `run.rtg` -> `run.summary.txt`.
pub fn summary_path(tag_path: &Path) -> PathBuf {
    tag_path.with_extension("summary.txt")
}

fn load_tags(path: &Path) -> Result<(TagFileHeader, TagStream)> {
    let (header, records) = tagstore::read_tags(path).map_err(|source| CliError::Tags {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((header, TagStream::from_records(&records)))
}

/// Smallest multiple of `bin` covering peaks `-k..=k` with their windows.
pub fn max_lag_ps(period: u64, k: usize, window: u64, bin: u64) -> u64 {
    (k as u64 * period + window).div_ceil(bin) * bin
}

pub fn cmd_correlate(a: &CorrelateArgs, out: &mut dyn Write) -> Result<()> {
    let (header, tags) = load_tags(&a.tags)?;
    let period = header.rep_period_ps;
    if a.window * 2 > period {
        return Err(CorrError::WindowTooWide {
            window_ps: a.window,
            rep_period_ps: period,
        }
        .into());
    }
    if a.max_lag_peaks < 2 {
        return Err(CliError::Usage("--max-lag-peaks must be at least 2".into()));
    }
    let w = a.bin_width.resolve(period);
    let max_lag = max_lag_ps(period, a.max_lag_peaks, a.window, w);
    let hist = correlator::cross_correlate(&tags.stokes, &tags.anti_stokes, w, max_lag)?;
    let peaks = correlator::extract_peaks(&hist, period, a.window)?;
    let sas = correlator::g2_from_peaks(&peaks)?;

    let meta = vec![
        ("version", VERSION.to_string()),
        ("source", a.tags.display().to_string()),
        ("config_digest", tagstore::digest_hex(&header.config_digest)),
        ("rep_period_ps", period.to_string()),
        ("bin_width_ps", w.to_string()),
        ("window_ps", a.window.to_string()),
        ("max_lag_ps", max_lag.to_string()),
        ("stokes_tags", tags.stokes.len().to_string()),
        ("as_tags", tags.anti_stokes.len().to_string()),
    ];
    let dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| a.tags.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = a.tags.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "tags".into());
    let mut buf = Vec::new();
    correlator::write_histogram_csv(&mut buf, &hist, &meta).map_err(io_err(&dir))?;
    write_file(&dir.join(format!("{stem}.hist.csv")), &buf)?;
    buf.clear();
    correlator::write_peaks_csv(&mut buf, &peaks, &meta).map_err(io_err(&dir))?;
    write_file(&dir.join(format!("{stem}.peaks.csv")), &buf)?;

    let mut report = String::new();
    for (k, v) in &meta {
        let _ = writeln!(report, "{k} = {v}");
    }
    let mut extra = String::new();
    let cs = if a.auto {
        let ss = correlator::autocorrelate_hbt(&tags.stokes, derive_seed(a.seed, 0), w, max_lag)?;
        let asas = correlator::autocorrelate_hbt(&tags.anti_stokes, derive_seed(a.seed, 1), w, max_lag)?;
        let ss = correlator::g2_from_peaks(&correlator::extract_peaks(&ss, period, a.window)?)?;
        let asas = correlator::g2_from_peaks(&correlator::extract_peaks(&asas, period, a.window)?)?;
        let _ = writeln!(extra, "hbt_seed = {}", a.seed);
        let _ = writeln!(extra, "g2_SS = {}", ss.g2);
        let _ = writeln!(extra, "g2_SS_sigma = {}", ss.sigma);
        let _ = writeln!(extra, "g2_aSaS = {}", asas.g2);
        let _ = writeln!(extra, "g2_aSaS_sigma = {}", asas.sigma);
        match correlator::cauchy_schwarz_estimate(&sas, &ss, &asas) {
            Ok(r) => Some(r),
            Err(_) => {
                let _ = writeln!(extra, "flag = cauchy_schwarz_undefined");
                None
            }
        }
    } else {
        None
    };
    report.push_str(&correlator::g2_report(&sas, cs));
    report.push_str(&extra);
    write_file(&dir.join(format!("{stem}.g2.txt")), report.as_bytes())?;
    print(out, &report)
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.run.load()?;
    let powers = powers_or_config(a.powers.as_deref(), &cfg, 3)?;
    let opts = SweepOptions {
        side_peaks: a.side_peaks.unwrap_or(cfg.side_peaks),
        batches: a.batches.unwrap_or(cfg.batches),
    };
    if opts.batches == 0 {
        return Err(CliError::Usage("--batches must be at least 1".into()));
    }
    let rows = sim::sweep_with(&cfg.model, &powers, cfg.n_pulses, cfg.seed, &opts)?;
    let path = a.out.clone().unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    let meta = vec![
        ("version", VERSION.to_string()),
        ("config_digest", digest_hex(&cfg.model)),
        ("seed", cfg.seed.to_string()),
        ("n_pulses", cfg.n_pulses.to_string()),
        ("stokes_statistics", cfg.model.rates.stokes_statistics.as_str().to_string()),
        (
            "columns",
            "rates in Hz; per-pulse means in photons; center = same-pulse S/aS detection pairs; \
             side_mean = mean side-peak pairs over the same number of pulse pairs; g2 = center/side_mean; \
             *_sigma = batch-means standard errors; seed = per-power seed"
                .to_string(),
        ),
    ];
    let mut buf = Vec::new();
    sim::write_sweep_csv(&mut buf, &rows, &opts, &meta).map_err(io_err(&path))?;
    write_file(&path, &buf)?;
    let mut s = String::new();
    let _ = writeln!(s, "wrote {} rows to {}", rows.len(), path.display());
    for r in &rows {
        match r.g2 {
            Some(g) => {
                let _ = writeln!(s, "P = {} mW: g2 = {} +- {}", r.power_mw, g.value, g.sigma);
            }
            None => {
                let _ = writeln!(s, "P = {} mW: g2 undefined", r.power_mw);
            }
        }
    }
    print(out, &s)
}

fn read_series(a: &FitArgs) -> Result<DataSeries> {
    let data_err = |source| CliError::Data {
        path: a.csv.clone(),
        source,
    };
    let text = fs::read(&a.csv).map_err(|e| data_err(FitError::Csv(e.into())))?;
    let default_sigma = format!("{}_sigma", a.column);
    let sigma = match (&a.sigma_column, a.no_sigma) {
        (_, true) => None,
        (Some(c), false) => Some(c.as_str()),
        (None, false) => Some(default_sigma.as_str()),
    };
    match DataSeries::read_csv(&text[..], &a.power_column, &a.column, sigma) {
        // the implicit sigma column is optional
        Err(FitError::MissingColumn(c)) if a.sigma_column.is_none() && sigma == Some(c.as_str()) => {
            DataSeries::read_csv(&text[..], &a.power_column, &a.column, None).map_err(data_err)
        }
        r => r.map_err(data_err),
    }
}

pub fn cmd_fit(a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let bases = powerfit::parse_bases(&a.bases).map_err(|e| CliError::Usage(format!("--bases: {e}")))?;
    let series = read_series(a)?;
    let mut s = String::new();
    let _ = writeln!(s, "source = {}", a.csv.display());
    let _ = writeln!(s, "column = {}", a.column);
    let _ = writeln!(s, "n_points = {}", series.points.len());
    for basis in &bases {
        let fit = powerfit::fit_poly(&series, basis)?;
        let b: Vec<String> = basis.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(s, "candidate {{{}}}: aic = {} chi2 = {}", b.join(","), fit.aic, fit.chi2);
    }
    let best = powerfit::select_model(&series, &bases)?;
    let _ = writeln!(s, "[selected]");
    s.push_str(&best.report());
    let _ = writeln!(s, "[power_law]");
    let exponent = match powerfit::fit_exponent(&series) {
        Ok(e) => {
            let _ = writeln!(s, "exponent = {}", e.exponent);
            let _ = writeln!(s, "exponent_stderr = {}", e.stderr);
            let _ = writeln!(s, "prefactor = {}", e.intercept.exp());
            Some(e)
        }
        Err(e) => {
            let _ = writeln!(s, "flag = exponent_undefined ({e})");
            None
        }
    };
    if let Some(path) = &a.svg {
        write_file(path, svg::fit_plot(&series, &best, exponent.as_ref()).as_bytes())?;
        let _ = writeln!(s, "svg = {}", path.display());
    }
    print(out, &s)
}

pub const ORACLE_COLUMNS: [&str; 12] = [
    "power_mW",
    "m_S",
    "m_aS_pair",
    "m_aS_thermal",
    "rate_S_Hz",
    "rate_aS_Hz",
    "click_S_Hz",
    "click_aS_Hz",
    "p_center",
    "p_side",
    "g2",
    "flag",
];

fn oracle_row(model: &ModelConfig, p: f64) -> Result<String> {
    let rates = model::expected_rates(model, p)?;
    let (p_center, p_side, g2) = match model.rates.stokes_statistics {
        StokesStatistics::Poissonian => {
            let f = model::forecast(model, p)?;
            let g2 = match model::g2_closed_form(model, p) {
                Ok(g) => Some(g),
                Err(ModelError::NonPositivePower(_) | ModelError::UndefinedG2(_)) => None,
                Err(e) => return Err(e.into()),
            };
            (f.p_center, f.p_side, g2)
        }
        StokesStatistics::Thermal => {
            let f = model::forecast_enumerated(model, p)?.forecast;
            (f.p_center, f.p_side, f.g2)
        }
    };
    let rep = model.laser.rep_rate_hz;
    Ok(format!(
        "{p},{},{},{},{},{},{},{},{p_center},{p_side},{},{}",
        rates.m_s,
        rates.m_as_pair,
        rates.m_as_thermal,
        rep * model.rates.eta_s * rates.m_s,
        rep * model.rates.eta_as * rates.m_as(),
        rates.detected_s_hz,
        rates.detected_as_hz,
        g2.map(|g| g.to_string()).unwrap_or_default(),
        if g2.is_some() { "" } else { "g2_undefined" },
    ))
}

pub fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let powers = powers_or_config(a.powers.as_deref(), &cfg, 1)?;
    let mut s = String::new();
    let _ = writeln!(s, "# version: {VERSION}");
    let _ = writeln!(s, "# config_digest: {}", digest_hex(&cfg.model));
    let _ = writeln!(s, "# stokes_statistics: {}", cfg.model.rates.stokes_statistics.as_str());
    let _ = writeln!(
        s,
        "# columns: means per pulse; rate_* = detected photons per second; click_* = detector clicks per second; p_center = expected same-pulse detection pairs per pulse; \
         p_side = expected pairs per pulse pair at nonzero delay; g2 empty where undefined"
    );
    let _ = writeln!(s, "{}", ORACLE_COLUMNS.join(","));
    for &p in &powers {
        let _ = writeln!(s, "{}", oracle_row(&cfg.model, p)?);
    }
    match &a.out {
        Some(path) => write_file(path, s.as_bytes()),
        None => print(out, &s),
    }
}

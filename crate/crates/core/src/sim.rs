//! Monte Carlo sampling of pulses, time tags and power sweeps.
//!
//! Pulse `i` draws all of its randomness from the counter stream
//! `(seed, PULSE, i)`: photon numbers first, then one jitter value per
//! detected photon. Work is split into fixed pulse batches, so results do
//! not depend on the number of threads.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, StokesStatistics};
use crate::rng::{derive_seed, CounterRng};
use crate::sampling::{binomial_thin, gaussian_jitter_ps, GeometricSampler, PoissonSampler};
use crate::tagstore::TagStream;

/// Pulses per work unit of [`simulate_run`].
pub const BATCH_PULSES: u64 = 65_536;
pub const DEFAULT_SIDE_PEAKS: usize = 10;
pub const DEFAULT_SWEEP_BATCHES: u64 = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("n_pulses must be at least 1")]
    NoPulses,
    #[error("{n_pulses} pulses at {period_ps} ps overflow the 64-bit picosecond timestamp range")]
    TimestampOverflow { n_pulses: u64, period_ps: u64 },
    #[error("sweep needs at least one power")]
    NoPowers,
    #[error("side_peaks must be at least 1")]
    NoSidePeaks,
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PulseOutcome {
    pub pulse_index: u64,
    pub n_stokes_generated: u64,
    pub n_as_pair: u64,
    pub n_as_thermal: u64,
    pub n_stokes_detected: u64,
    pub n_as_detected: u64,
}

#[derive(Clone, Debug)]
enum StokesSampler {
    Poisson(PoissonSampler),
    Thermal(GeometricSampler),
}

/// Per-pulse sampler with the distributions for one power precomputed.
#[derive(Clone, Debug)]
pub struct PulseSampler {
    stokes: StokesSampler,
    thermal: PoissonSampler,
    read_prob: f64,
    eta_s: f64,
    eta_as: f64,
}

impl PulseSampler {
    pub fn new(cfg: &ModelConfig, power_mw: f64) -> Result<Self> {
        if !(power_mw.is_finite() && power_mw >= 0.0) {
            return Err(ModelError::NegativePower(power_mw).into());
        }
        let rates = &cfg.rates;
        let m_s = rates.k_s * power_mw;
        let stokes = match rates.stokes_statistics {
            StokesStatistics::Poissonian => StokesSampler::Poisson(PoissonSampler::new(m_s)),
            StokesStatistics::Thermal => StokesSampler::Thermal(GeometricSampler::new(m_s)),
        };
        Ok(Self {
            stokes,
            thermal: PoissonSampler::new(rates.k_th * power_mw),
            read_prob: cfg.read_probability(power_mw),
            eta_s: rates.eta_s,
            eta_as: rates.eta_as,
        })
    }

    pub fn sample(&self, pulse_index: u64, rng: &mut CounterRng) -> PulseOutcome {
        let n_s = match &self.stokes {
            StokesSampler::Poisson(s) => s.sample(rng),
            StokesSampler::Thermal(s) => s.sample(rng),
        };
        let n_pair = binomial_thin(n_s, self.read_prob, rng);
        let n_th = self.thermal.sample(rng);
        let d_s = binomial_thin(n_s, self.eta_s, rng);
        let d_as = binomial_thin(n_pair + n_th, self.eta_as, rng);
        PulseOutcome {
            pulse_index,
            n_stokes_generated: n_s,
            n_as_pair: n_pair,
            n_as_thermal: n_th,
            n_stokes_detected: d_s,
            n_as_detected: d_as,
        }
    }

    /// Outcome of pulse `pulse_index` of the run with `seed`.
    pub fn pulse(&self, seed: u64, pulse_index: u64) -> PulseOutcome {
        self.sample(pulse_index, &mut CounterRng::for_pulse(seed, pulse_index))
    }
}

/// Draw one pulse. The pulse index is the stream index of `rng`.
pub fn sample_pulse(cfg: &ModelConfig, power_mw: f64, rng: &mut CounterRng) -> Result<PulseOutcome> {
    let idx = rng.stream();
    Ok(PulseSampler::new(cfg, power_mw)?.sample(idx, rng))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub power_mw: f64,
    pub n_pulses: u64,
    pub stokes_generated: u64,
    pub as_pair: u64,
    pub as_thermal: u64,
    pub stokes_detected: u64,
    pub as_detected: u64,
    /// Tags left after dead-time filtering.
    pub stokes_tags: u64,
    pub as_tags: u64,
    pub elapsed_s: f64,
    pub seed: u64,
}

impl RunSummary {
    fn add(&mut self, o: &PulseOutcome) {
        self.stokes_generated += o.n_stokes_generated;
        self.as_pair += o.n_as_pair;
        self.as_thermal += o.n_as_thermal;
        self.stokes_detected += o.n_stokes_detected;
        self.as_detected += o.n_as_detected;
    }

    fn merge(&mut self, o: &RunSummary) {
        self.stokes_generated += o.stokes_generated;
        self.as_pair += o.as_pair;
        self.as_thermal += o.as_thermal;
        self.stokes_detected += o.stokes_detected;
        self.as_detected += o.as_detected;
    }

    pub fn rate_s_hz(&self) -> f64 {
        self.stokes_tags as f64 / self.elapsed_s
    }

    pub fn rate_as_hz(&self) -> f64 {
        self.as_tags as f64 / self.elapsed_s
    }

    pub fn mean_stokes(&self) -> f64 {
        self.stokes_generated as f64 / self.n_pulses as f64
    }

    pub fn mean_as_pair(&self) -> f64 {
        self.as_pair as f64 / self.n_pulses as f64
    }

    pub fn mean_as_thermal(&self) -> f64 {
        self.as_thermal as f64 / self.n_pulses as f64
    }
}

fn check_run(cfg: &ModelConfig, n_pulses: u64) -> Result<u64> {
    cfg.validate()?;
    if n_pulses == 0 {
        return Err(SimError::NoPulses);
    }
    let period = cfg.rep_period_ps();
    // leave room for ten sigma of jitter on the last pulse
    let headroom = (10.0 * cfg.detector_jitter_ps).ceil() as u64;
    (n_pulses - 1)
        .checked_mul(period)
        .and_then(|t| t.checked_add(headroom))
        .ok_or(SimError::TimestampOverflow {
            n_pulses,
            period_ps: period,
        })?;
    Ok(period)
}

fn dead_time_filter(tags: &mut Vec<u64>, dead_time_ps: u64) {
    if dead_time_ps == 0 || tags.is_empty() {
        return;
    }
    let mut kept = 1;
    let mut last = tags[0];
    for i in 1..tags.len() {
        let t = tags[i];
        if t - last >= dead_time_ps {
            tags[kept] = t;
            kept += 1;
            last = t;
        }
    }
    tags.truncate(kept);
}

/// Simulate `n_pulses` pulses and emit the detection time tags.
///
/// Tag time is `pulse_index * rep_period + round(N(0, jitter))`, clamped at
/// zero. Each channel is sorted and then thinned by a non-paralyzable dead
/// time.
pub fn simulate_run(
    cfg: &ModelConfig,
    power_mw: f64,
    n_pulses: u64,
    seed: u64,
) -> Result<(TagStream, RunSummary)> {
    let period = check_run(cfg, n_pulses)?;
    let sampler = PulseSampler::new(cfg, power_mw)?;
    let jitter = cfg.detector_jitter_ps;
    let n_batches = n_pulses.div_ceil(BATCH_PULSES);

    let parts: Vec<(Vec<u64>, Vec<u64>, RunSummary)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * BATCH_PULSES;
            let end = (start + BATCH_PULSES).min(n_pulses);
            let mut s_tags = Vec::new();
            let mut as_tags = Vec::new();
            let mut totals = RunSummary::default();
            for i in start..end {
                let mut rng = CounterRng::for_pulse(seed, i);
                let o = sampler.sample(i, &mut rng);
                totals.add(&o);
                let epoch = i * period;
                for _ in 0..o.n_stokes_detected {
                    s_tags.push(epoch.saturating_add_signed(gaussian_jitter_ps(jitter, &mut rng)));
                }
                for _ in 0..o.n_as_detected {
                    as_tags.push(epoch.saturating_add_signed(gaussian_jitter_ps(jitter, &mut rng)));
                }
            }
            (s_tags, as_tags, totals)
        })
        .collect();

    let mut summary = RunSummary {
        power_mw,
        n_pulses,
        elapsed_s: n_pulses as f64 / cfg.laser.rep_rate_hz,
        seed,
        ..Default::default()
    };
    let mut stream = TagStream::default();
    for (s, a, t) in parts {
        summary.merge(&t);
        stream.stokes.extend_from_slice(&s);
        stream.anti_stokes.extend_from_slice(&a);
    }
    stream.stokes.par_sort_unstable();
    stream.anti_stokes.par_sort_unstable();
    dead_time_filter(&mut stream.stokes, cfg.dead_time_ps);
    dead_time_filter(&mut stream.anti_stokes, cfg.dead_time_ps);
    summary.stokes_tags = stream.stokes.len() as u64;
    summary.as_tags = stream.anti_stokes.len() as u64;
    Ok((stream, summary))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    /// Distance from `expected` in units of sigma.
    pub fn z(&self, expected: f64) -> f64 {
        (self.value - expected) / self.sigma
    }
}

/// Ratio `sum(x) / sum(y)` with the batch-means (delta method) error.
fn ratio_estimate(x: &[f64], y: &[f64]) -> Estimate {
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let r = sx / sy;
    let nb = x.len() as f64;
    let sigma = if x.len() < 2 {
        f64::NAN
    } else {
        let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - r * b).powi(2)).sum();
        (nb / (nb - 1.0) * ss).sqrt() / sy.abs()
    };
    Estimate { value: r, sigma }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    /// Peaks `±1..=±side_peaks` are used for the accidental level.
    pub side_peaks: usize,
    /// Contiguous pulse batches for the error estimates.
    pub batches: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            side_peaks: DEFAULT_SIDE_PEAKS,
            batches: DEFAULT_SWEEP_BATCHES,
        }
    }
}

/// Rates, per-pulse means and pulse-resolved coincidences at one power.
///
/// `center` counts Stokes/anti-Stokes detection pairs from the same pulse,
/// `side_counts[k-1]` and `side_counts[K+k-1]` those with the anti-Stokes
/// photon `k` pulses later and earlier. `side_mean` is the side-peak count
/// rescaled to `n_pulses` pulse pairs, so `g2 = center / side_mean`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub power_mw: f64,
    pub seed: u64,
    pub summary: RunSummary,
    pub rate_s_hz: Estimate,
    pub rate_as_hz: Estimate,
    pub mean_stokes: Estimate,
    pub mean_as_pair: Estimate,
    pub mean_as_thermal: Estimate,
    pub mean_stokes_detected: Estimate,
    pub mean_as_detected: Estimate,
    pub center: Estimate,
    pub side_mean: Estimate,
    pub side_counts: Vec<u64>,
    pub g2: Option<Estimate>,
}

#[derive(Clone, Debug, Default)]
struct BatchCounts {
    pulses: u64,
    totals: RunSummary,
    center: u64,
    side: Vec<u64>,
    pairs: u64,
}

fn batch_counts(sampler: &PulseSampler, seed: u64, start: u64, end: u64, k_max: usize) -> BatchCounts {
    let k = k_max as u64;
    let mut ring_s = vec![0u64; k_max];
    let mut ring_as = vec![0u64; k_max];
    for i in start.saturating_sub(k)..start {
        let o = sampler.pulse(seed, i);
        ring_s[(i % k) as usize] = o.n_stokes_detected;
        ring_as[(i % k) as usize] = o.n_as_detected;
    }
    let mut out = BatchCounts {
        pulses: end - start,
        side: vec![0; 2 * k_max],
        ..Default::default()
    };
    for i in start..end {
        let o = sampler.pulse(seed, i);
        out.totals.add(&o);
        let (ds, das) = (o.n_stokes_detected, o.n_as_detected);
        out.center += ds * das;
        if ds > 0 || das > 0 {
            for d in 1..=k.min(i) {
                let j = ((i - d) % k) as usize;
                // anti-Stokes d pulses after the Stokes photon, then before
                out.side[d as usize - 1] += ring_s[j] * das;
                out.side[k_max + d as usize - 1] += ds * ring_as[j];
            }
        }
        out.pairs += 2 * k.min(i);
        let slot = (i % k) as usize;
        ring_s[slot] = ds;
        ring_as[slot] = das;
    }
    out
}

/// Pulse-domain run at one power: counts and coincidences without
/// materializing time tags. Coincidences equal the tag-histogram peak
/// counts when the jitter lies within the coincidence window.
pub fn pulse_coincidences(
    cfg: &ModelConfig,
    power_mw: f64,
    n_pulses: u64,
    seed: u64,
    opts: &SweepOptions,
) -> Result<SweepRow> {
    check_run(cfg, n_pulses)?;
    if opts.side_peaks == 0 {
        return Err(SimError::NoSidePeaks);
    }
    let sampler = PulseSampler::new(cfg, power_mw)?;
    let nb = opts.batches.clamp(1, n_pulses);
    let batches: Vec<BatchCounts> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let start = b * n_pulses / nb;
            let end = (b + 1) * n_pulses / nb;
            batch_counts(&sampler, seed, start, end, opts.side_peaks)
        })
        .collect();

    let elapsed_s = n_pulses as f64 / cfg.laser.rep_rate_hz;
    let mut summary = RunSummary {
        power_mw,
        n_pulses,
        elapsed_s,
        seed,
        ..Default::default()
    };
    let mut side_counts = vec![0u64; 2 * opts.side_peaks];
    for b in &batches {
        summary.merge(&b.totals);
        for (acc, s) in side_counts.iter_mut().zip(&b.side) {
            *acc += s;
        }
    }
    summary.stokes_tags = summary.stokes_detected;
    summary.as_tags = summary.as_detected;

    let pulses: Vec<f64> = batches.iter().map(|b| b.pulses as f64).collect();
    let per_pulse = |f: fn(&BatchCounts) -> u64| {
        let x: Vec<f64> = batches.iter().map(|b| f(b) as f64).collect();
        ratio_estimate(&x, &pulses)
    };
    let scale = |e: Estimate, s: f64| Estimate {
        value: e.value * s,
        sigma: e.sigma * s,
    };
    let rep = cfg.laser.rep_rate_hz;
    let n = n_pulses as f64;

    let total_pairs: u64 = batches.iter().map(|b| b.pairs).sum();
    let center = scale(per_pulse(|b| b.center), n);
    let side: Vec<f64> = batches.iter().map(|b| b.side.iter().sum::<u64>() as f64).collect();
    let pairs: Vec<f64> = batches.iter().map(|b| b.pairs as f64).collect();
    let side_mean = scale(ratio_estimate(&side, &pairs), n);
    let g2 = (side.iter().sum::<f64>() > 0.0).then(|| {
        let c: Vec<f64> = batches.iter().map(|b| b.center as f64).collect();
        let norm = n / total_pairs as f64;
        let y: Vec<f64> = side.iter().map(|s| s * norm).collect();
        ratio_estimate(&c, &y)
    });

    Ok(SweepRow {
        power_mw,
        seed,
        rate_s_hz: scale(per_pulse(|b| b.totals.stokes_detected), rep),
        rate_as_hz: scale(per_pulse(|b| b.totals.as_detected), rep),
        mean_stokes: per_pulse(|b| b.totals.stokes_generated),
        mean_as_pair: per_pulse(|b| b.totals.as_pair),
        mean_as_thermal: per_pulse(|b| b.totals.as_thermal),
        mean_stokes_detected: per_pulse(|b| b.totals.stokes_detected),
        mean_as_detected: per_pulse(|b| b.totals.as_detected),
        center,
        side_mean,
        side_counts,
        g2,
        summary,
    })
}

/// One independent run per power; the run at index `i` uses the sub-seed
/// `derive_seed(seed, i)`.
pub fn sweep(cfg: &ModelConfig, powers: &[f64], n_pulses: u64, seed: u64) -> Result<Vec<SweepRow>> {
    sweep_with(cfg, powers, n_pulses, seed, &SweepOptions::default())
}

pub fn sweep_with(
    cfg: &ModelConfig,
    powers: &[f64],
    n_pulses: u64,
    seed: u64,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    if powers.is_empty() {
        return Err(SimError::NoPowers);
    }
    powers
        .iter()
        .enumerate()
        .map(|(i, &p)| pulse_coincidences(cfg, p, n_pulses, derive_seed(seed, i as u64), opts))
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 25] = [
    "power_mW",
    "n_pulses",
    "rate_S_Hz",
    "rate_aS_Hz",
    "mean_stokes_per_pulse",
    "mean_as_pair_per_pulse",
    "mean_as_thermal_per_pulse",
    "rate_S_Hz_sigma",
    "rate_aS_Hz_sigma",
    "mean_stokes_per_pulse_sigma",
    "mean_as_pair_per_pulse_sigma",
    "mean_as_thermal_per_pulse_sigma",
    "mean_stokes_detected_per_pulse",
    "mean_stokes_detected_per_pulse_sigma",
    "mean_as_detected_per_pulse",
    "mean_as_detected_per_pulse_sigma",
    "center",
    "center_sigma",
    "side_mean",
    "side_mean_sigma",
    "g2",
    "g2_sigma",
    "side_peaks",
    "batches",
    "seed",
];

/// Write sweep rows as CSV, preceded by `# key: value` metadata lines.
pub fn write_sweep_csv<W: Write>(
    mut w: W,
    rows: &[SweepRow],
    opts: &SweepOptions,
    metadata: &[(&str, String)],
) -> io::Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "{}", SWEEP_COLUMNS.join(","))?;
    for r in rows {
        let g2 = r.g2.unwrap_or(Estimate {
            value: f64::NAN,
            sigma: f64::NAN,
        });
        let nb = opts.batches.clamp(1, r.summary.n_pulses);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.power_mw,
            r.summary.n_pulses,
            r.rate_s_hz.value,
            r.rate_as_hz.value,
            r.mean_stokes.value,
            r.mean_as_pair.value,
            r.mean_as_thermal.value,
            r.rate_s_hz.sigma,
            r.rate_as_hz.sigma,
            r.mean_stokes.sigma,
            r.mean_as_pair.sigma,
            r.mean_as_thermal.sigma,
            r.mean_stokes_detected.value,
            r.mean_stokes_detected.sigma,
            r.mean_as_detected.value,
            r.mean_as_detected.sigma,
            r.center.value,
            r.center.sigma,
            r.side_mean.value,
            r.side_mean.sigma,
            g2.value,
            g2.sigma,
            opts.side_peaks,
            nb,
            r.seed,
        )?;
    }
    Ok(())
}

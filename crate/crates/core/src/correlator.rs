//! Coincidence histograms between time-tag streams, pulse-comb peaks and
//! g2 estimates.
//!
//! Bins are centered on multiples of the bin width `w`: a lag goes to bin
//! `j = sign(lag) * floor((|lag| + w/2) / w)` (integer `w/2`), i.e. it is
//! rounded half away from zero, for `j` in `-J..=J` with `J = max_lag / w`.
//! The binning is symmetric, so swapping the streams mirrors the histogram.
//! All pairs inside the lag range are counted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{domain, CounterRng};

/// `stream_a` tags per parallel work unit.
const CHUNK: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrError {
    #[error("{stream} is not sorted: index {index} precedes its predecessor")]
    Unsorted { stream: &'static str, index: usize },
    #[error("bin width must be > 0")]
    ZeroBinWidth,
    #[error("max lag {max_lag_ps} ps is not a multiple of the bin width {bin_width_ps} ps")]
    LagNotMultiple { max_lag_ps: u64, bin_width_ps: u64 },
    #[error("window {window_ps} ps exceeds half the rep period {rep_period_ps} ps")]
    WindowTooWide { window_ps: u64, rep_period_ps: u64 },
    #[error("rep period {rep_period_ps} ps is not a whole number of {bin_width_ps} ps bins")]
    PeriodNotBinMultiple { rep_period_ps: u64, bin_width_ps: u64 },
    #[error("rep period must be > 0")]
    ZeroPeriod,
    #[error("need at least 2 side peaks, histogram supports {0}")]
    TooFewSidePeaks(usize),
    #[error("Cauchy-Schwarz inputs must all be > 0")]
    NonPositiveInput,
}

pub type Result<T> = std::result::Result<T, CorrError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub max_lag_ps: u64,
    /// `counts[i]` belongs to bin `j = i - J`.
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    /// Span of the union of both streams.
    pub duration_ps: u64,
}

impl CorrelationHistogram {
    pub fn half_bins(&self) -> i64 {
        (self.max_lag_ps / self.bin_width_ps) as i64
    }

    /// Lag at the center of `counts[i]`.
    pub fn bin_center(&self, i: usize) -> i64 {
        (i as i64 - self.half_bins()) * self.bin_width_ps as i64
    }

    /// Index into `counts` of the bin holding `lag`, if in range.
    pub fn bin_index(&self, lag: i64) -> Option<usize> {
        let j = bin_of(lag as i128, self.bin_width_ps as i128) as i64;
        let jj = self.half_bins();
        (-jj..=jj).contains(&j).then(|| (j + jj) as usize)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[inline]
fn bin_of(lag: i128, w: i128) -> i128 {
    let j = (lag.abs() + w / 2) / w;
    if lag < 0 {
        -j
    } else {
        j
    }
}

fn check_sorted(tags: &[u64], stream: &'static str) -> Result<()> {
    match tags.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(CorrError::Unsorted { stream, index: i + 1 }),
        None => Ok(()),
    }
}

fn check_binning(bin_width_ps: u64, max_lag_ps: u64) -> Result<()> {
    if bin_width_ps == 0 {
        return Err(CorrError::ZeroBinWidth);
    }
    if !max_lag_ps.is_multiple_of(bin_width_ps) {
        return Err(CorrError::LagNotMultiple {
            max_lag_ps,
            bin_width_ps,
        });
    }
    Ok(())
}

/// Histogram of `t_b - t_a` over all pairs whose lag falls in a bin.
pub fn cross_correlate(
    stream_a: &[u64],
    stream_b: &[u64],
    bin_width_ps: u64,
    max_lag_ps: u64,
) -> Result<CorrelationHistogram> {
    check_binning(bin_width_ps, max_lag_ps)?;
    check_sorted(stream_a, "stream_a")?;
    check_sorted(stream_b, "stream_b")?;

    let w = bin_width_ps as i128;
    let jj = (max_lag_ps / bin_width_ps) as i128;
    let n_bins = (2 * jj + 1) as usize;
    // lags covered by bins -J..=J
    let hi = (jj + 1) * w - w / 2 - 1;
    let lo = -hi;

    let chunk_hist = |chunk: &[u64]| {
        let mut counts = vec![0u64; n_bins];
        let Some(&first) = chunk.first() else {
            return counts;
        };
        let mut start = stream_b.partition_point(|&t| (t as i128) < first as i128 + lo);
        for &ta in chunk {
            let ta = ta as i128;
            while start < stream_b.len() && (stream_b[start] as i128) < ta + lo {
                start += 1;
            }
            let mut k = start;
            while k < stream_b.len() {
                let lag = stream_b[k] as i128 - ta;
                if lag > hi {
                    break;
                }
                counts[(bin_of(lag, w) + jj) as usize] += 1;
                k += 1;
            }
        }
        counts
    };

    let counts = stream_a
        .par_chunks(CHUNK)
        .map(chunk_hist)
        .reduce(
            || vec![0u64; n_bins],
            |mut acc, c| {
                for (x, y) in acc.iter_mut().zip(c) {
                    *x += y;
                }
                acc
            },
        );

    let lo_t = stream_a.first().into_iter().chain(stream_b.first()).min();
    let hi_t = stream_a.last().into_iter().chain(stream_b.last()).max();
    let duration_ps = match (lo_t, hi_t) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    };
    Ok(CorrelationHistogram {
        bin_width_ps,
        max_lag_ps,
        counts,
        n_a: stream_a.len() as u64,
        n_b: stream_b.len() as u64,
        duration_ps,
    })
}

/// Split one stream 50/50 into two virtual detectors.
pub fn hbt_split(stream: &[u64], splitter_seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = CounterRng::new(splitter_seed, domain::HBT_SPLIT, 0);
    let mut a = Vec::with_capacity(stream.len() / 2 + 1);
    let mut b = Vec::with_capacity(stream.len() / 2 + 1);
    let mut bits = 0u64;
    for (i, &t) in stream.iter().enumerate() {
        if i % 64 == 0 {
            bits = rand::RngCore::next_u64(&mut rng);
        }
        if bits & 1 == 0 {
            a.push(t);
        } else {
            b.push(t);
        }
        bits >>= 1;
    }
    (a, b)
}

/// Autocorrelation of one detector measured with a virtual beam splitter.
pub fn autocorrelate_hbt(
    stream: &[u64],
    splitter_seed: u64,
    bin_width_ps: u64,
    max_lag_ps: u64,
) -> Result<CorrelationHistogram> {
    check_sorted(stream, "stream")?;
    let (a, b) = hbt_split(stream, splitter_seed);
    cross_correlate(&a, &b, bin_width_ps, max_lag_ps)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakSeries {
    pub rep_period_ps: u64,
    pub window_ps: u64,
    pub peak_counts: BTreeMap<i64, u64>,
}

impl PeakSeries {
    pub fn center(&self) -> u64 {
        self.peak_counts.get(&0).copied().unwrap_or(0)
    }

    pub fn side_peaks(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.peak_counts.iter().filter(|(k, _)| **k != 0).map(|(k, c)| (*k, *c))
    }
}

/// Sum the histogram around each multiple of the rep period.
///
/// Peak `k` collects the bins whose centers lie in `[kT - window, kT + window]`
/// (upper edge open when `2 window == T`, so no bin is counted twice). Only
/// peaks whose whole window lies inside the histogram are reported.
pub fn extract_peaks(hist: &CorrelationHistogram, rep_period_ps: u64, window_ps: u64) -> Result<PeakSeries> {
    if rep_period_ps == 0 {
        return Err(CorrError::ZeroPeriod);
    }
    if 2 * window_ps > rep_period_ps {
        return Err(CorrError::WindowTooWide {
            window_ps,
            rep_period_ps,
        });
    }
    if !rep_period_ps.is_multiple_of(hist.bin_width_ps) {
        return Err(CorrError::PeriodNotBinMultiple {
            rep_period_ps,
            bin_width_ps: hist.bin_width_ps,
        });
    }
    let t = rep_period_ps as i64;
    let win = window_ps as i64;
    let max_lag = hist.max_lag_ps as i64;
    let k_max = if max_lag >= win { (max_lag - win) / t } else { -1 };
    let half_open = 2 * window_ps == rep_period_ps;
    let mut peak_counts = BTreeMap::new();
    for k in -k_max..=k_max {
        let (lo, hi) = (k * t - win, k * t + win);
        let sum = (0..hist.counts.len())
            .filter(|&i| {
                let c = hist.bin_center(i);
                c >= lo && (c < hi || (c == hi && !half_open))
            })
            .map(|i| hist.counts[i])
            .sum();
        peak_counts.insert(k, sum);
    }
    Ok(PeakSeries {
        rep_period_ps,
        window_ps,
        peak_counts,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2Estimate {
    pub g2: f64,
    pub sigma: f64,
    pub center_count: u64,
    pub side_mean: f64,
    pub n_side_peaks: usize,
    /// Set when every side peak is empty; `g2` is then infinite.
    pub side_empty: bool,
}

/// Center peak over the mean side peak, with Poisson error propagation.
pub fn g2_from_peaks(peaks: &PeakSeries) -> Result<G2Estimate> {
    let sides: Vec<u64> = peaks.side_peaks().map(|(_, c)| c).collect();
    if sides.len() < 2 {
        return Err(CorrError::TooFewSidePeaks(sides.len()));
    }
    let n = sides.len();
    let center = peaks.center();
    let side_mean = sides.iter().sum::<u64>() as f64 / n as f64;
    if side_mean == 0.0 {
        return Ok(G2Estimate {
            g2: f64::INFINITY,
            sigma: f64::INFINITY,
            center_count: center,
            side_mean,
            n_side_peaks: n,
            side_empty: true,
        });
    }
    let c = center as f64;
    let g2 = c / side_mean;
    let sigma = if center == 0 {
        // one count would give 1 / side_mean
        1.0 / side_mean
    } else {
        g2 * (1.0 / c + 1.0 / (n as f64 * side_mean)).sqrt()
    };
    Ok(G2Estimate {
        g2,
        sigma,
        center_count: center,
        side_mean,
        n_side_peaks: n,
        side_empty: false,
    })
}

/// `g2_sas^2 / (g2_ss g2_asas)`; above 1 no classical field can produce it.
pub fn cauchy_schwarz_factor(g2_sas: f64, g2_ss: f64, g2_asas: f64) -> Result<f64> {
    if !(g2_sas > 0.0 && g2_ss > 0.0 && g2_asas > 0.0) {
        return Err(CorrError::NonPositiveInput);
    }
    Ok(g2_sas * g2_sas / (g2_ss * g2_asas))
}

/// Cauchy-Schwarz factor with first-order error propagation.
pub fn cauchy_schwarz_estimate(sas: &G2Estimate, ss: &G2Estimate, asas: &G2Estimate) -> Result<(f64, f64)> {
    let r = cauchy_schwarz_factor(sas.g2, ss.g2, asas.g2)?;
    let rel2 = 4.0 * (sas.sigma / sas.g2).powi(2) + (ss.sigma / ss.g2).powi(2) + (asas.sigma / asas.g2).powi(2);
    Ok((r, r * rel2.sqrt()))
}

pub fn write_histogram_csv<W: Write>(mut w: W, hist: &CorrelationHistogram, metadata: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "lag_ps,count")?;
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{}", hist.bin_center(i), c)?;
    }
    Ok(())
}

pub fn write_peaks_csv<W: Write>(mut w: W, peaks: &PeakSeries, metadata: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "peak_index,count")?;
    for (k, c) in &peaks.peak_counts {
        writeln!(w, "{k},{c}")?;
    }
    Ok(())
}

/// Plain `key = value` report.
pub fn g2_report(est: &G2Estimate, cauchy_schwarz: Option<(f64, f64)>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "g2 = {}", est.g2);
    let _ = writeln!(s, "sigma = {}", est.sigma);
    let _ = writeln!(s, "center = {}", est.center_count);
    let _ = writeln!(s, "side_mean = {}", est.side_mean);
    let _ = writeln!(s, "n_side_peaks = {}", est.n_side_peaks);
    if est.side_empty {
        let _ = writeln!(s, "flag = side_peaks_empty");
    }
    if let Some((r, sigma)) = cauchy_schwarz {
        let _ = writeln!(s, "R = {r}");
        let _ = writeln!(s, "R_sigma = {sigma}");
    }
    s
}

//! Per-pulse stochastic model of Stokes / anti-Stokes pair generation and
//! its closed-form expectations.
//!
//! Per laser pulse at average power `P` (mW):
//!
//! * `N_S` Stokes photons, Poisson or Bose-Einstein with mean `m_S = k_S P`;
//!   each one leaves a phonon behind.
//! * each phonon is read out into an anti-Stokes photon with probability
//!   `r = min(k_r P, 1)`, giving `Binomial(N_S, r)` correlated pairs;
//! * thermally seeded anti-Stokes photons, Poisson with mean `m_th = k_th P`;
//! * detection is independent binomial thinning with `eta_S` and `eta_aS`.
//!
//! Pulses are independent. The closed forms here are the analytic oracle for
//! the simulator and the correlator.

use std::fmt::Write as _;

use thiserror::Error;

/// `h c / k_B` in cm K.
pub const SECOND_RADIATION_CONSTANT_CM_K: f64 = 1.4388;

/// Tail mass left out by [`forecast_enumerated`].
pub const ENUMERATION_TAIL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("laser power must be finite and >= 0, got {0} mW")]
    NegativePower(f64),
    #[error("laser power must be > 0, got {0} mW")]
    NonPositivePower(f64),
    #[error("closed-form g2 is only defined for Poissonian Stokes statistics; use forecast_enumerated")]
    ThermalStatistics,
    #[error("g2 is undefined: no anti-Stokes or no Stokes photons at {0} mW")]
    UndefinedG2(f64),
    #[error("infeasible calibration target ({constraint}): {detail}")]
    Infeasible {
        constraint: &'static str,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq)]
pub struct LaserConfig {
    pub wavelength_nm: f64,
    pub rep_rate_hz: f64,
    pub pulse_duration_fs: f64,
    /// Nominal power; operations take the power explicitly.
    pub power_mw: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 785.0,
            rep_rate_hz: 76e6,
            pulse_duration_fs: 130.0,
            power_mw: 8.6,
        }
    }
}

impl LaserConfig {
    /// Pulse period rounded to whole picoseconds.
    pub fn rep_period_ps(&self) -> u64 {
        (1e12 / self.rep_rate_hz).round() as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialConfig {
    pub phonon_wavenumber_cm: f64,
    pub temperature_k: f64,
    pub stokes_wavelength_nm: f64,
    pub antistokes_wavelength_nm: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            phonon_wavenumber_cm: 1332.0,
            temperature_k: 300.0,
            stokes_wavelength_nm: 880.0,
            antistokes_wavelength_nm: 710.0,
        }
    }
}

/// Photon-number statistics of the Stokes field within one pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StokesStatistics {
    Poissonian,
    /// Bose-Einstein (single-mode thermal).
    Thermal,
}

impl StokesStatistics {
    pub fn as_str(self) -> &'static str {
        match self {
            StokesStatistics::Poissonian => "poissonian",
            StokesStatistics::Thermal => "thermal",
        }
    }

    /// `E[n^2]` for mean `m`.
    pub fn second_moment(self, m: f64) -> f64 {
        match self {
            StokesStatistics::Poissonian => m + m * m,
            StokesStatistics::Thermal => m + 2.0 * m * m,
        }
    }

    /// Probability that a thinned count (survival `eta`) is zero.
    fn zero_after_thinning(self, m: f64, eta: f64) -> f64 {
        match self {
            StokesStatistics::Poissonian => (-eta * m).exp(),
            StokesStatistics::Thermal => 1.0 / (1.0 + eta * m),
        }
    }
}

impl std::str::FromStr for StokesStatistics {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "poissonian" | "poisson" => Ok(StokesStatistics::Poissonian),
            "thermal" | "bose-einstein" => Ok(StokesStatistics::Thermal),
            other => Err(format!("unknown Stokes statistics {other:?}, expected poissonian or thermal")),
        }
    }
}

/// Rate constants of the per-pulse model. Rates are per mW.
#[derive(Clone, Debug, PartialEq)]
pub struct RateConstants {
    /// Mean generated Stokes photons per pulse per mW.
    pub k_s: f64,
    /// Phonon read probability per mW (clamped to 1 after multiplying by power).
    pub k_r: f64,
    /// Mean thermal anti-Stokes photons per pulse per mW.
    pub k_th: f64,
    pub eta_s: f64,
    pub eta_as: f64,
    pub stokes_statistics: StokesStatistics,
}

/// Count rates of the two detectors at 8.6 mW.
pub const DEFAULT_CALIBRATION_POWER_MW: f64 = 8.6;
pub const DEFAULT_STOKES_RATE_HZ: f64 = 4200.0;
pub const DEFAULT_ANTISTOKES_RATE_HZ: f64 = 200.0;
/// Four Stokes phonons per pulse at 5 mW.
pub const DEFAULT_K_S: f64 = 0.8;
pub const DEFAULT_K_R: f64 = 1e-4;
pub const DEFAULT_K_TH: f64 = 1e-5;

impl Default for RateConstants {
    /// `k_S`, `k_r`, `k_th` as above, efficiencies solved so that the
    /// detectors click at 4.2 kHz and 200 Hz at 8.6 mW and 76 MHz.
    fn default() -> Self {
        let rep = LaserConfig::default().rep_rate_hz;
        let p = DEFAULT_CALIBRATION_POWER_MW;
        let m_s = DEFAULT_K_S * p;
        let m_as = DEFAULT_K_R * p * m_s + DEFAULT_K_TH * p;
        Self {
            k_s: DEFAULT_K_S,
            k_r: DEFAULT_K_R,
            k_th: DEFAULT_K_TH,
            eta_s: poisson_efficiency(DEFAULT_STOKES_RATE_HZ, rep, m_s),
            eta_as: poisson_efficiency(DEFAULT_ANTISTOKES_RATE_HZ, rep, m_as),
            stokes_statistics: StokesStatistics::Poissonian,
        }
    }
}

/// Efficiency at which a Poisson source of the given mean clicks at `rate`.
fn poisson_efficiency(rate_hz: f64, rep_rate_hz: f64, mean: f64) -> f64 {
    -(-rate_hz / rep_rate_hz).ln_1p() / mean
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub laser: LaserConfig,
    pub material: MaterialConfig,
    pub rates: RateConstants,
    /// Gaussian sigma of the tag timing.
    pub detector_jitter_ps: f64,
    pub coincidence_window_ps: u64,
    pub dead_time_ps: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            laser: LaserConfig::default(),
            material: MaterialConfig::default(),
            rates: RateConstants::default(),
            detector_jitter_ps: 350.0,
            coincidence_window_ps: 1000,
            dead_time_ps: 0,
        }
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidConfig(what()))
    }
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl ModelConfig {
    pub fn rep_period_ps(&self) -> u64 {
        self.laser.rep_period_ps()
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.laser;
        let m = &self.material;
        let r = &self.rates;
        check(l.rep_rate_hz.is_finite() && l.rep_rate_hz > 0.0, || {
            format!("rep_rate must be > 0 (got {})", l.rep_rate_hz)
        })?;
        check(l.rep_period_ps() >= 1, || {
            format!("rep period of {} Hz is below 1 ps", l.rep_rate_hz)
        })?;
        check(l.pulse_duration_fs.is_finite() && l.pulse_duration_fs > 0.0, || {
            format!("pulse_duration must be > 0 (got {})", l.pulse_duration_fs)
        })?;
        check(finite_nonneg(l.power_mw), || format!("power must be >= 0 (got {})", l.power_mw))?;
        check(l.wavelength_nm.is_finite() && l.wavelength_nm > 0.0, || {
            format!("laser wavelength must be > 0 (got {})", l.wavelength_nm)
        })?;
        check(m.phonon_wavenumber_cm.is_finite() && m.phonon_wavenumber_cm > 0.0, || {
            format!("phonon wavenumber must be > 0 (got {})", m.phonon_wavenumber_cm)
        })?;
        check(finite_nonneg(m.temperature_k), || {
            format!("temperature must be >= 0 (got {})", m.temperature_k)
        })?;
        check(
            m.stokes_wavelength_nm > l.wavelength_nm && l.wavelength_nm > m.antistokes_wavelength_nm,
            || {
                format!(
                    "wavelengths must satisfy stokes ({}) > laser ({}) > anti-stokes ({})",
                    m.stokes_wavelength_nm, l.wavelength_nm, m.antistokes_wavelength_nm
                )
            },
        )?;
        for (name, v) in [("k_s", r.k_s), ("k_r", r.k_r), ("k_th", r.k_th)] {
            check(finite_nonneg(v), || format!("{name} must be >= 0 (got {v})"))?;
        }
        for (name, v) in [("eta_s", r.eta_s), ("eta_as", r.eta_as)] {
            check((0.0..=1.0).contains(&v), || format!("{name} must lie in [0, 1] (got {v})"))?;
        }
        check(finite_nonneg(self.detector_jitter_ps), || {
            format!("detector jitter must be >= 0 (got {})", self.detector_jitter_ps)
        })?;
        check(self.coincidence_window_ps < self.rep_period_ps(), || {
            format!(
                "coincidence window {} ps must be shorter than the rep period {} ps",
                self.coincidence_window_ps,
                self.rep_period_ps()
            )
        })?;
        Ok(())
    }

    /// Phonon read probability `min(k_r P, 1)`.
    pub fn read_probability(&self, power_mw: f64) -> f64 {
        (self.rates.k_r * power_mw).min(1.0)
    }

    /// Stable `key = value` rendering, used for digests.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let l = &self.laser;
        let m = &self.material;
        let r = &self.rates;
        let _ = writeln!(s, "laser.wavelength_nm = {}", l.wavelength_nm);
        let _ = writeln!(s, "laser.rep_rate_hz = {}", l.rep_rate_hz);
        let _ = writeln!(s, "laser.pulse_duration_fs = {}", l.pulse_duration_fs);
        let _ = writeln!(s, "laser.power_mw = {}", l.power_mw);
        let _ = writeln!(s, "material.phonon_wavenumber_cm = {}", m.phonon_wavenumber_cm);
        let _ = writeln!(s, "material.temperature_k = {}", m.temperature_k);
        let _ = writeln!(s, "material.stokes_wavelength_nm = {}", m.stokes_wavelength_nm);
        let _ = writeln!(s, "material.antistokes_wavelength_nm = {}", m.antistokes_wavelength_nm);
        let _ = writeln!(s, "rates.k_s = {}", r.k_s);
        let _ = writeln!(s, "rates.k_r = {}", r.k_r);
        let _ = writeln!(s, "rates.k_th = {}", r.k_th);
        let _ = writeln!(s, "rates.eta_s = {}", r.eta_s);
        let _ = writeln!(s, "rates.eta_as = {}", r.eta_as);
        let _ = writeln!(s, "rates.stokes_statistics = {}", r.stokes_statistics.as_str());
        let _ = writeln!(s, "detector.jitter_ps = {}", self.detector_jitter_ps);
        let _ = writeln!(s, "detector.dead_time_ps = {}", self.dead_time_ps);
        let _ = writeln!(s, "coincidence.window_ps = {}", self.coincidence_window_ps);
        s
    }
}

/// Mean photon numbers per pulse and detector click rates.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub m_s: f64,
    pub m_as_pair: f64,
    pub m_as_thermal: f64,
    /// Rate of pulses in which the Stokes detector sees at least one photon.
    pub detected_s_hz: f64,
    pub detected_as_hz: f64,
}

impl RateReport {
    pub fn m_as(&self) -> f64 {
        self.m_as_pair + self.m_as_thermal
    }
}

/// Expected coincidences per pulse at zero delay and per pulse pair at
/// non-zero delay (all photon pairs counted).
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceForecast {
    pub p_center: f64,
    pub p_side: f64,
    /// `p_center / p_side`, `None` when `p_side == 0`.
    pub g2: Option<f64>,
}

/// Mean Bose-Einstein occupation of a phonon mode.
pub fn thermal_occupation(wavenumber_cm: f64, temperature_k: f64) -> f64 {
    assert!(wavenumber_cm > 0.0, "wavenumber must be > 0");
    assert!(temperature_k >= 0.0, "temperature must be >= 0");
    if temperature_k == 0.0 {
        return 0.0;
    }
    1.0 / (SECOND_RADIATION_CONSTANT_CM_K * wavenumber_cm / temperature_k).exp_m1()
}

fn check_power(power_mw: f64) -> Result<()> {
    if power_mw.is_finite() && power_mw >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativePower(power_mw))
    }
}

pub fn expected_rates(cfg: &ModelConfig, power_mw: f64) -> Result<RateReport> {
    check_power(power_mw)?;
    let rates = &cfg.rates;
    let stats = rates.stokes_statistics;
    let m_s = rates.k_s * power_mw;
    let r = cfg.read_probability(power_mw);
    let m_as_pair = r * m_s;
    let m_as_thermal = rates.k_th * power_mw;
    let rep = cfg.laser.rep_rate_hz;
    // A thinned Bose-Einstein count is again Bose-Einstein, so the pair
    // anti-Stokes photons keep the Stokes statistics.
    let zero_s = stats.zero_after_thinning(m_s, rates.eta_s);
    let zero_as = stats.zero_after_thinning(m_s, r * rates.eta_as) * (-rates.eta_as * m_as_thermal).exp();
    Ok(RateReport {
        m_s,
        m_as_pair,
        m_as_thermal,
        detected_s_hz: rep * (1.0 - zero_s),
        detected_as_hz: rep * (1.0 - zero_as),
    })
}

/// Cross-correlation `g2_{S,aS}(0)` for Poissonian Stokes statistics.
///
/// Equals `1 + k_r / (k_S k_r P + k_th)` while `k_r P <= 1`; with the read
/// probability clamped it is `1 + 1 / (m_S + m_th / r)`.
pub fn g2_closed_form(cfg: &ModelConfig, power_mw: f64) -> Result<f64> {
    if !(power_mw.is_finite() && power_mw > 0.0) {
        return Err(ModelError::NonPositivePower(power_mw));
    }
    if cfg.rates.stokes_statistics != StokesStatistics::Poissonian {
        return Err(ModelError::ThermalStatistics);
    }
    let m_s = cfg.rates.k_s * power_mw;
    let m_th = cfg.rates.k_th * power_mw;
    let r = cfg.read_probability(power_mw);
    if m_s == 0.0 || (r == 0.0 && m_th == 0.0) {
        return Err(ModelError::UndefinedG2(power_mw));
    }
    if r == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 + 1.0 / (m_s + m_th / r))
}

/// Expected coincidences at peak `peak_index` of the pulse comb.
///
/// Peak 0 holds the correlated pairs plus same-pulse accidentals,
/// `eta_S eta_aS (r E[n^2] + m_S m_th)`, which for Poisson statistics is
/// `eta_S eta_aS (r m_S + m_S m_aS)`. Every other peak pairs photons from
/// independent pulses: `(eta_S m_S)(eta_aS m_aS)`.
pub fn coincidence_prob(cfg: &ModelConfig, power_mw: f64, peak_index: i64) -> Result<f64> {
    check_power(power_mw)?;
    let rates = &cfg.rates;
    let m_s = rates.k_s * power_mw;
    let m_th = rates.k_th * power_mw;
    let r = cfg.read_probability(power_mw);
    let eta = rates.eta_s * rates.eta_as;
    Ok(if peak_index == 0 {
        eta * (r * rates.stokes_statistics.second_moment(m_s) + m_s * m_th)
    } else {
        eta * m_s * (r * m_s + m_th)
    })
}

pub fn forecast(cfg: &ModelConfig, power_mw: f64) -> Result<CoincidenceForecast> {
    let p_center = coincidence_prob(cfg, power_mw, 0)?;
    let p_side = coincidence_prob(cfg, power_mw, 1)?;
    Ok(CoincidenceForecast {
        p_center,
        p_side,
        g2: (p_side > 0.0).then(|| p_center / p_side),
    })
}

/// Expectations obtained by summing over the Stokes photon number and the
/// number of read phonons, independent of the closed forms above.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedForecast {
    pub mean_stokes: f64,
    pub mean_as_pair: f64,
    pub mean_as_thermal: f64,
    pub stokes_second_moment: f64,
    pub click_s: f64,
    pub click_as: f64,
    pub forecast: CoincidenceForecast,
    /// Largest Stokes photon number included.
    pub n_max: u64,
    pub tail_mass: f64,
}

fn stokes_pmf(stats: StokesStatistics, m: f64, n: u64, ln_fact: &[f64]) -> f64 {
    if m == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    match stats {
        StokesStatistics::Poissonian => (-m + n as f64 * m.ln() - ln_fact[n as usize]).exp(),
        StokesStatistics::Thermal => {
            let q = m / (1.0 + m);
            (1.0 - q) * q.powf(n as f64)
        }
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Brute-force expectations over Stokes photon numbers `0..=n_max`, with
/// `n_max` the first number past the mean where the remaining tail mass is
/// below [`ENUMERATION_TAIL`]. Works for both statistics.
pub fn forecast_enumerated(cfg: &ModelConfig, power_mw: f64) -> Result<EnumeratedForecast> {
    check_power(power_mw)?;
    let rates = &cfg.rates;
    let stats = rates.stokes_statistics;
    let m_s = rates.k_s * power_mw;
    let m_th = rates.k_th * power_mw;
    let r = cfg.read_probability(power_mw);

    // Size the factorial table generously, then extend if needed.
    let mut ln_fact = ln_factorials(64 + (m_s * 40.0) as usize);
    let miss_as_thermal = (-rates.eta_as * m_th).exp();

    let mut mass = 0.0;
    let mut e_n = 0.0;
    let mut e_n2 = 0.0;
    let mut e_pairs = 0.0;
    let mut e_s_times_pairs = 0.0;
    let mut zero_s = 0.0;
    let mut zero_as = 0.0;
    let mut n: u64 = 0;
    loop {
        if n as usize >= ln_fact.len() {
            ln_fact = ln_factorials(2 * ln_fact.len());
        }
        let p_n = stokes_pmf(stats, m_s, n, &ln_fact);
        let nf = n as f64;
        mass += p_n;
        e_n += p_n * nf;
        e_n2 += p_n * nf * nf;
        zero_s += p_n * (1.0 - rates.eta_s).powf(nf);

        // Sum over the number j of phonons read out.
        let mut pairs_given_n = 0.0;
        let mut zero_as_given_n = 0.0;
        for j in 0..=n {
            let p_j = binomial_pmf(n, j, r, &ln_fact);
            if p_j == 0.0 {
                continue;
            }
            pairs_given_n += p_j * j as f64;
            zero_as_given_n += p_j * (1.0 - rates.eta_as).powf(j as f64);
        }
        e_pairs += p_n * pairs_given_n;
        // Given n, the Stokes detections are independent of which phonons are read.
        e_s_times_pairs += p_n * rates.eta_s * nf * pairs_given_n;
        zero_as += p_n * zero_as_given_n;

        // also wait for the n^2-weighted terms to become negligible
        if nf > m_s && 1.0 - mass < ENUMERATION_TAIL && p_n * nf * nf <= 1e-16 * e_n2 {
            break;
        }
        n += 1;
    }
    let mean_as_pair = e_pairs;
    let p_center = rates.eta_as * (e_s_times_pairs + rates.eta_s * e_n * m_th);
    let p_side = rates.eta_s * e_n * rates.eta_as * (mean_as_pair + m_th);
    Ok(EnumeratedForecast {
        mean_stokes: e_n,
        mean_as_pair,
        mean_as_thermal: m_th,
        stokes_second_moment: e_n2,
        click_s: 1.0 - zero_s,
        click_as: 1.0 - zero_as * miss_as_thermal,
        forecast: CoincidenceForecast {
            p_center,
            p_side,
            g2: (p_side > 0.0).then(|| p_center / p_side),
        },
        n_max: n,
        tail_mass: (1.0 - mass).max(0.0),
    })
}

fn binomial_pmf(n: u64, j: u64, p: f64, ln_fact: &[f64]) -> f64 {
    if p == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if j == n { 1.0 } else { 0.0 };
    }
    let (n_, j_) = (n as usize, j as usize);
    let ln = ln_fact[n_] - ln_fact[j_] - ln_fact[n_ - j_]
        + j as f64 * p.ln()
        + (n - j) as f64 * (-p).ln_1p();
    ln.exp()
}

/// Observables that [`calibrate`] inverts.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTargets {
    pub detected_s_hz: f64,
    pub detected_as_hz: f64,
    /// Cross-correlation at `power_mw`.
    pub g2: f64,
    /// Power at which the rates and g2 apply.
    pub power_mw: f64,
    pub phonons_per_pulse: f64,
    /// Power at which `phonons_per_pulse` applies.
    pub phonon_power_mw: f64,
    /// `eta_aS / eta_S`. Rates and g2 alone fix only the product `eta_aS k_r`.
    pub efficiency_ratio: f64,
    pub rep_rate_hz: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        let cfg = ModelConfig::default();
        let r = &cfg.rates;
        Self {
            detected_s_hz: DEFAULT_STOKES_RATE_HZ,
            detected_as_hz: DEFAULT_ANTISTOKES_RATE_HZ,
            g2: g2_closed_form(&cfg, DEFAULT_CALIBRATION_POWER_MW).expect("defaults are valid"),
            power_mw: DEFAULT_CALIBRATION_POWER_MW,
            phonons_per_pulse: 4.0,
            phonon_power_mw: 5.0,
            efficiency_ratio: r.eta_as / r.eta_s,
            rep_rate_hz: cfg.laser.rep_rate_hz,
        }
    }
}

fn infeasible(constraint: &'static str, detail: String) -> ModelError {
    ModelError::Infeasible { constraint, detail }
}

/// Solve for the rate constants (Poissonian statistics) that reproduce the
/// targets through [`expected_rates`] and [`g2_closed_form`].
///
/// `k_S` comes from the phonon number, the ratio `m_th / r` from g2, the
/// Stokes efficiency from the Stokes rate, and `r` (hence `k_r`, `k_th`)
/// from the anti-Stokes rate once `eta_aS` is fixed by the ratio.
pub fn calibrate(t: &CalibrationTargets) -> Result<RateConstants> {
    let positive = [
        ("detected_s_hz > 0", t.detected_s_hz),
        ("detected_as_hz > 0", t.detected_as_hz),
        ("g2 > 0", t.g2),
        ("power_mw > 0", t.power_mw),
        ("phonons_per_pulse > 0", t.phonons_per_pulse),
        ("phonon_power_mw > 0", t.phonon_power_mw),
        ("efficiency_ratio > 0", t.efficiency_ratio),
        ("rep_rate_hz > 0", t.rep_rate_hz),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(infeasible(name, format!("got {v}")));
        }
    }
    if t.g2 <= 1.0 {
        return Err(infeasible(
            "g2 > 1",
            format!("g2 = {} leaves no room for a correlated channel", t.g2),
        ));
    }
    for (name, rate) in [("detected_s_hz < rep_rate", t.detected_s_hz), ("detected_as_hz < rep_rate", t.detected_as_hz)] {
        if rate >= t.rep_rate_hz {
            return Err(infeasible(name, format!("{rate} Hz vs {} Hz", t.rep_rate_hz)));
        }
    }

    let k_s = t.phonons_per_pulse / t.phonon_power_mw;
    let m_s = k_s * t.power_mw;
    // g2 - 1 = 1 / (m_S + m_th / r)
    let thermal_per_read = 1.0 / (t.g2 - 1.0) - m_s;
    if thermal_per_read < -1e-12 * m_s {
        return Err(infeasible(
            "g2 <= 1 + 1/m_S",
            format!("g2 = {} exceeds the thermal-free bound {} at m_S = {m_s}", t.g2, 1.0 + 1.0 / m_s),
        ));
    }
    let thermal_per_read = thermal_per_read.max(0.0);

    let eta_s = poisson_efficiency(t.detected_s_hz, t.rep_rate_hz, m_s);
    let eta_as = eta_s * t.efficiency_ratio;
    if eta_s > 1.0 {
        return Err(infeasible("eta_s <= 1", format!("implied eta_s = {eta_s}")));
    }
    if eta_as > 1.0 {
        return Err(infeasible("eta_as <= 1", format!("implied eta_as = {eta_as}")));
    }
    let m_as = -(-t.detected_as_hz / t.rep_rate_hz).ln_1p() / eta_as;
    let r = m_as / (m_s + thermal_per_read);
    if r > 1.0 {
        return Err(infeasible(
            "read probability <= 1",
            format!("implied read probability {r} at {} mW", t.power_mw),
        ));
    }
    Ok(RateConstants {
        k_s,
        k_r: r / t.power_mw,
        k_th: thermal_per_read * r / t.power_mw,
        eta_s,
        eta_as,
        stokes_statistics: StokesStatistics::Poissonian,
    })
}

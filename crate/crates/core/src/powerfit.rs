//! Weighted polynomial fits in laser power and log-log exponent fits.

use std::fmt::Write as _;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest accepted condition number of the normal matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point {index}: sigma must be finite and > 0, got {sigma}")]
    BadSigma { index: usize, sigma: f64 },
    #[error("point {index}: value must be > 0 for a log-log fit, got {value}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("point {index}: power must be finite and > 0, got {power}")]
    BadPower { index: usize, power: f64 },
    #[error("point {index}: value is not finite")]
    NonFiniteValue { index: usize },
    #[error("basis is empty")]
    EmptyBasis,
    #[error("exponent {0} appears twice in the basis")]
    DuplicateExponent(i32),
    #[error("no candidate bases")]
    NoCandidates,
    #[error("normal matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {field:?} in column {column:?}")]
    BadNumber { line: u64, column: String, field: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FitError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataPoint {
    pub power_mw: f64,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSeries {
    pub label: String,
    pub points: Vec<DataPoint>,
}

impl DataSeries {
    pub fn new(label: impl Into<String>, points: Vec<DataPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FitError::TooFewPoints {
                needed: 2,
                got: points.len(),
            });
        }
        for (index, p) in points.iter().enumerate() {
            if !(p.sigma.is_finite() && p.sigma > 0.0) {
                return Err(FitError::BadSigma { index, sigma: p.sigma });
            }
            if !p.power_mw.is_finite() || p.power_mw <= 0.0 {
                return Err(FitError::BadPower { index, power: p.power_mw });
            }
            if !p.value.is_finite() {
                return Err(FitError::NonFiniteValue { index });
            }
        }
        Ok(Self {
            label: label.into(),
            points,
        })
    }

    /// Count data with Poisson errors (sigma 1 for empty bins).
    pub fn from_counts(label: impl Into<String>, powers: &[f64], counts: &[f64]) -> Result<Self> {
        let points = powers
            .iter()
            .zip(counts)
            .map(|(&p, &c)| DataPoint {
                power_mw: p,
                value: c,
                sigma: if c > 0.0 { c.sqrt() } else { 1.0 },
            })
            .collect();
        Self::new(label, points)
    }

    /// Read `(power, value, sigma)` from a CSV with a header row. Lines
    /// starting with `#` are skipped. Without a sigma column every sigma is 1.
    pub fn read_csv<R: Read>(
        reader: R,
        power_column: &str,
        value_column: &str,
        sigma_column: Option<&str>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| FitError::MissingColumn(name.to_string()))
        };
        let ip = find(power_column)?;
        let iv = find(value_column)?;
        let is = sigma_column.map(find).transpose()?;
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse = |i: usize, column: &str| {
                let field = rec.get(i).unwrap_or("");
                field.parse::<f64>().map_err(|_| FitError::BadNumber {
                    line,
                    column: column.to_string(),
                    field: field.to_string(),
                })
            };
            points.push(DataPoint {
                power_mw: parse(ip, power_column)?,
                value: parse(iv, value_column)?,
                sigma: match (is, sigma_column) {
                    (Some(i), Some(name)) => parse(i, name)?,
                    _ => 1.0,
                },
            });
        }
        Self::new(value_column, points)
    }

    pub fn powers(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.power_mw).collect()
    }

    fn median_power(&self) -> f64 {
        let mut p = self.powers();
        p.sort_by(f64::total_cmp);
        let n = p.len();
        if n % 2 == 1 {
            p[n / 2]
        } else {
            0.5 * (p[n / 2 - 1] + p[n / 2])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficient {
    pub exponent: i32,
    pub value: f64,
    pub stderr: f64,
}

impl Coefficient {
    /// `value / stderr`.
    pub fn significance(&self) -> f64 {
        self.value / self.stderr
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub basis: Vec<i32>,
    pub coefficients: Vec<Coefficient>,
    pub chi2: f64,
    pub degrees_of_freedom: usize,
    pub aic: f64,
    /// Condition number of the (rescaled) normal matrix.
    pub condition: f64,
}

impl FitResult {
    pub fn eval(&self, power_mw: f64) -> f64 {
        self.coefficients.iter().map(|c| c.value * power_mw.powi(c.exponent)).sum()
    }

    pub fn coefficient(&self, exponent: i32) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.exponent == exponent)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let basis: Vec<String> = self.basis.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(s, "basis = {}", basis.join(","));
        for c in &self.coefficients {
            let _ = writeln!(s, "coef_p{} = {}", c.exponent, c.value);
            let _ = writeln!(s, "stderr_p{} = {}", c.exponent, c.stderr);
        }
        let _ = writeln!(s, "chi2 = {}", self.chi2);
        let _ = writeln!(s, "dof = {}", self.degrees_of_freedom);
        let _ = writeln!(s, "aic = {}", self.aic);
        let _ = writeln!(s, "condition = {}", self.condition);
        s
    }
}

/// Weighted least squares of the series onto the columns `P^e`, `e` in `basis`.
pub fn fit_poly(series: &DataSeries, basis: &[i32]) -> Result<FitResult> {
    if basis.is_empty() {
        return Err(FitError::EmptyBasis);
    }
    for (i, e) in basis.iter().enumerate() {
        if basis[..i].contains(e) {
            return Err(FitError::DuplicateExponent(*e));
        }
    }
    let n = series.points.len();
    let k = basis.len();
    if n < k + 1 {
        return Err(FitError::TooFewPoints { needed: k + 1, got: n });
    }
    let scale = series.median_power();
    let a = DMatrix::from_fn(n, k, |i, j| {
        let p = &series.points[i];
        (p.power_mw / scale).powi(basis[j]) / p.sigma
    });
    let y = DVector::from_fn(n, |i, _| series.points[i].value / series.points[i].sigma);

    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    // NaN singular values fail this too
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(FitError::IllConditioned(condition));
    }

    let qr = a.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(FitError::IllConditioned(f64::INFINITY))?;
    let r_inv = r.try_inverse().ok_or(FitError::IllConditioned(f64::INFINITY))?;
    let cov = &r_inv * r_inv.transpose();

    let resid = &y - &a * &beta;
    let chi2 = resid.norm_squared();
    let coefficients = basis
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let unscale = scale.powi(e);
            Coefficient {
                exponent: e,
                value: beta[j] / unscale,
                stderr: cov[(j, j)].sqrt() / unscale,
            }
        })
        .collect();
    Ok(FitResult {
        basis: basis.to_vec(),
        coefficients,
        chi2,
        degrees_of_freedom: n - k,
        aic: chi2 + 2.0 * k as f64,
        condition,
    })
}

/// Fit every candidate and keep the lowest AIC; on a tie the smaller basis wins.
pub fn select_model(series: &DataSeries, candidates: &[Vec<i32>]) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    for basis in candidates {
        let fit = fit_poly(series, basis)?;
        let better = match &best {
            None => true,
            Some(b) => fit.aic < b.aic || (fit.aic == b.aic && fit.basis.len() < b.basis.len()),
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or(FitError::NoCandidates)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentFit {
    pub exponent: f64,
    pub stderr: f64,
    /// `ln` of the prefactor.
    pub intercept: f64,
}

/// Ordinary least squares of `ln(value)` on `ln(power)`.
pub fn fit_exponent(series: &DataSeries) -> Result<ExponentFit> {
    let n = series.points.len();
    if n < 3 {
        return Err(FitError::TooFewPoints { needed: 3, got: n });
    }
    for (index, p) in series.points.iter().enumerate() {
        if p.value <= 0.0 {
            return Err(FitError::NonPositiveValue { index, value: p.value });
        }
    }
    let x: Vec<f64> = series.points.iter().map(|p| p.power_mw.ln()).collect();
    let y: Vec<f64> = series.points.iter().map(|p| p.value.ln()).collect();
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::IllConditioned(f64::INFINITY));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok(ExponentFit {
        exponent: slope,
        stderr: (ssr / (nf - 2.0) / sxx).sqrt(),
        intercept,
    })
}

/// Parse a list of bases such as `"1;1,2;2,3"`.
pub fn parse_bases(text: &str) -> std::result::Result<Vec<Vec<i32>>, String> {
    text.split(';')
        .map(|b| {
            b.split(',')
                .map(|e| e.trim().parse::<i32>().map_err(|_| format!("bad exponent {e:?} in basis {b:?}")))
                .collect()
        })
        .collect()
}

//! Trajectory analytics: increment spectra, autocorrelation with confidence
//! bands, and winding numbers about a center.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::sde::Trajectory;

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Points closer than this to the center carry no angle.
pub const CENTER_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least {needed} samples after burn-in, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("zero variance: autocorrelation undefined")]
    ZeroVariance,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Mean and spread over coordinates of the increment magnitude spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Cycles per step, `k/n` for `k = 0..=n/2`.
    pub freqs: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub amplitude_std: Vec<f64>,
}

impl SpectrumReport {
    pub fn median_amplitude(&self) -> f64 {
        median(&self.amplitude)
    }

    /// Mean amplitude over bins with `0 < f < cutoff`.
    pub fn band_mean(&self, cutoff: f64) -> f64 {
        let (s, c) = self
            .freqs
            .iter()
            .zip(&self.amplitude)
            .filter(|(f, _)| **f > 0.0 && **f < cutoff)
            .fold((0.0, 0usize), |(s, c), (_, a)| (s + a, c + 1));
        if c == 0 { f64::NAN } else { s / c as f64 }
    }

    /// Frequency of the largest amplitude, excluding the zero bin.
    pub fn peak_frequency(&self) -> f64 {
        let mut best = (0.0, f64::NEG_INFINITY);
        for (f, a) in self.freqs.iter().zip(&self.amplitude).skip(1) {
            if *a > best.1 {
                best = (*f, *a);
            }
        }
        best.0
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `|X_k| / √n` for `k = 0..=n/2`.
pub fn magnitude_spectrum(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let norm = (n as f64).sqrt();
    buf[..=n / 2].iter().map(|z| z.norm() / norm).collect()
}

/// Spectrum of first differences of every coordinate, aggregated as mean
/// and population standard deviation over coordinates.
pub fn increment_spectrum(coords: &[Vec<f64>]) -> Result<SpectrumReport, DiagnosticsError> {
    let first = coords.first().ok_or(DiagnosticsError::InsufficientSamples { needed: 65, got: 0 })?;
    let len = first.len();
    if coords.iter().any(|c| c.len() != len) {
        return Err(DiagnosticsError::InvalidArgument("coordinate series differ in length".into()));
    }
    if len < 65 {
        return Err(DiagnosticsError::InsufficientSamples { needed: 65, got: len });
    }
    let n = len - 1;
    let spectra: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| magnitude_spectrum(&c.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()))
        .collect();
    let bins = n / 2 + 1;
    let m = spectra.len() as f64;
    let mut amplitude = vec![0.0; bins];
    let mut amplitude_std = vec![0.0; bins];
    for k in 0..bins {
        let mean = spectra.iter().map(|s| s[k]).sum::<f64>() / m;
        let var = spectra.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / m;
        amplitude[k] = mean;
        amplitude_std[k] = var.sqrt();
    }
    let freqs = (0..bins).map(|k| k as f64 / n as f64).collect();
    Ok(SpectrumReport { freqs, amplitude, amplitude_std })
}

fn post_burnin_coords(traj: &Trajectory, burnin: usize) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    if burnin >= traj.len() {
        return Err(DiagnosticsError::InsufficientSamples { needed: burnin + 1, got: traj.len() });
    }
    Ok((0..traj.dim()).map(|i| traj.coordinate(i, burnin)).collect())
}

/// [`increment_spectrum`] of the snapshots after `burnin`.
pub fn increment_fft(traj: &Trajectory, burnin: usize) -> Result<SpectrumReport, DiagnosticsError> {
    increment_spectrum(&post_burnin_coords(traj, burnin)?)
}

/// Mean autocorrelation over coordinates with the white-noise band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrReport {
    pub lags: Vec<usize>,
    pub ac: Vec<f64>,
    /// Half-width `z₀.₉₉ / √n`.
    pub band: f64,
    /// Coordinates skipped for having zero variance.
    pub skipped: usize,
}

impl AutocorrReport {
    /// Fraction of lags in `1..=max_lag` with `|ac| ≤ band`.
    pub fn fraction_inside_band(&self) -> f64 {
        let inside = self.lags.iter().zip(&self.ac).filter(|(l, a)| **l > 0 && a.abs() <= self.band).count();
        inside as f64 / (self.lags.len() - 1).max(1) as f64
    }
}

/// Biased estimator `ĉ(τ) = (1/n) Σ (x_t − x̄)(x_{t+τ} − x̄) / ĉ(0)`, or `None`
/// for a constant series.
pub fn autocorrelation_series(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>();
    if c0 <= 0.0 || !c0.is_finite() {
        return None;
    }
    Some((0..=max_lag).map(|tau| c[..n - tau].iter().zip(&c[tau..]).map(|(a, b)| a * b).sum::<f64>() / c0).collect())
}

/// The same estimator by Wiener–Khinchin: inverse transform of the
/// zero-padded power spectrum.
pub fn autocorrelation_series_fft(x: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 || !c0.is_finite() {
        return None;
    }
    Some(buf[..=max_lag].iter().map(|z| z.re / c0).collect())
}

/// Mean autocorrelation of several equally long series.
pub fn autocorrelation_of(coords: &[Vec<f64>], max_lag: usize) -> Result<AutocorrReport, DiagnosticsError> {
    let n = coords.first().map_or(0, Vec::len);
    if n < 4 || max_lag >= n / 2 {
        return Err(DiagnosticsError::InsufficientSamples { needed: 2 * max_lag + 2, got: n });
    }
    let mut sum = vec![0.0; max_lag + 1];
    let mut used = 0usize;
    for c in coords {
        if c.len() != n {
            return Err(DiagnosticsError::InvalidArgument("coordinate series differ in length".into()));
        }
        if let Some(ac) = autocorrelation_series(c, max_lag) {
            for (s, a) in sum.iter_mut().zip(&ac) {
                *s += a;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(DiagnosticsError::ZeroVariance);
    }
    Ok(AutocorrReport {
        lags: (0..=max_lag).collect(),
        ac: sum.iter().map(|s| s / used as f64).collect(),
        band: Z99 / (n as f64).sqrt(),
        skipped: coords.len() - used,
    })
}

/// [`autocorrelation_of`] the snapshots after `burnin`.
pub fn autocorrelation(traj: &Trajectory, burnin: usize, max_lag: usize) -> Result<AutocorrReport, DiagnosticsError> {
    autocorrelation_of(&post_burnin_coords(traj, burnin)?, max_lag)
}

/// Rotation of a planar path about a center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Net signed turns, counter-clockwise positive.
    pub winding_number: f64,
    /// Radians per snapshot step.
    pub angular_drift_rate: f64,
    /// Cycles per step of the angle-increment spectrum peak, when it stands
    /// above 3× the median.
    pub dominant_freq: Option<f64>,
    /// Points within `ε_c` of the center.
    pub skipped: usize,
    pub samples: usize,
}

/// Nearest-branch angle increment in `(−π, π)`; an exact half turn counts
/// as no rotation.
pub fn angle_increment(a: f64, b: f64) -> f64 {
    use std::f64::consts::PI;
    let mut d = b - a;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    if d.abs() == PI {
        0.0
    } else {
        d
    }
}

/// Winding of the points `(xs[k], ys[k])` about `center`.
pub fn winding_of(xs: &[f64], ys: &[f64], center: [f64; 2]) -> Result<CycleReport, DiagnosticsError> {
    if xs.len() != ys.len() {
        return Err(DiagnosticsError::InvalidArgument("coordinate series differ in length".into()));
    }
    let mut skipped = 0;
    let mut prev: Option<(usize, f64)> = None;
    let mut first = None;
    let mut increments = Vec::with_capacity(xs.len());
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let (dx, dy) = (x - center[0], y - center[1]);
        if dx.hypot(dy) <= CENTER_EPS {
            skipped += 1;
            continue;
        }
        let theta = dy.atan2(dx);
        if let Some((_, p)) = prev {
            increments.push(angle_increment(p, theta));
        } else {
            first = Some(k);
        }
        prev = Some((k, theta));
    }
    let total: f64 = increments.iter().sum();
    let span = match (first, prev) {
        (Some(a), Some((b, _))) if b > a => (b - a) as f64,
        _ => f64::NAN,
    };
    let dominant_freq = if increments.len() >= 64 {
        let amp = magnitude_spectrum(&increments);
        let med = median(&amp[1..]);
        let (k, peak) = amp.iter().enumerate().skip(1).fold((0, 0.0), |b, (k, &a)| if a > b.1 { (k, a) } else { b });
        (peak > 3.0 * med && k > 0).then(|| k as f64 / increments.len() as f64)
    } else {
        None
    };
    Ok(CycleReport {
        winding_number: total / (2.0 * std::f64::consts::PI),
        angular_drift_rate: total / span,
        dominant_freq,
        skipped,
        samples: xs.len(),
    })
}

/// Streaming net winding about a fixed center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingAccumulator {
    pub center: [f64; 2],
    prev: Option<f64>,
    /// Net angle in radians.
    pub total: f64,
    pub skipped: u64,
}

impl WindingAccumulator {
    pub fn new(center: [f64; 2]) -> Self {
        Self { center, prev: None, total: 0.0, skipped: 0 }
    }

    pub fn push(&mut self, p: [f64; 2]) {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        if dx.hypot(dy) <= CENTER_EPS {
            self.skipped += 1;
            return;
        }
        let theta = dy.atan2(dx);
        if let Some(prev) = self.prev {
            self.total += angle_increment(prev, theta);
        }
        self.prev = Some(theta);
    }

    pub fn turns(&self) -> f64 {
        self.total / (2.0 * std::f64::consts::PI)
    }
}

/// Winding of a 2-D trajectory after `burnin`; needs at least 1000 points.
pub fn detect_limit_cycle(traj: &Trajectory, center: [f64; 2], burnin: usize) -> Result<CycleReport, DiagnosticsError> {
    if traj.dim() != 2 {
        return Err(DiagnosticsError::DimensionMismatch { expected: 2, got: traj.dim() });
    }
    let n = traj.len().saturating_sub(burnin);
    if n < 1000 {
        return Err(DiagnosticsError::InsufficientSamples { needed: 1000, got: n });
    }
    winding_of(&traj.coordinate(0, burnin), &traj.coordinate(1, burnin), center)
}

/// Mean and standard deviation of a calibrated null statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullStats {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Angular drift rates of `runs` planar random walks with unit-variance
/// Gaussian steps started at `(1, 0)`, measured about the origin. Run `r`
/// uses stream `(seed, r)`.
pub fn brownian_null_drift(runs: usize, steps: usize, seed: u64) -> Result<NullStats, DiagnosticsError> {
    if runs < 2 || steps < 2 {
        return Err(DiagnosticsError::InvalidArgument("need at least 2 runs of 2 steps".into()));
    }
    let mut rates = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut g = rng::stream(seed, r as u64);
        let (mut x, mut y) = (1.0, 0.0);
        let mut xs = Vec::with_capacity(steps);
        let mut ys = Vec::with_capacity(steps);
        for _ in 0..steps {
            xs.push(x);
            ys.push(y);
            let dx: f64 = StandardNormal.sample(&mut g);
            let dy: f64 = StandardNormal.sample(&mut g);
            x += dx;
            y += dy;
        }
        rates.push(winding_of(&xs, &ys, [0.0, 0.0])?.angular_drift_rate);
    }
    let mean = rates.iter().sum::<f64>() / runs as f64;
    let var = rates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    Ok(NullStats { mean, std: var.sqrt(), runs })
}

/// `freq,amp,amp_std` rows.
pub fn write_spectrum_report_csv<W: Write>(mut w: W, rep: &SpectrumReport) -> std::io::Result<()> {
    writeln!(w, "freq,amp,amp_std")?;
    for ((f, a), s) in rep.freqs.iter().zip(&rep.amplitude).zip(&rep.amplitude_std) {
        writeln!(w, "{f},{a:e},{s:e}")?;
    }
    Ok(())
}

/// `lag,ac,band` rows.
pub fn write_autocorr_csv<W: Write>(mut w: W, rep: &AutocorrReport) -> std::io::Result<()> {
    writeln!(w, "lag,ac,band")?;
    for (l, a) in rep.lags.iter().zip(&rep.ac) {
        writeln!(w, "{l},{a:e},{}", rep.band)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn white(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..d)
            .map(|i| {
                let mut r = rng::stream(seed, i as u64);
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        let v = x;
                        x += { let z: f64 = StandardNormal.sample(&mut r); z };
                        v
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn white_increments_have_flat_spectrum() {
        let rep = increment_spectrum(&white(64, 4097, 1)).unwrap();
        let med = rep.median_amplitude();
        assert!(rep.amplitude.iter().all(|&a| a <= 3.0 * med));
        assert_eq!(rep.freqs.len(), 2049);
        assert_eq!(*rep.freqs.last().unwrap(), 0.5);
    }

    #[test]
    fn sinusoid_peak() {
        let x: Vec<f64> = (0..1001).map(|k| (2.0 * std::f64::consts::PI * k as f64 / 100.0).sin()).collect();
        let rep = increment_spectrum(&[x]).unwrap();
        assert!((rep.peak_frequency() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(increment_spectrum(&[vec![0.0; 40]]), Err(DiagnosticsError::InsufficientSamples { .. })));
    }

    #[test]
    fn iid_noise_inside_band() {
        let coords: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut r = rng::stream(3, i);
                (0..5000).map(|_| StandardNormal.sample(&mut r)).collect()
            })
            .collect();
        // Per-coordinate check, not the averaged one.
        for c in &coords {
            let rep = autocorrelation_of(std::slice::from_ref(c), 100).unwrap();
            assert_eq!(rep.ac[0], 1.0);
            assert!(rep.fraction_inside_band() >= 0.95);
        }
    }

    #[test]
    fn ar1_autocorrelation() {
        let mut r = rng::seeded(8);
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                x = 0.9 * x + { let z: f64 = StandardNormal.sample(&mut r); z };
                x
            })
            .collect();
        let ac = autocorrelation_series(&series, 20).unwrap();
        for (tau, a) in ac.iter().enumerate() {
            assert!((a - 0.9f64.powi(tau as i32)).abs() < 0.05, "lag {tau}: {a}");
        }
    }

    #[test]
    fn constant_series_has_zero_variance() {
        assert!(matches!(autocorrelation_of(&[vec![2.0; 100]], 10), Err(DiagnosticsError::ZeroVariance)));
        let rep = autocorrelation_of(&[vec![2.0; 100], (0..100).map(|k| (k % 7) as f64).collect()], 10).unwrap();
        assert_eq!(rep.skipped, 1);
    }

    #[test]
    fn wiener_khinchin_matches_direct() {
        let mut r = rng::seeded(1);
        for _ in 0..10 {
            let n = r.random_range(100..600);
            let s: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let a = autocorrelation_series(&s, 40).unwrap();
            let b = autocorrelation_series_fft(&s, 40).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn circle_winding() {
        let n = 1000;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..=n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 100.0;
                (t.cos(), t.sin())
            })
            .unzip();
        let rep = winding_of(&xs, &ys, [0.0, 0.0]).unwrap();
        assert!((rep.winding_number - 10.0).abs() < 0.1);
        assert!((rep.angular_drift_rate - 2.0 * std::f64::consts::PI / 100.0).abs() < 1e-9);
        let rev: Vec<f64> = ys.iter().map(|y| -y).collect();
        assert!((winding_of(&xs, &rev, [0.0, 0.0]).unwrap().winding_number + 10.0).abs() < 0.1);
    }

    #[test]
    fn half_turn_ties_break_to_zero() {
        assert_eq!(angle_increment(0.0, std::f64::consts::PI), 0.0);
        let rep = winding_of(&[1.0, -1.0, 1.0], &[0.0, 0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(rep.winding_number, 0.0);
    }

    #[test]
    fn accumulator_matches_batch() {
        let pts: Vec<[f64; 2]> = (0..500).map(|k| {
            let t = 0.037 * k as f64;
            [t.cos() * (1.0 + 0.3 * (5.0 * t).sin()), t.sin()]
        }).collect();
        let mut acc = WindingAccumulator::new([0.0, 0.0]);
        pts.iter().for_each(|&p| acc.push(p));
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
        assert!((acc.turns() - winding_of(&xs, &ys, [0.0, 0.0]).unwrap().winding_number).abs() < 1e-12);
    }

    #[test]
    fn center_points_are_skipped() {
        let rep = winding_of(&[1.0, 0.0, -1.0, 0.0], &[0.0, 0.0, 1e-3, 1.0], [0.0, 0.0]).unwrap();
        assert_eq!(rep.skipped, 1);
    }

    #[test]
    fn brownian_null_is_centered() {
        let null = brownian_null_drift(100, 2000, 4).unwrap();
        assert!(null.std > 0.0);
        assert!(null.mean.abs() <= 3.0 * null.std / 10.0);
    }

    #[test]
    fn report_csvs() {
        let rep = AutocorrReport { lags: vec![0, 1], ac: vec![1.0, 0.5], band: 0.25, skipped: 0 };
        let mut buf = Vec::new();
        write_autocorr_csv(&mut buf, &rep).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lag,ac,band\n0,1e0,0.25\n1,5e-1,0.25\n");
    }
}

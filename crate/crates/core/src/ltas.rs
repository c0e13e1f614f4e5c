//! Long-term average spectra, difference curves and cutoff estimation.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::stft::WindowKind;

pub const WELCH_FFT: usize = 4096;
pub const WELCH_HOP: usize = WELCH_FFT / 2;
pub const DEFAULT_SMOOTHING_OCTAVES: f64 = 1.0 / 3.0;
/// Reference band whose mean level is set to 0 dB in difference curves.
pub const REFERENCE_BAND_HZ: (f64, f64) = (500.0, 2000.0);
/// Cutoff search starts above this frequency.
pub const CUTOFF_SEARCH_FLOOR_HZ: f64 = 2000.0;
pub const CUTOFF_LEVEL_DB: f64 = -3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LtasCurve {
    pub frequencies: Vec<f64>,
    pub levels_db: Vec<f64>,
    pub smoothing_fraction: f64,
}

impl LtasCurve {
    pub fn new(frequencies: Vec<f64>, levels_db: Vec<f64>, smoothing_fraction: f64) -> Result<Self> {
        if frequencies.len() != levels_db.len() || frequencies.is_empty() {
            return Err(Error::arg("frequency and level vectors must be non-empty and equally long"));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("frequencies must be strictly increasing"));
        }
        if levels_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("curve has non-finite levels".into()));
        }
        Ok(Self {
            frequencies,
            levels_db,
            smoothing_fraction,
        })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Linear interpolation of the level at `hz`, clamped to the grid ends.
    pub fn level_at(&self, hz: f64) -> f64 {
        let f = &self.frequencies;
        let i = f.partition_point(|&x| x < hz);
        if i == 0 {
            return self.levels_db[0];
        }
        if i == f.len() {
            return self.levels_db[f.len() - 1];
        }
        let t = (hz - f[i - 1]) / (f[i] - f[i - 1]);
        self.levels_db[i - 1] + t * (self.levels_db[i] - self.levels_db[i - 1])
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.frequencies == other.frequencies
    }
}

/// Welch power spectrum, DC excluded: `(frequencies, power)`.
pub fn welch_psd(x: &AudioBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() < WELCH_FFT {
        return Err(Error::arg(format!(
            "need at least {WELCH_FFT} samples for the long-term spectrum, got {}",
            x.len()
        )));
    }
    let window = WindowKind::Hann.build(WELCH_FFT);
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(WELCH_FFT);
    let bins = WELCH_FFT / 2 + 1;
    let mut acc = vec![0.0; bins];
    let segments = 1 + (x.len() - WELCH_FFT) / WELCH_HOP;
    let mut buf = vec![Complex64::new(0.0, 0.0); WELCH_FFT];
    for s in 0..segments {
        let seg = &x.samples()[s * WELCH_HOP..s * WELCH_HOP + WELCH_FFT];
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(v * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let fs = x.sample_rate() as f64;
    let scale = 2.0 / (fs * wpow * segments as f64);
    let freqs = (1..bins).map(|k| k as f64 * fs / WELCH_FFT as f64).collect();
    let power = acc[1..].iter().map(|p| p * scale).collect();
    Ok((freqs, power))
}

/// Gaussian smoothing over log-frequency of a linearly spaced power
/// spectrum; each bin is weighted by the log-frequency width it covers.
pub fn smooth_log_frequency(freqs: &[f64], power: &[f64], sigma_octaves: f64) -> Vec<f64> {
    if sigma_octaves <= 0.0 {
        return power.to_vec();
    }
    let logf: Vec<f64> = freqs.iter().map(|f| f.log2()).collect();
    let reach = 4.0 * sigma_octaves;
    logf.iter()
        .map(|&c| {
            let lo = logf.partition_point(|&v| v < c - reach);
            let hi = logf.partition_point(|&v| v <= c + reach);
            let (mut num, mut den) = (0.0, 0.0);
            for j in lo..hi {
                let z = (logf[j] - c) / sigma_octaves;
                let w = (-0.5 * z * z).exp() / freqs[j];
                num += w * power[j];
                den += w;
            }
            num / den
        })
        .collect()
}

fn power_db(p: f64) -> f64 {
    10.0 * p.max(1e-30).log10()
}

pub fn compute_ltas(x: &AudioBuffer, smoothing_fraction: f64) -> Result<LtasCurve> {
    if !(smoothing_fraction >= 0.0 && smoothing_fraction.is_finite()) {
        return Err(Error::arg("smoothing fraction must be finite and non-negative"));
    }
    let (freqs, power) = welch_psd(x)?;
    let smoothed = smooth_log_frequency(&freqs, &power, smoothing_fraction);
    LtasCurve::new(freqs, smoothed.into_iter().map(power_db).collect(), smoothing_fraction)
}

/// `old - modern`, shifted so the mean over [`REFERENCE_BAND_HZ`] is 0 dB.
pub fn difference_curve(old: &LtasCurve, modern: &LtasCurve) -> Result<LtasCurve> {
    if !old.same_grid(modern) {
        return Err(Error::arg("curves are on different frequency grids"));
    }
    let diff: Vec<f64> = old.levels_db.iter().zip(&modern.levels_db).map(|(a, b)| a - b).collect();
    let curve = LtasCurve::new(old.frequencies.clone(), diff, old.smoothing_fraction)?;
    rescale(&curve)
}

/// Shifts a curve so its mean over [`REFERENCE_BAND_HZ`] is 0 dB.
pub fn rescale(curve: &LtasCurve) -> Result<LtasCurve> {
    let (lo, hi) = REFERENCE_BAND_HZ;
    let band: Vec<f64> = curve
        .frequencies
        .iter()
        .zip(&curve.levels_db)
        .filter(|(f, _)| (lo..=hi).contains(*f))
        .map(|(_, l)| *l)
        .collect();
    if band.is_empty() {
        return Err(Error::arg("grid has no points in the reference band"));
    }
    let offset = band.iter().sum::<f64>() / band.len() as f64;
    let mut out = curve.clone();
    out.levels_db.iter_mut().for_each(|v| *v -= offset);
    Ok(out)
}

/// Lowest frequency above [`CUTOFF_SEARCH_FLOOR_HZ`] where the curve falls
/// through [`CUTOFF_LEVEL_DB`], linearly interpolated.
pub fn estimate_cutoff(curve: &LtasCurve) -> Result<f64> {
    let f = &curve.frequencies;
    let l = &curve.levels_db;
    for i in 0..f.len() {
        if f[i] <= CUTOFF_SEARCH_FLOOR_HZ {
            continue;
        }
        if l[i] == CUTOFF_LEVEL_DB {
            return Ok(f[i]);
        }
        if i > 0 && l[i - 1] > CUTOFF_LEVEL_DB && l[i] < CUTOFF_LEVEL_DB {
            let t = (l[i - 1] - CUTOFF_LEVEL_DB) / (l[i - 1] - l[i]);
            return Ok(f[i - 1] + t * (f[i] - f[i - 1]));
        }
    }
    Err(Error::NotFound(format!(
        "curve never crosses {CUTOFF_LEVEL_DB} dB above {CUTOFF_SEARCH_FLOOR_HZ} Hz"
    )))
}

/// Pointwise arithmetic mean of curves on a shared grid.
pub fn average_curves(curves: &[LtasCurve]) -> Result<LtasCurve> {
    let first = curves.first().ok_or_else(|| Error::arg("no curves to average"))?;
    if curves.iter().any(|c| !c.same_grid(first)) {
        return Err(Error::arg("curves are on different frequency grids"));
    }
    let n = curves.len() as f64;
    let levels = (0..first.len())
        .map(|i| curves.iter().map(|c| c.levels_db[i]).sum::<f64>() / n)
        .collect();
    LtasCurve::new(first.frequencies.clone(), levels, first.smoothing_fraction)
}

/// Every old-versus-modern difference curve, old-major order.
pub fn all_difference_curves(old: &[LtasCurve], modern: &[LtasCurve]) -> Result<Vec<LtasCurve>> {
    let mut out = Vec::with_capacity(old.len() * modern.len());
    for o in old {
        for m in modern {
            out.push(difference_curve(o, m)?);
        }
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(out: W, curve: &LtasCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["frequency_hz", "level_db"]).map_err(err)?;
    for (f, l) in curve.frequencies.iter().zip(&curve.levels_db) {
        w.write_record([f.to_string(), l.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Io { path: None, source: e })
}

pub fn read_curve_csv<R: Read>(input: R, smoothing_fraction: f64) -> Result<LtasCurve> {
    let mut r = csv::Reader::from_reader(input);
    let (mut f, mut l) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data(format!("bad curve row {:?}", rec)))
        };
        f.push(parse(0)?);
        l.push(parse(1)?);
    }
    LtasCurve::new(f, l, smoothing_fraction)
}

pub fn save_curve(path: impl AsRef<Path>, curve: &LtasCurve) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve_csv(file, curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn white(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.1).unwrap();
        AudioBuffer::new((0..len).map(|_| n.sample(&mut rng)).collect(), 22050).unwrap()
    }

    #[test]
    fn short_input_rejected() {
        assert!(matches!(compute_ltas(&white(4095, 1), 0.3), Err(Error::Argument(_))));
    }

    #[test]
    fn white_noise_is_flat() {
        let c = compute_ltas(&white(22050 * 60, 2), DEFAULT_SMOOTHING_OCTAVES).unwrap();
        let above: Vec<f64> = c
            .frequencies
            .iter()
            .zip(&c.levels_db)
            .filter(|(f, _)| **f > 100.0 && **f < 10_000.0)
            .map(|(_, l)| *l)
            .collect();
        let mean = above.iter().sum::<f64>() / above.len() as f64;
        assert!(above.iter().all(|l| (l - mean).abs() < 1.0));
    }

    #[test]
    fn doubling_amplitude_adds_six_db() {
        let x = white(22050 * 5, 3);
        let a = compute_ltas(&x, DEFAULT_SMOOTHING_OCTAVES).unwrap();
        let b = compute_ltas(&x.scaled(2.0), DEFAULT_SMOOTHING_OCTAVES).unwrap();
        for (u, v) in a.levels_db.iter().zip(&b.levels_db) {
            assert!((v - u - 20.0 * 2f64.log10()).abs() < 0.01);
        }
    }

    #[test]
    fn tone_peak_at_nearest_grid_point() {
        let x = AudioBuffer::new((0..22050 * 3).map(|i| (2.0 * PI * 1000.0 * i as f64 / 22050.0).sin()).collect(), 22050).unwrap();
        let c = compute_ltas(&x, DEFAULT_SMOOTHING_OCTAVES).unwrap();
        let imax = (0..c.len()).max_by(|&i, &j| c.levels_db[i].total_cmp(&c.levels_db[j])).unwrap();
        let nearest = (0..c.len())
            .min_by(|&i, &j| (c.frequencies[i] - 1000.0).abs().total_cmp(&(c.frequencies[j] - 1000.0).abs()))
            .unwrap();
        assert_eq!(imax, nearest);
    }

    #[test]
    fn difference_removes_offset() {
        let c = compute_ltas(&white(22050 * 2, 4), 0.2).unwrap();
        let z = difference_curve(&c, &c).unwrap();
        assert!(z.levels_db.iter().all(|v| *v == 0.0));
        let mut shifted = c.clone();
        shifted.levels_db.iter_mut().for_each(|v| *v += 5.0);
        let z = difference_curve(&shifted, &c).unwrap();
        assert!(z.levels_db.iter().all(|v| v.abs() < 1e-12));
        let other = LtasCurve::new(vec![1.0, 2.0], vec![0.0, 0.0], 0.2).unwrap();
        assert!(difference_curve(&c, &other).is_err());
    }

    #[test]
    fn cutoff_on_grid_point_and_not_found() {
        let f: Vec<f64> = (1..=10).map(|i| i as f64 * 1000.0).collect();
        let ramp: Vec<f64> = f.iter().map(|x| -(x - 1000.0) / 1000.0).collect();
        let c = LtasCurve::new(f.clone(), ramp, 0.0).unwrap();
        assert_eq!(estimate_cutoff(&c).unwrap(), 4000.0);
        let flat = LtasCurve::new(f, vec![0.0; 10], 0.0).unwrap();
        assert!(matches!(estimate_cutoff(&flat), Err(Error::NotFound(_))));
    }

    #[test]
    fn cutoff_interpolates_between_points() {
        let c = LtasCurve::new(vec![2500.0, 3000.0, 3500.0], vec![-1.0, -2.0, -6.0], 0.0).unwrap();
        assert!((estimate_cutoff(&c).unwrap() - 3125.0).abs() < 1e-9);
    }

    #[test]
    fn csv_roundtrip() {
        let c = LtasCurve::new(vec![10.0, 20.5], vec![-1.25, 3.0], 0.1).unwrap();
        let mut out = Vec::new();
        write_curve_csv(&mut out, &c).unwrap();
        assert!(String::from_utf8(out.clone()).unwrap().starts_with("frequency_hz,level_db\n"));
        assert_eq!(read_curve_csv(&out[..], 0.1).unwrap(), c);
    }
}

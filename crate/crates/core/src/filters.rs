//! Lowpass filter design: windowed-sinc FIR with a Kaiser window (training
//! degradations) and Butterworth IIR as cascaded second-order sections (test
//! degradations).

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FIR_ORDER: usize = 25;
pub const DEFAULT_KAISER_BETA: f64 = 1.0;
pub const DEFAULT_BUTTERWORTH_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterFamily {
    FirKaiser,
    IirButterworth,
}

/// Parametric description of a lowpass filter, realized on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub family: FilterFamily,
    pub order: usize,
    pub cutoff_hz: f64,
    /// Only meaningful for [`FilterFamily::FirKaiser`].
    pub kaiser_beta: f64,
    pub sample_rate: u32,
}

impl FilterSpec {
    pub fn fir_kaiser(cutoff_hz: f64, sample_rate: u32) -> Self {
        Self {
            family: FilterFamily::FirKaiser,
            order: DEFAULT_FIR_ORDER,
            cutoff_hz,
            kaiser_beta: DEFAULT_KAISER_BETA,
            sample_rate,
        }
    }

    pub fn butterworth(cutoff_hz: f64, sample_rate: u32) -> Self {
        Self {
            family: FilterFamily::IirButterworth,
            order: DEFAULT_BUTTERWORTH_ORDER,
            cutoff_hz,
            kaiser_beta: 0.0,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::arg(format!(
                "cutoff {} Hz outside (0, {nyquist}) Hz",
                self.cutoff_hz
            )));
        }
        if self.order < 1 {
            return Err(Error::arg("filter order must be at least 1"));
        }
        if self.family == FilterFamily::FirKaiser && !(self.kaiser_beta >= 0.0) {
            return Err(Error::arg("kaiser beta must be non-negative"));
        }
        Ok(())
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Kaiser's empirical beta for a target stopband attenuation in dB.
pub fn kaiser_beta_for_attenuation(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

/// Symmetric Kaiser window of `len` points.
pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    let norm = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect()
}

/// Windowed-sinc lowpass taps (`order + 1` of them), normalized to unit DC gain.
pub fn design_fir_lowpass(spec: &FilterSpec) -> Result<Vec<f64>> {
    if spec.family != FilterFamily::FirKaiser {
        return Err(Error::arg("design_fir_lowpass needs a fir-kaiser spec"));
    }
    spec.validate()?;
    let len = spec.order + 1;
    let center = spec.order as f64 / 2.0;
    let fc = spec.cutoff_hz / spec.sample_rate as f64;
    let window = kaiser_window(len, spec.kaiser_beta);
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - center;
            2.0 * fc * crate::audio::sinc(2.0 * fc * t) * window[n]
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// DTFT of real taps at `freq_hz`.
pub fn fir_response(taps: &[f64], freq_hz: f64, sample_rate: u32) -> Complex64 {
    let w = 2.0 * PI * freq_hz / sample_rate as f64;
    taps.iter()
        .enumerate()
        .map(|(n, &h)| Complex64::from_polar(h, -w * n as f64))
        .sum()
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, freq_hz: f64, sample_rate: u32) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate as f64;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCascade {
    pub sections: Vec<Biquad>,
    pub sample_rate: u32,
}

impl SosCascade {
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq_hz, self.sample_rate))
            .product()
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    /// Causal filtering, transposed direct form II per section.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * out + z2;
                z2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }
}

/// Butterworth lowpass by bilinear transform with cutoff prewarping.
pub fn design_butterworth_lowpass(spec: &FilterSpec) -> Result<SosCascade> {
    if spec.family != FilterFamily::IirButterworth {
        return Err(Error::arg("design_butterworth_lowpass needs an iir-butterworth spec"));
    }
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let k = 2.0 * fs;
    let wc = k * (PI * spec.cutoff_hz / fs).tan();
    let n = spec.order;
    let mut sections = Vec::with_capacity(n.div_ceil(2));

    if n % 2 == 1 {
        let a0 = k + wc;
        sections.push(Biquad {
            b: [wc / a0, wc / a0, 0.0],
            a: [1.0, (wc - k) / a0, 0.0],
        });
    }
    // one section per conjugate pole pair in the left half plane
    for i in 0..n / 2 {
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let re = wc * theta.cos();
        let mag2 = wc * wc;
        let a0 = k * k - 2.0 * re * k + mag2;
        let g = wc * wc / a0;
        sections.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [1.0, (2.0 * mag2 - 2.0 * k * k) / a0, (k * k + 2.0 * re * k + mag2) / a0],
        });
    }
    Ok(SosCascade {
        sections,
        sample_rate: spec.sample_rate,
    })
}

/// Applies linear-phase taps with their group delay `(len - 1) / 2` removed,
/// so the output is time-aligned with the input. The (possibly fractional)
/// delay is undone in the frequency domain.
pub fn filter_fir_aligned(x: &[f64], taps: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let pad = 512.max(4 * taps.len());
    let n = x.len() + pad;
    let delay = (taps.len() as f64 - 1.0) / 2.0;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    let mut h: Vec<Complex64> = taps.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    h.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut buf);
    fwd.process(&mut h);
    for (k, (b, hk)) in buf.iter_mut().zip(&h).enumerate() {
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let shift = Complex64::from_polar(1.0, 2.0 * PI * kk * delay / n as f64);
        *b *= hk * shift;
    }
    inv.process(&mut buf);
    buf.truncate(x.len());
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Writes `(frequency_hz, magnitude_db)` rows sampled on `points` linearly
/// spaced frequencies from 0 to Nyquist.
pub fn write_response_csv(
    path: impl AsRef<Path>,
    points: usize,
    sample_rate: u32,
    response: impl Fn(f64) -> Complex64,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frequency_hz", "magnitude_db"])?;
    let nyquist = sample_rate as f64 / 2.0;
    for i in 0..points {
        let f = nyquist * i as f64 / (points.max(2) - 1) as f64;
        let db = 20.0 * response(f).norm().max(1e-15).log10();
        w.write_record([format!("{f}"), format!("{db}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Convenience wrapper for writing a response table to any writer.
pub fn response_table(points: usize, sample_rate: u32, response: impl Fn(f64) -> Complex64) -> Vec<(f64, f64)> {
    let nyquist = sample_rate as f64 / 2.0;
    (0..points)
        .map(|i| {
            let f = nyquist * i as f64 / (points.max(2) - 1) as f64;
            (f, 20.0 * response(f).norm().max(1e-15).log10())
        })
        .collect()
}

pub fn write_table<W: Write>(out: W, rows: &[(f64, f64)], header: [&str; 2]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: u32 = 22_050;

    #[test]
    fn fir_taps_sum_to_one_and_are_symmetric() {
        for fc in [500.0, 2000.0, 3000.0, 7000.0, 10_000.0] {
            let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(fc, FS)).unwrap();
            assert_eq!(taps.len(), 26);
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..26 {
                assert!((taps[k] - taps[25 - k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fir_is_about_minus_six_db_at_cutoff() {
        let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(3000.0, FS)).unwrap();
        let db = 20.0 * fir_response(&taps, 3000.0, FS).norm().log10();
        assert!((db + 6.0).abs() <= 1.0, "{db}");
    }

    #[test]
    fn out_of_range_cutoff_is_rejected() {
        assert!(design_fir_lowpass(&FilterSpec::fir_kaiser(0.0, FS)).is_err());
        assert!(design_fir_lowpass(&FilterSpec::fir_kaiser(11_025.0, FS)).is_err());
        assert!(design_butterworth_lowpass(&FilterSpec::butterworth(-1.0, FS)).is_err());
        assert!(design_butterworth_lowpass(&FilterSpec::fir_kaiser(3000.0, FS)).is_err());
    }

    #[test]
    fn butterworth_three_db_point_and_dc() {
        for fc in [2000.0, 3000.0, 4000.0] {
            let sos = design_butterworth_lowpass(&FilterSpec::butterworth(fc, FS)).unwrap();
            assert_eq!(sos.sections.len(), 3);
            assert!((sos.magnitude_db(fc) + 3.0103).abs() < 0.05);
            assert!(sos.magnitude_db(0.0).abs() < 1e-6);
        }
    }

    #[test]
    fn odd_order_butterworth_has_first_order_section() {
        let mut spec = FilterSpec::butterworth(1000.0, FS);
        spec.order = 3;
        let sos = design_butterworth_lowpass(&spec).unwrap();
        assert_eq!(sos.sections.len(), 2);
        assert!((sos.magnitude_db(1000.0) + 3.0103).abs() < 0.01);
    }

    #[test]
    fn sos_filter_matches_response_on_a_tone() {
        let sos = design_butterworth_lowpass(&FilterSpec::butterworth(3000.0, FS)).unwrap();
        let f = 3500.0;
        let x: Vec<f64> = (0..FS as usize)
            .map(|i| (2.0 * PI * f * i as f64 / FS as f64).sin())
            .collect();
        let y = sos.filter(&x);
        let tail = &y[5000..];
        let gain = crate::audio::rms(tail) / std::f64::consts::FRAC_1_SQRT_2;
        assert!((20.0 * gain.log10() - sos.magnitude_db(f)).abs() < 0.01);
    }

    #[test]
    fn aligned_fir_preserves_passband_tone_phase() {
        let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(3000.0, FS)).unwrap();
        let f = 900.0;
        let x: Vec<f64> = (0..4096)
            .map(|i| (2.0 * PI * f * i as f64 / FS as f64).sin())
            .collect();
        let y = filter_fir_aligned(&x, &taps);
        let a = fir_response(&taps, f, FS).norm();
        for i in 1000..3000 {
            assert!((y[i] - a * x[i]).abs() < 1e-3, "sample {i}");
        }
    }

    #[test]
    fn kaiser_beta_formula_regions() {
        assert_eq!(kaiser_beta_for_attenuation(10.0), 0.0);
        assert!((kaiser_beta_for_attenuation(60.0) - 5.6533).abs() < 1e-4);
    }
}

//! Synthetic bandwidth limitation for self-supervised training pairs, and the
//! fixed Butterworth conditions used for testing.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::filters::{design_butterworth_lowpass, design_fir_lowpass, filter_fir_aligned, FilterSpec};

/// Normal distribution of training cutoffs, clamped to a safe range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffDistribution {
    pub mean_hz: f64,
    pub std_hz: f64,
    pub clamp_low_hz: f64,
    pub clamp_high_hz: f64,
}

impl Default for CutoffDistribution {
    fn default() -> Self {
        Self {
            mean_hz: 3000.0,
            std_hz: 300.0,
            clamp_low_hz: 500.0,
            clamp_high_hz: 10_000.0,
        }
    }
}

impl CutoffDistribution {
    pub fn fixed(cutoff_hz: f64) -> Self {
        Self {
            mean_hz: cutoff_hz,
            std_hz: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let ok = self.clamp_low_hz < self.mean_hz
            && self.mean_hz < self.clamp_high_hz
            && self.clamp_high_hz <= sample_rate as f64 / 2.0
            && self.std_hz >= 0.0
            && self.clamp_low_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid cutoff distribution {self:?}")))
        }
    }
}

/// Additive white Gaussian noise at a fixed power relative to full scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub power_dbfs: f64,
    pub enabled: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            power_dbfs: -30.0,
            enabled: true,
        }
    }
}

impl NoiseSpec {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Per-sample standard deviation, `10^(dBFS / 20)`.
    pub fn std_dev(&self) -> f64 {
        10f64.powf(self.power_dbfs / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.power_dbfs <= 0.0 && self.power_dbfs.is_finite() {
            Ok(())
        } else {
            Err(Error::arg(format!("noise power {} dBFS must be <= 0", self.power_dbfs)))
        }
    }
}

/// Normal draw clamped to `[clamp_low_hz, clamp_high_hz]`.
pub fn sample_cutoff<R: Rng + ?Sized>(dist: &CutoffDistribution, rng: &mut R) -> f64 {
    let draw = if dist.std_hz > 0.0 {
        Normal::new(dist.mean_hz, dist.std_hz)
            .expect("finite positive std")
            .sample(rng)
    } else {
        dist.mean_hz
    };
    draw.clamp(dist.clamp_low_hz, dist.clamp_high_hz)
}

pub fn add_noise<R: Rng + ?Sized>(x: &AudioBuffer, spec: &NoiseSpec, rng: &mut R) -> AudioBuffer {
    if !spec.enabled {
        return x.clone();
    }
    let normal = Normal::new(0.0, spec.std_dev()).expect("finite std");
    let samples = x.samples().iter().map(|s| s + normal.sample(rng)).collect();
    AudioBuffer::new(samples, x.sample_rate()).expect("finite noise")
}

/// Gain range in dB, drawn uniformly per example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRange {
    pub low_db: f64,
    pub high_db: f64,
}

impl Default for GainRange {
    fn default() -> Self {
        Self {
            low_db: -6.0,
            high_db: 4.0,
        }
    }
}

impl GainRange {
    pub fn unity() -> Self {
        Self {
            low_db: 0.0,
            high_db: 0.0,
        }
    }

    pub fn sample_db<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.high_db > self.low_db {
            Uniform::new_inclusive(self.low_db, self.high_db)
                .expect("ordered bounds")
                .sample(rng)
        } else {
            self.low_db
        }
    }
}

/// A degraded training input with its aligned target.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedExample {
    pub input: AudioBuffer,
    pub target: AudioBuffer,
    pub cutoff_hz: f64,
    pub gain_db: f64,
}

/// Random gain, then a freshly designed Kaiser FIR at a freshly sampled
/// cutoff (group delay removed), then additive noise. The gain applies to
/// both members of the pair.
pub fn degrade_example<R: Rng + ?Sized>(
    y: &AudioBuffer,
    dist: &CutoffDistribution,
    noise: &NoiseSpec,
    gain: &GainRange,
    rng: &mut R,
) -> Result<DegradedExample> {
    dist.validate(y.sample_rate())?;
    noise.validate()?;
    let gain_db = gain.sample_db(rng);
    let target = y.scaled(10f64.powf(gain_db / 20.0));
    let cutoff_hz = sample_cutoff(dist, rng);
    let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(cutoff_hz, y.sample_rate()))?;
    let filtered = AudioBuffer::new(filter_fir_aligned(target.samples(), &taps), y.sample_rate())?;
    let input = add_noise(&filtered, noise, rng);
    Ok(DegradedExample {
        input,
        target,
        cutoff_hz,
        gain_db,
    })
}

/// Fixed sixth-order Butterworth test condition at `cutoff_hz`.
pub fn butterworth_condition(y: &AudioBuffer, cutoff_hz: f64) -> Result<AudioBuffer> {
    let sos = design_butterworth_lowpass(&FilterSpec::butterworth(cutoff_hz, y.sample_rate()))?;
    AudioBuffer::new(sos.filter(y.samples()), y.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::fir_response;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex64;

    const FS: u32 = 22_050;

    fn white(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 0.2).unwrap();
        AudioBuffer::new((0..len).map(|_| n.sample(&mut rng)).collect(), FS).unwrap()
    }

    #[test]
    fn degenerate_distribution_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = CutoffDistribution::fixed(3000.0);
        assert!((0..100).all(|_| sample_cutoff(&d, &mut rng) == 3000.0));
    }

    #[test]
    fn cutoff_clamps_to_upper_bound() {
        let d = CutoffDistribution {
            mean_hz: 12_000.0,
            std_hz: 0.0,
            clamp_low_hz: 500.0,
            clamp_high_hz: 11_000.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_cutoff(&d, &mut rng), 11_000.0);
    }

    #[test]
    fn cutoff_moments() {
        let d = CutoffDistribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..10_000).map(|_| sample_cutoff(&d, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((mean - 3000.0).abs() < 15.0, "{mean}");
        assert!((var.sqrt() - 300.0).abs() < 15.0, "{}", var.sqrt());
    }

    #[test]
    fn disabled_noise_is_identity_and_enabled_noise_has_expected_rms() {
        let x = white(1000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(add_noise(&x, &NoiseSpec::disabled(), &mut rng), x);

        let spec = NoiseSpec::default();
        assert!((spec.std_dev() - 0.0316228).abs() < 1e-7);
        let silent = AudioBuffer::silence(1_000_000, FS);
        let n = add_noise(&silent, &spec, &mut rng);
        assert!((n.rms() / 0.031_622_776_601_683_8 - 1.0).abs() < 0.01);
    }

    #[test]
    fn noiseless_unity_pipeline_is_one_aligned_filter() {
        let y = white(3000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = degrade_example(
            &y,
            &CutoffDistribution::fixed(3000.0),
            &NoiseSpec::disabled(),
            &GainRange::unity(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(ex.target, y);
        assert_eq!(ex.cutoff_hz, 3000.0);

        // oracle: naive DFT of the zero-padded input, multiplied by the taps'
        // DTFT with the 12.5-sample delay undone, naive inverse
        let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(3000.0, FS)).unwrap();
        let n = y.len() + 512.max(4 * taps.len());
        let xs = y.samples();
        let probe = [0usize, 1, 17, 1500, 2999];
        let spectrum: Vec<Complex64> = (0..n)
            .map(|k| {
                let w = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let yk: Complex64 = xs.iter().enumerate().map(|(m, &v)| Complex64::from_polar(v, w * m as f64)).sum();
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let h = fir_response(&taps, kk * FS as f64 / n as f64, FS);
                let shift = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * kk * 12.5 / n as f64);
                yk * h * shift
            })
            .collect();
        for &i in &probe {
            let v: Complex64 = spectrum
                .iter()
                .enumerate()
                .map(|(k, z)| z * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64;
            assert!((v.re - ex.input.samples()[i]).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn gain_range_extremes() {
        let g = GainRange::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws: Vec<f64> = (0..10_000).map(|_| g.sample_db(&mut rng)).collect();
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((-6.0..=-5.9).contains(&min), "{min}");
        assert!((3.9..=4.0).contains(&max), "{max}");
    }

    #[test]
    fn identical_seeds_give_identical_examples() {
        let y = white(5000, 6);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            degrade_example(
                &y,
                &CutoffDistribution::default(),
                &NoiseSpec::default(),
                &GainRange::default(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn cross_correlation_peaks_at_zero_lag() {
        let y = white(8000, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ex = degrade_example(
            &y,
            &CutoffDistribution::default(),
            &NoiseSpec::disabled(),
            &GainRange::default(),
            &mut rng,
        )
        .unwrap();
        let (x, t) = (ex.input.samples(), ex.target.samples());
        let xc = |lag: isize| -> f64 {
            (200..7800)
                .map(|n| x[(n as isize + lag) as usize] * t[n])
                .sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn passband_tone_is_transparent() {
        let fc = 3000.0;
        let f = 0.3 * fc;
        let y: Vec<f64> = (0..8192)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / FS as f64).sin())
            .collect();
        let y = AudioBuffer::new(y, FS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = degrade_example(&y, &CutoffDistribution::fixed(fc), &NoiseSpec::disabled(), &GainRange::unity(), &mut rng).unwrap();
        let inner = |s: &[f64]| crate::audio::rms(&s[1000..7000]);
        let db = 20.0 * (inner(ex.input.samples()) / inner(y.samples())).log10();
        let taps = design_fir_lowpass(&FilterSpec::fir_kaiser(fc, FS)).unwrap();
        let oracle = 20.0 * fir_response(&taps, f, FS).norm().log10();
        assert!(db.abs() <= 0.2, "{db}");
        assert!((db - oracle).abs() < 0.01);
    }
}

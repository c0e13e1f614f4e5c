//! Objective evaluation: log-spectral distance, embedding distance and the
//! Fréchet distance between embedding distributions.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{resample, AudioBuffer};
use crate::error::{Error, Result};
use crate::stft::{StftPlan, WindowKind};

pub const LSD_FFT: usize = 2048;
pub const LSD_HOP: usize = 512;
pub const LSD_FLOOR: f64 = 1e-5;

/// Tolerated imaginary residue in the eigenvalues of `Σb·Σe`.
pub const IMAG_TOLERANCE: f64 = 1e-6;

/// Embedding window length for the distribution distance.
pub const FAD_WINDOW_SECONDS: f64 = 0.96;

fn log_power_frames(plan: &StftPlan, x: &[f64]) -> Result<(Vec<f64>, usize)> {
    let (re, im) = plan.analyze(x)?;
    let frames = plan.num_frames(x.len());
    let lp = re
        .iter()
        .zip(&im)
        .map(|(r, i)| {
            let m = (r * r + i * i).sqrt().max(LSD_FLOOR);
            (m * m).log10()
        })
        .collect();
    Ok((lp, frames))
}

/// Log-spectral distance between `y` and `yhat` over all bins.
pub fn lsd(y: &AudioBuffer, yhat: &AudioBuffer) -> Result<f64> {
    lsd_band(y, yhat, 0.0, f64::INFINITY)
}

/// Log-spectral distance restricted to bins with centre frequency in
/// `[lo_hz, hi_hz)`.
pub fn lsd_band(y: &AudioBuffer, yhat: &AudioBuffer, lo_hz: f64, hi_hz: f64) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", y.len(), yhat.len())));
    }
    if y.sample_rate() != yhat.sample_rate() {
        return Err(Error::arg("sample rates differ"));
    }
    let plan = StftPlan::new(LSD_FFT, LSD_HOP, WindowKind::Hann)?;
    let (a, frames) = log_power_frames(&plan, y.samples())?;
    let (b, _) = log_power_frames(&plan, yhat.samples())?;
    let bin_hz = y.sample_rate() as f64 / LSD_FFT as f64;
    let bins: Vec<usize> = (0..plan.bins())
        .filter(|&k| (lo_hz..hi_hz).contains(&(k as f64 * bin_hz)))
        .collect();
    if bins.is_empty() {
        return Err(Error::arg(format!("no bins in [{lo_hz}, {hi_hz}) Hz")));
    }
    let mut total = 0.0;
    for t in 0..frames {
        let ms: f64 = bins
            .iter()
            .map(|&k| {
                let d = a[k * frames + t] - b[k * frames + t];
                d * d
            })
            .sum::<f64>()
            / bins.len() as f64;
        total += ms.sqrt();
    }
    Ok(total / frames as f64)
}

/// Maps audio to a fixed-length vector.
pub trait EmbeddingProvider {
    /// Recorded next to every number computed with this provider.
    fn descriptor(&self) -> String;
    fn sample_rate(&self) -> u32;
    fn dim(&self) -> usize;
    /// `x` must already be at [`sample_rate`](Self::sample_rate).
    fn embed(&self, x: &AudioBuffer) -> Result<Vec<f64>>;
}

/// Log-mel statistics projected by a fixed seeded Gaussian matrix.
#[derive(Debug, Clone)]
pub struct SurrogateEmbedder {
    seed: u64,
    dim: usize,
    projection: DMatrix<f64>,
    mel: DMatrix<f64>,
    plan: StftPlan,
}

impl SurrogateEmbedder {
    pub const RATE: u32 = 16_000;
    pub const FFT: usize = 512;
    pub const HOP: usize = 160;
    pub const MEL_BANDS: usize = 64;
    pub const MEL_LOW_HZ: f64 = 125.0;
    pub const MEL_HIGH_HZ: f64 = 7500.0;
    pub const LOG_OFFSET: f64 = 0.01;
    pub const DEFAULT_DIM: usize = 128;

    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be positive"));
        }
        let features = 2 * Self::MEL_BANDS;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (features as f64).sqrt()).expect("finite");
        let projection = DMatrix::from_fn(dim, features, |_, _| normal.sample(&mut rng));
        Ok(Self {
            seed,
            dim,
            projection,
            mel: mel_filterbank(Self::FFT, Self::RATE, Self::MEL_BANDS, Self::MEL_LOW_HZ, Self::MEL_HIGH_HZ),
            plan: StftPlan::new(Self::FFT, Self::HOP, WindowKind::Hann)?,
        })
    }

    pub fn with_seed(seed: u64) -> Self {
        Self::new(seed, Self::DEFAULT_DIM).expect("positive dimension")
    }

    /// Per-band mean and standard deviation of the log-mel frames.
    pub fn features(&self, x: &AudioBuffer) -> Result<Vec<f64>> {
        if x.sample_rate() != Self::RATE {
            return Err(Error::Provider(format!(
                "surrogate embedder expects {} Hz, got {} Hz",
                Self::RATE,
                x.sample_rate()
            )));
        }
        if x.len() < Self::FFT {
            return Err(Error::Provider(format!("clip of {} samples is shorter than one frame", x.len())));
        }
        let (re, im) = self.plan.analyze(x.samples())?;
        let (bins, frames) = (self.plan.bins(), self.plan.num_frames(x.len()));
        let power = DMatrix::from_fn(bins, frames, |k, t| {
            let (r, i) = (re[k * frames + t], im[k * frames + t]);
            r * r + i * i
        });
        let logmel = (&self.mel * power).map(|v| (v + Self::LOG_OFFSET).ln());
        let mut out = Vec::with_capacity(2 * Self::MEL_BANDS);
        let mut stds = Vec::with_capacity(Self::MEL_BANDS);
        for row in logmel.row_iter() {
            let mean = row.mean();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64;
            out.push(mean);
            stds.push(var.sqrt());
        }
        out.extend(stds);
        Ok(out)
    }
}

impl EmbeddingProvider for SurrogateEmbedder {
    fn descriptor(&self) -> String {
        format!(
            "surrogate-logmel{}-{}hz-seed{}-dim{}",
            Self::MEL_BANDS,
            Self::RATE,
            self.seed,
            self.dim
        )
    }

    fn sample_rate(&self) -> u32 {
        Self::RATE
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, x: &AudioBuffer) -> Result<Vec<f64>> {
        let f = DVector::from_vec(self.features(x)?);
        Ok((&self.projection * f).iter().copied().collect())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK mel filterbank, `bands x (fft/2 + 1)`.
pub fn mel_filterbank(fft: usize, rate: u32, bands: usize, lo_hz: f64, hi_hz: f64) -> DMatrix<f64> {
    let bins = fft / 2 + 1;
    let (ml, mh) = (hz_to_mel(lo_hz), hz_to_mel(hi_hz));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(ml + (mh - ml) * i as f64 / (bands + 1) as f64))
        .collect();
    DMatrix::from_fn(bands, bins, |b, k| {
        let f = k as f64 * rate as f64 / fft as f64;
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        if f > l && f <= c {
            (f - l) / (c - l)
        } else if f > c && f < r {
            (r - f) / (r - c)
        } else {
            0.0
        }
    })
}

fn to_provider_rate(x: &AudioBuffer, p: &dyn EmbeddingProvider) -> Result<AudioBuffer> {
    resample(x, p.sample_rate())
}

/// Euclidean distance between the embeddings of `y` and `yhat`.
pub fn embedding_distance(y: &AudioBuffer, yhat: &AudioBuffer, p: &dyn EmbeddingProvider) -> Result<f64> {
    let a = p.embed(&to_provider_rate(y, p)?)?;
    let b = p.embed(&to_provider_rate(yhat, p)?)?;
    if a.len() != b.len() {
        return Err(Error::Provider("embedding length changed between calls".into()));
    }
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(embeddings: &[Vec<f64>]) -> Result<GaussianStats> {
    if embeddings.len() < 2 {
        return Err(Error::arg("at least two embeddings are needed"));
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::arg("embeddings must be non-empty and of equal length"));
    }
    let n = embeddings.len();
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let mut covariance = centered.transpose() * &centered / (n - 1) as f64;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianStats { mean, covariance })
}

/// `‖μb − μe‖² + tr(Σb + Σe − 2 (Σb Σe)^½)`.
///
/// The trace of the square root is the sum of square roots of the
/// eigenvalues of `Σb Σe`, which are real and non-negative for PSD inputs.
pub fn frechet_distance(b: &GaussianStats, e: &GaussianStats) -> Result<f64> {
    if b.dim() != e.dim() || b.covariance.shape() != e.covariance.shape() || b.covariance.nrows() != b.dim() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", b.dim(), e.dim())));
    }
    let mean_term = (&b.mean - &e.mean).norm_squared();
    let prod = &b.covariance * &e.covariance;
    let eig = prod.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let worst = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if worst > IMAG_TOLERANCE * scale {
        return Err(Error::Numeric(format!(
            "matrix square root has imaginary residue {worst:e}"
        )));
    }
    let tr_sqrt: f64 = eig.iter().map(|z| z.re.max(0.0).sqrt()).sum();
    let fd = mean_term + b.covariance.trace() + e.covariance.trace() - 2.0 * tr_sqrt;
    Ok(fd.max(0.0))
}

/// Non-overlapping windows of [`FAD_WINDOW_SECONDS`]; clips shorter than one
/// window contribute themselves whole.
pub fn embedding_windows(x: &AudioBuffer) -> Vec<AudioBuffer> {
    let len = (FAD_WINDOW_SECONDS * x.sample_rate() as f64).round() as usize;
    if x.len() < len {
        return vec![x.clone()];
    }
    (0..x.len() / len)
        .map(|i| x.slice(i * len, len).expect("in bounds"))
        .collect()
}

fn embed_corpus(clips: &[AudioBuffer], p: &dyn EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for clip in clips {
        for w in embedding_windows(&to_provider_rate(clip, p)?) {
            out.push(p.embed(&w)?);
        }
    }
    Ok(out)
}

/// Fréchet distance between windowed embeddings of two corpora.
pub fn fad_protocol(background: &[AudioBuffer], evaluation: &[AudioBuffer], p: &dyn EmbeddingProvider) -> Result<f64> {
    if background.is_empty() || evaluation.is_empty() {
        return Err(Error::arg("both corpora must be non-empty"));
    }
    let b = fit_gaussian(&embed_corpus(background, p)?)?;
    let e = fit_gaussian(&embed_corpus(evaluation, p)?)?;
    frechet_distance(&b, &e)
}

/// Seeded partition of `0..n` into two halves of equal size (the odd item
/// out, if any, is left unused).
pub fn two_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = n / 2;
    let mut a = idx[..half].to_vec();
    let mut b = idx[half..2 * half].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitFad {
    pub value: f64,
    pub seed: u64,
    pub background: Vec<usize>,
    pub evaluation: Vec<usize>,
}

/// References from one half serve as background for the processed clips of
/// the other half.
pub fn fad_two_split(
    references: &[AudioBuffer],
    processed: &[AudioBuffer],
    p: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<SplitFad> {
    if references.len() != processed.len() {
        return Err(Error::arg("reference and processed sets differ in size"));
    }
    if references.len() < 2 {
        return Err(Error::arg("two-split protocol needs at least two clips"));
    }
    let (bi, ei) = two_split(references.len(), seed);
    let bg: Vec<AudioBuffer> = bi.iter().map(|&i| references[i].clone()).collect();
    let ev: Vec<AudioBuffer> = ei.iter().map(|&i| processed[i].clone()).collect();
    Ok(SplitFad {
        value: fad_protocol(&bg, &ev, p)?,
        seed,
        background: bi,
        evaluation: ei,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub metric: String,
    pub value: f64,
    pub provider: String,
    pub seed: u64,
}

pub fn write_report<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io { path: None, source: e })
}

pub fn write_report_file(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_report(f, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, secs: f64, rate: u32, amp: f64) -> AudioBuffer {
        let n = (secs * rate as f64) as usize;
        AudioBuffer::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect(),
            rate,
        )
        .unwrap()
    }

    fn noise(len: usize, seed: u64, std: f64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, std).unwrap();
        AudioBuffer::new((0..len).map(|_| n.sample(&mut rng)).collect(), 22050).unwrap()
    }

    #[test]
    fn lsd_identity_and_scale_laws() {
        let y = noise(22050, 1, 0.3);
        assert_eq!(lsd(&y, &y).unwrap(), 0.0);
        assert!((lsd(&y, &y.scaled(10.0)).unwrap() - 2.0).abs() < 1e-9);
        assert!((lsd(&y, &y.scaled(10f64.sqrt())).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(lsd(&y, &noise(100, 1, 0.3)), Err(Error::Argument(_))));
    }

    #[test]
    fn lsd_matches_direct_dft_oracle() {
        // one frame, centred at sample 0 of a 2048-sample signal, computed by a naive DFT
        let y = noise(2048, 2, 0.2);
        let yh = noise(2048, 3, 0.2);
        let window: Vec<f64> = (0..LSD_FFT).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / LSD_FFT as f64).cos()).collect();
        let frame = |x: &[f64], t: usize| -> Vec<f64> {
            let start = (t * LSD_HOP) as isize - (LSD_FFT / 2) as isize;
            let period = 2 * (x.len() as isize - 1);
            (0..LSD_FFT)
                .map(|n| {
                    let mut s = (start + n as isize).rem_euclid(period);
                    if s >= x.len() as isize {
                        s = period - s;
                    }
                    x[s as usize] * window[n]
                })
                .collect()
        };
        let logpow = |f: &[f64], k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in f.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / LSD_FFT as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let m = (re * re + im * im).sqrt().max(LSD_FLOOR);
            2.0 * m.log10()
        };
        let frames = 2048usize.div_ceil(LSD_HOP);
        let mut expected = 0.0;
        for t in 0..frames {
            let (fa, fb) = (frame(y.samples(), t), frame(yh.samples(), t));
            let ms: f64 = (0..=LSD_FFT / 2)
                .step_by(1)
                .map(|k| (logpow(&fa, k) - logpow(&fb, k)).powi(2))
                .sum::<f64>()
                / (LSD_FFT / 2 + 1) as f64;
            expected += ms.sqrt();
        }
        expected /= frames as f64;
        assert!((lsd(&y, &yh).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn band_lsd_ignores_other_bins() {
        let y = tone(500.0, 1.0, 22050, 0.5);
        let mut other = y.samples().to_vec();
        let hi = tone(6000.0, 1.0, 22050, 0.3);
        other.iter_mut().zip(hi.samples()).for_each(|(a, b)| *a += b);
        let yh = AudioBuffer::new(other, 22050).unwrap();
        assert!(lsd_band(&y, &yh, 0.0, 2000.0).unwrap() < 0.05);
        assert!(lsd_band(&y, &yh, 4000.0, 8000.0).unwrap() > 1.0);
    }

    #[test]
    fn gaussian_fit_examples() {
        let s = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(s.mean, DVector::from_vec(vec![1.0, 1.0]));
        let c = &s.covariance;
        assert!((c[(0, 0)] - 4.0 / 3.0).abs() < 1e-12 && (c[(1, 1)] - 4.0 / 3.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
        let same = fit_gaussian(&vec![vec![1.5, -2.0, 3.0]; 5]).unwrap();
        assert!(same.covariance.iter().all(|&v| v == 0.0));
        let p = fit_gaussian(&[vec![2.0, 2.0], vec![0.0, 2.0], vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, s);
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn frechet_closed_forms() {
        let g = |m: Vec<f64>, c: Vec<f64>| {
            let d = m.len();
            GaussianStats {
                mean: DVector::from_vec(m),
                covariance: DMatrix::from_row_slice(d, d, &c),
            }
        };
        let a = g(vec![0.0], vec![1.0]);
        let b = g(vec![1.0], vec![4.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let c = g(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let d = g(vec![3.0, 4.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((frechet_distance(&c, &d).unwrap() - 25.0).abs() < 1e-12);
        assert!(frechet_distance(&c, &c).unwrap().abs() < 1e-12);
        assert!(matches!(frechet_distance(&a, &c), Err(Error::Argument(_))));
    }

    #[test]
    fn surrogate_is_deterministic_and_symmetric() {
        let p = SurrogateEmbedder::with_seed(11);
        let a = tone(440.0, 1.0, 22050, 0.4);
        let b = tone(1320.0, 1.0, 22050, 0.2);
        assert_eq!(embedding_distance(&a, &a, &p).unwrap(), 0.0);
        let d1 = embedding_distance(&a, &b, &p).unwrap();
        let d2 = embedding_distance(&b, &a, &p).unwrap();
        assert!(d1 > 0.0 && (d1 - d2).abs() < 1e-12);
        assert_eq!(p.embed(&resample(&a, 16000).unwrap()).unwrap().len(), 128);
        assert!(matches!(p.embed(&a), Err(Error::Provider(_))));
    }

    #[test]
    fn mel_filterbank_is_htk_triangles() {
        let fb = mel_filterbank(512, 16000, 64, 125.0, 7500.0);
        assert_eq!(fb.shape(), (64, 257));
        assert!(fb.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // every band except possibly the narrow lowest ones touches a bin
        assert!(fb.row_iter().skip(8).all(|r| r.max() > 0.0));
        assert!((hz_to_mel(mel_to_hz(1234.5)) - 1234.5).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn two_split_is_seeded_partition() {
        let (a, b) = two_split(9, 4);
        assert_eq!((a.len(), b.len()), (4, 4));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(two_split(9, 4), (a, b));
    }

    #[test]
    fn report_csv_columns() {
        let mut out = Vec::new();
        let rows = [ReportRow {
            condition: "lowpass_3000".into(),
            metric: "lsd".into(),
            value: 1.25,
            provider: "none".into(),
            seed: 3,
        }];
        write_report(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "condition,metric,value,provider,seed\nlowpass_3000,lsd,1.25,none,3\n");
    }
}

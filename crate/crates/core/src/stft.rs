//! Short-time Fourier analysis/synthesis with center reflection padding and
//! normalized weighted overlap-add.
//!
//! Frames are `n_fft` long, start every `hop` samples on the signal padded by
//! `n_fft / 2` reflected samples at each end, and there are `ceil(len / hop)`
//! of them. Spectrogram planes are stored bin-major: element `(k, t)` lives at
//! `k * frames + t`.
//!
//! Each transform also has its adjoint, which is what backpropagation through
//! a linear operator needs.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::{AudioBuffer, MODEL_RATE};
use crate::error::{Error, Result};

pub const MODEL_FFT_SIZE: usize = 1024;
pub const MODEL_HOP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hamming.
    Hamming,
    /// Periodic Hann.
    Hann,
}

impl WindowKind {
    pub fn build(self, len: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            WindowKind::Hamming => (0.54, 0.46),
            WindowKind::Hann => (0.5, 0.5),
        };
        (0..len)
            .map(|n| a0 - a1 * (2.0 * PI * n as f64 / len as f64).cos())
            .collect()
    }
}

/// Precomputed window and FFT plans for one analysis resolution.
#[derive(Clone)]
pub struct StftPlan {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(n_fft: usize, hop: usize, window: WindowKind) -> Result<Self> {
        if n_fft < 2 || n_fft % 2 != 0 {
            return Err(Error::arg(format!("fft size {n_fft} must be even and >= 2")));
        }
        if hop == 0 || hop > n_fft {
            return Err(Error::arg(format!("hop {hop} must be in 1..={n_fft}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft,
            hop,
            window: window.build(n_fft),
            fwd: planner.plan_fft_forward(n_fft),
            inv: planner.plan_fft_inverse(n_fft),
        })
    }

    /// The generator's front-end: 1024-point Hamming, hop 256.
    pub fn model() -> Self {
        Self::new(MODEL_FFT_SIZE, MODEL_HOP, WindowKind::Hamming).expect("static parameters")
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    fn pad(&self) -> usize {
        self.n_fft / 2
    }

    fn padded_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.n_fft
    }

    /// Source index in the signal for position `p` of the padded signal.
    fn reflect(&self, p: usize, len: usize) -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len as isize - 1);
        let mut s = (p as isize - self.pad() as isize).rem_euclid(period);
        if s >= len as isize {
            s = period - s;
        }
        s as usize
    }

    /// Forward transform; returns `(real, imag)` planes of `bins x frames`.
    pub fn analyze(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.is_empty() {
            return Err(Error::arg("cannot analyze an empty signal"));
        }
        let frames = self.num_frames(x.len());
        let bins = self.bins();
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let start = t * self.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[self.reflect(start + n, x.len())] * self.window[n], 0.0);
            }
            self.fwd.process(&mut buf);
            for k in 0..bins {
                re[k * frames + t] = buf[k].re;
                im[k * frames + t] = buf[k].im;
            }
        }
        Ok((re, im))
    }

    /// Adjoint of [`analyze`](Self::analyze): maps gradients on the planes to
    /// a gradient on the `len`-sample input.
    pub fn analyze_adjoint(&self, g_re: &[f64], g_im: &[f64], len: usize) -> Vec<f64> {
        let frames = self.num_frames(len);
        let bins = self.bins();
        let mut gx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for k in 0..bins {
                buf[k] = Complex64::new(g_re[k * frames + t], g_im[k * frames + t]);
            }
            self.inv.process(&mut buf);
            let start = t * self.hop;
            for (n, b) in buf.iter().enumerate() {
                gx[self.reflect(start + n, len)] += b.re * self.window[n];
            }
        }
        gx
    }

    fn envelope(&self, frames: usize) -> Vec<f64> {
        let mut env = vec![0.0; self.padded_len(frames)];
        for t in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                env[t * self.hop + n] += w * w;
            }
        }
        env
    }

    /// Inverse transform by windowed overlap-add normalized with the summed
    /// squared window; output trimmed or zero-padded to `len`.
    pub fn synthesize(&self, re: &[f64], im: &[f64], frames: usize, len: usize) -> Result<Vec<f64>> {
        let bins = self.bins();
        if re.len() != bins * frames || im.len() != bins * frames {
            return Err(Error::Shape(format!(
                "planes of {} / {} values do not match {bins} bins x {frames} frames",
                re.len(),
                im.len()
            )));
        }
        let mut ola = vec![0.0; self.padded_len(frames)];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let n = self.n_fft;
        for t in 0..frames {
            self.hermitian(re, im, frames, t, &mut buf);
            self.inv.process(&mut buf);
            let start = t * self.hop;
            for (i, b) in buf.iter().enumerate() {
                ola[start + i] += b.re / n as f64 * self.window[i];
            }
        }
        let env = self.envelope(frames);
        let pad = self.pad();
        Ok((0..len)
            .map(|i| match ola.get(i + pad) {
                Some(v) if env[i + pad] > 1e-11 => v / env[i + pad],
                _ => 0.0,
            })
            .collect())
    }

    fn hermitian(&self, re: &[f64], im: &[f64], frames: usize, t: usize, buf: &mut [Complex64]) {
        let n = self.n_fft;
        let half = n / 2;
        buf[0] = Complex64::new(re[t], 0.0);
        buf[half] = Complex64::new(re[half * frames + t], 0.0);
        for k in 1..half {
            let z = Complex64::new(re[k * frames + t], im[k * frames + t]);
            buf[k] = z;
            buf[n - k] = z.conj();
        }
    }

    /// Adjoint of [`synthesize`](Self::synthesize).
    pub fn synthesize_adjoint(&self, g: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let bins = self.bins();
        let n = self.n_fft;
        let pad = self.pad();
        let env = self.envelope(frames);
        let mut g_ola = vec![0.0; env.len()];
        for (i, gv) in g.iter().enumerate() {
            if let Some(slot) = g_ola.get_mut(i + pad) {
                if env[i + pad] > 1e-11 {
                    *slot = gv / env[i + pad];
                }
            }
        }
        let mut g_re = vec![0.0; bins * frames];
        let mut g_im = vec![0.0; bins * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = t * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(g_ola[start + i] * self.window[i], 0.0);
            }
            self.fwd.process(&mut buf);
            for k in 0..bins {
                let c = if k == 0 || k == n / 2 { 1.0 } else { 2.0 } / n as f64;
                g_re[k * frames + t] = c * buf[k].re;
                g_im[k * frames + t] = if k == 0 || k == n / 2 { 0.0 } else { c * buf[k].im };
            }
        }
        (g_re, g_im)
    }
}

/// Complex spectrogram held as two real planes of `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    real: Vec<f64>,
    imag: Vec<f64>,
    bins: usize,
    frames: usize,
    fft_size: usize,
    hop: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        real: Vec<f64>,
        imag: Vec<f64>,
        frames: usize,
        fft_size: usize,
        hop: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let bins = fft_size / 2 + 1;
        if real.len() != bins * frames || imag.len() != bins * frames {
            return Err(Error::Shape(format!(
                "planes must hold {bins} x {frames} values, got {} and {}",
                real.len(),
                imag.len()
            )));
        }
        if real.iter().chain(&imag).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spectrogram value".into()));
        }
        Ok(Self {
            real,
            imag,
            bins,
            frames,
            fft_size,
            hop,
            sample_rate,
        })
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn imag(&self) -> &[f64] {
        &self.imag
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.real
            .iter()
            .zip(&self.imag)
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        let mut out = self.clone();
        out.real.iter_mut().chain(out.imag.iter_mut()).for_each(|v| *v *= gain);
        out
    }
}

/// Model front-end STFT (1024-point periodic Hamming, hop 256).
pub fn stft(x: &AudioBuffer) -> Result<ComplexSpectrogram> {
    if x.sample_rate() != MODEL_RATE {
        return Err(Error::arg(format!(
            "stft expects {MODEL_RATE} Hz audio, got {}",
            x.sample_rate()
        )));
    }
    stft_with(&StftPlan::model(), x)
}

pub fn stft_with(plan: &StftPlan, x: &AudioBuffer) -> Result<ComplexSpectrogram> {
    let (re, im) = plan.analyze(x.samples())?;
    let frames = plan.num_frames(x.len());
    ComplexSpectrogram::new(re, im, frames, plan.n_fft(), plan.hop(), x.sample_rate())
}

/// Inverse of [`stft`]; `len` is the requested output length in samples.
pub fn istft(s: &ComplexSpectrogram, len: usize) -> Result<AudioBuffer> {
    if s.fft_size() != MODEL_FFT_SIZE || s.hop() != MODEL_HOP {
        return Err(Error::arg(format!(
            "spectrogram uses fft {} / hop {}, expected {MODEL_FFT_SIZE} / {MODEL_HOP}",
            s.fft_size(),
            s.hop()
        )));
    }
    istft_with(&StftPlan::model(), s, len)
}

pub fn istft_with(plan: &StftPlan, s: &ComplexSpectrogram, len: usize) -> Result<AudioBuffer> {
    if s.bins() != plan.bins() {
        return Err(Error::Shape(format!("{} bins, plan expects {}", s.bins(), plan.bins())));
    }
    let y = plan.synthesize(s.real(), s.imag(), s.frames(), len)?;
    AudioBuffer::new(y, s.sample_rate())
}

//! Adversarial and reconstruction objectives.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};
use crate::stft::{StftPlan, WindowKind};

/// Magnitude floor for the log-magnitude term.
pub const LOG_FLOOR: f64 = 1e-5;

pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_RESOLUTIONS: [usize; 4] = [256, 512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub stft_resolutions: Vec<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            stft_resolutions: DEFAULT_RESOLUTIONS.to_vec(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::arg("alpha must be finite and non-negative"));
        }
        if self.stft_resolutions.is_empty() {
            return Err(Error::arg("at least one STFT resolution is required"));
        }
        for &m in &self.stft_resolutions {
            if m < 4 || m % 4 != 0 {
                return Err(Error::arg(format!("resolution {m} must be a multiple of 4")));
            }
        }
        Ok(())
    }

    /// Hann plans with hop `m/4`, one per resolution.
    pub fn plans(&self) -> Result<Vec<Arc<StftPlan>>> {
        self.validate()?;
        self.stft_resolutions
            .iter()
            .map(|&m| StftPlan::new(m, m / 4, WindowKind::Hann).map(Arc::new))
            .collect()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite discriminator score".into()))
    }
}

/// `Σ_k (s_k − 1)²` over the per-discriminator mean scores on generated audio.
pub fn adversarial_g_loss(score_means: &[f64]) -> Result<f64> {
    check_finite(score_means)?;
    Ok(score_means.iter().map(|s| (s - 1.0) * (s - 1.0)).sum())
}

/// `½(r − 1)² + ½f²` for one discriminator.
pub fn discriminator_loss(real_mean: f64, fake_mean: f64) -> Result<f64> {
    check_finite(&[real_mean, fake_mean])?;
    Ok(0.5 * (real_mean - 1.0).powi(2) + 0.5 * fake_mean * fake_mean)
}

pub fn generator_total_loss(l_adv: f64, l_rec: f64, w: &LossWeights) -> f64 {
    l_adv + w.alpha * l_rec
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} elements", a.len(), b.len())));
    }
    Ok(())
}

/// `‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn spectral_convergence(y_mag: &[f64], yhat_mag: &[f64]) -> Result<f64> {
    same_len(y_mag, yhat_mag)?;
    spectral_convergence_slices(y_mag, yhat_mag)
}

pub(crate) fn spectral_convergence_slices(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::UndefinedReference);
    }
    let diff = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// Mean absolute difference of floored natural-log magnitudes.
pub fn log_magnitude_distance(y_mag: &[f64], yhat_mag: &[f64]) -> Result<f64> {
    same_len(y_mag, yhat_mag)?;
    if y_mag.is_empty() {
        return Err(Error::arg("empty spectrogram"));
    }
    Ok(log_magnitude_distance_slices(y_mag, yhat_mag, LOG_FLOOR))
}

pub(crate) fn log_magnitude_distance_slices(y: &[f64], yhat: &[f64], eps: f64) -> f64 {
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a.max(eps).ln() - b.max(eps).ln()).abs()).sum();
    s / y.len() as f64
}

fn magnitudes(plan: &StftPlan, x: &[f64]) -> Result<Vec<f64>> {
    let (re, im) = plan.analyze(x)?;
    Ok(re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect())
}

/// Reconstruction loss averaged over the configured resolutions.
pub fn multires_stft_loss(y: &AudioBuffer, yhat: &AudioBuffer, w: &LossWeights) -> Result<f64> {
    multires_stft_loss_samples(y.samples(), yhat.samples(), w)
}

pub fn multires_stft_loss_samples(y: &[f64], yhat: &[f64], w: &LossWeights) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::arg(format!("length mismatch: {} vs {}", y.len(), yhat.len())));
    }
    let plans = w.plans()?;
    let mut total = 0.0;
    for plan in &plans {
        let ym = magnitudes(plan, y)?;
        let hm = magnitudes(plan, yhat)?;
        total += spectral_convergence_slices(&ym, &hm)? + log_magnitude_distance_slices(&ym, &hm, LOG_FLOOR);
    }
    Ok(total / plans.len() as f64)
}

/// Differentiable reconstruction loss over a batch `[b, len]`.
pub struct MultiResLoss {
    plans: Vec<Arc<StftPlan>>,
}

impl MultiResLoss {
    pub fn new(w: &LossWeights) -> Result<Self> {
        Ok(Self { plans: w.plans()? })
    }

    /// Target magnitudes for `target` (`[b, len]`), one tensor per resolution.
    pub fn target_magnitudes(&self, target: &Tensor) -> Result<Vec<Arc<Tensor>>> {
        let (b, len) = (target.dim(0), target.dim(1));
        self.plans
            .iter()
            .map(|plan| {
                let mut data = Vec::new();
                for bi in 0..b {
                    data.extend(magnitudes(plan, &target.data()[bi * len..(bi + 1) * len])?);
                }
                Ok(Arc::new(Tensor::new(vec![b, plan.bins(), plan.num_frames(len)], data)?))
            })
            .collect()
    }

    /// Batch-mean loss as a one-element node.
    pub fn loss(&self, g: &mut Graph, yhat: Var, targets: &[Arc<Tensor>]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (plan, target) in self.plans.iter().zip(targets) {
            let mag = g.stft_magnitude(yhat, plan.clone())?;
            let sc = g.spectral_convergence(mag, target.clone())?;
            let lm = g.log_magnitude_distance(mag, target.clone(), LOG_FLOOR)?;
            let both = g.add(sc, lm)?;
            acc = Some(match acc {
                None => both,
                Some(a) => g.add(a, both)?,
            });
        }
        let per_item = g.scale(acc.expect("at least one resolution"), 1.0 / self.plans.len() as f64);
        Ok(g.mean(per_item))
    }
}

/// Graph form of the generator adversarial term over score maps of generated audio.
pub fn adversarial_g_graph(g: &mut Graph, fake_maps: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &m in fake_maps {
        let mean = g.mean(m);
        let shifted = g.add_scalar(mean, -1.0);
        let sq = g.square(shifted);
        acc = Some(match acc {
            None => sq,
            Some(a) => g.add(a, sq)?,
        });
    }
    acc.ok_or_else(|| Error::arg("no discriminator outputs"))
}

/// Graph form of one discriminator's loss.
pub fn discriminator_graph(g: &mut Graph, real_map: Var, fake_map: Var) -> Result<Var> {
    let r = g.mean(real_map);
    let r = g.add_scalar(r, -1.0);
    let r = g.square(r);
    let f = g.mean(fake_map);
    let f = g.square(f);
    let sum = g.add(r, f)?;
    Ok(g.scale(sum, 0.5))
}

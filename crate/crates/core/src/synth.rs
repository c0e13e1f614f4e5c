//! Seeded piano-like test material: inharmonic decaying partials with a
//! short hammer transient per note.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{AudioBuffer, MODEL_RATE};

const TOP_PARTIAL_HZ: f64 = 10_500.0;

/// Adds one note starting at sample `onset` into `out`.
pub fn add_note<R: Rng + ?Sized>(out: &mut [f64], onset: usize, midi: f64, velocity: f64, fs: f64, rng: &mut R) {
    let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
    let b = 4e-5 * 2f64.powf((midi - 60.0) / 24.0);
    let t60 = 4.0 * (261.6 / f0).sqrt().clamp(0.3, 3.0);
    let brightness = 0.35 - 0.25 * velocity;
    let mut partials = Vec::new();
    for n in 1..200 {
        let nf = n as f64;
        let f = nf * f0 * (1.0 + b * nf * nf).sqrt();
        if f >= TOP_PARTIAL_HZ {
            break;
        }
        let amp = velocity * (-brightness * nf).exp() / nf.powf(0.6);
        let decay = 6.91 / (t60 / (1.0 + 0.08 * nf));
        partials.push((2.0 * PI * f / fs, amp, decay / fs, rng.random_range(0.0..2.0 * PI)));
    }
    let len = ((t60 * 0.8) * fs) as usize;
    let attack = (0.002 * fs) as usize;
    let n = len.min(out.len().saturating_sub(onset));
    let dst = &mut out[onset..onset + n];
    for &(w, a, d, ph) in &partials {
        // damped phasor advanced by one complex multiply per sample
        let (sr, si) = ((-d).exp() * w.cos(), (-d).exp() * w.sin());
        let (mut zr, mut zi) = (a * ph.cos(), a * ph.sin());
        for (i, o) in dst.iter_mut().enumerate() {
            let env_a = ((i + 1) as f64 / attack as f64).min(1.0);
            *o += env_a * zi;
            (zr, zi) = (zr * sr - zi * si, zr * si + zi * sr);
        }
    }
    let noise = Normal::new(0.0, 0.05 * velocity).expect("finite");
    let burst = (0.012 * fs) as usize;
    let mut prev = 0.0;
    for i in 0..burst.min(out.len().saturating_sub(onset)) {
        let w: f64 = noise.sample(rng);
        out[onset + i] += (w - prev) * (-(i as f64) / (0.003 * fs)).exp();
        prev = w;
    }
}

/// A clip of random notes and chords, peak-normalized to 0.5.
pub fn piano_clip(seconds: f64, seed: u64) -> AudioBuffer {
    let fs = MODEL_RATE as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (seconds * fs).round() as usize;
    let mut out = vec![0.0; len];
    let mut t = 0.0;
    while t < seconds {
        let onset = (t * fs) as usize;
        let root = rng.random_range(36..84) as f64;
        let voices = rng.random_range(1..=3);
        for v in 0..voices {
            let interval = [0.0, 4.0, 7.0, 12.0][v.min(3)];
            let vel = rng.random_range(0.3..1.0);
            add_note(&mut out, onset, root + interval, vel, fs, &mut rng);
        }
        t += rng.random_range(0.12..0.5);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioBuffer::new(out, MODEL_RATE).expect("finite synthesis")
}

/// `count` clips of `seconds` each with seeds derived from `seed`.
pub fn piano_corpus(count: usize, seconds: f64, seed: u64) -> Vec<AudioBuffer> {
    (0..count)
        .map(|i| piano_clip(seconds, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = piano_clip(1.0, 3);
        assert_eq!(a, piano_clip(1.0, 3));
        assert_ne!(a, piano_clip(1.0, 4));
        assert_eq!(a.len(), 22050);
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
    }
}

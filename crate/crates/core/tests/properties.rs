use bwe_core::audio::{AudioBuffer, MODEL_RATE};
use bwe_core::degrade::{degrade_example, CutoffDistribution, GainRange, NoiseSpec};
use bwe_core::gradcheck::check_gradients;
use bwe_core::losses::{
    adversarial_g_loss, discriminator_loss, log_magnitude_distance, multires_stft_loss_samples, spectral_convergence,
    LossWeights, MultiResLoss,
};
use bwe_core::metrics::{frechet_distance, lsd, GaussianStats};
use bwe_core::nn::Tensor;
use bwe_core::stft::{istft, stft};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn buffer(x: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(x, MODEL_RATE).unwrap()
}

fn small_weights() -> LossWeights {
    LossWeights {
        stft_resolutions: vec![16, 32, 64],
        ..LossWeights::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stft_round_trip(len in 1024usize..6000, seed in any::<u64>()) {
        let x = buffer(signal(len, seed));
        let y = istft(&stft(&x).unwrap(), len).unwrap();
        let err: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!((err / len as f64).sqrt() < 1e-6 * x.rms());
    }

    #[test]
    fn stft_is_linear(len in 1024usize..3000, seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = signal(len, seed);
        let z = signal(len, seed ^ 0x5555);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
        let (sx, sz, sm) = (stft(&buffer(x)).unwrap(), stft(&buffer(z)).unwrap(), stft(&buffer(mix)).unwrap());
        for i in 0..sm.real().len() {
            prop_assert!((sm.real()[i] - (a * sx.real()[i] + b * sz.real()[i])).abs() < 1e-9);
            prop_assert!((sm.imag()[i] - (a * sx.imag()[i] + b * sz.imag()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_energy_scales_quadratically(len in 1024usize..3000, seed in any::<u64>(), g in 0.01f64..20.0) {
        let x = signal(len, seed);
        let gx: Vec<f64> = x.iter().map(|v| g * v).collect();
        let energy = |s: &[f64]| stft(&buffer(s.to_vec())).unwrap().magnitude().iter().map(|m| m * m).sum::<f64>();
        let (e, eg) = (energy(&x), energy(&gx));
        prop_assert!((eg / (g * g * e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degradation_is_seed_deterministic(seed in any::<u64>()) {
        let y = buffer(signal(2048, 3));
        let run = || degrade_example(
            &y,
            &CutoffDistribution::default(),
            &NoiseSpec::default(),
            &GainRange::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        ).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.cutoff_hz.to_bits(), b.cutoff_hz.to_bits());
        prop_assert_eq!(a.input, b.input);
        prop_assert_eq!(a.target, b.target);
    }

    #[test]
    fn losses_are_nonnegative(
        a in prop::collection::vec(-2.0f64..2.0, 200..400),
        seed in any::<u64>(),
        scores in prop::collection::vec(-5.0f64..5.0, 1..4),
        r in -5.0f64..5.0,
        f in -5.0f64..5.0,
    ) {
        let b = signal(a.len(), seed);
        let w = small_weights();
        prop_assert!(multires_stft_loss_samples(&a, &b, &w).unwrap() >= 0.0);
        prop_assert_eq!(multires_stft_loss_samples(&a, &a, &w).unwrap(), 0.0);
        let (ma, mb): (Vec<f64>, Vec<f64>) = (a.iter().map(|v| v.abs()).collect(), b.iter().map(|v| v.abs()).collect());
        if ma.iter().any(|v| *v > 0.0) {
            prop_assert!(spectral_convergence(&ma, &mb).unwrap() >= 0.0);
        }
        prop_assert!(log_magnitude_distance(&ma, &mb).unwrap() >= 0.0);
        prop_assert!(adversarial_g_loss(&scores).unwrap() >= 0.0);
        prop_assert!(discriminator_loss(r, f).unwrap() >= 0.0);
    }

    #[test]
    fn reconstruction_loss_is_phase_blind(len in 200usize..600, seed in any::<u64>()) {
        let y = signal(len, seed);
        let yhat = signal(len, seed.wrapping_add(1));
        let negated: Vec<f64> = yhat.iter().map(|v| -v).collect();
        let w = small_weights();
        let (l1, l2) = (multires_stft_loss_samples(&y, &yhat, &w).unwrap(), multires_stft_loss_samples(&y, &negated, &w).unwrap());
        prop_assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn lsd_scale_law(seed in any::<u64>(), c in 1.5f64..50.0) {
        let y = buffer(signal(4096, seed));
        let scaled = y.scaled(c);
        prop_assert!(lsd(&y, &y).unwrap().abs() < 1e-12);
        prop_assert!((lsd(&scaled, &y).unwrap() - 2.0 * c.log10()).abs() < 1e-9);
    }

    #[test]
    fn frechet_nonnegative_and_zero_on_identity(d in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = || {
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            GaussianStats {
                mean: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                covariance: &a * a.transpose() + DMatrix::identity(d, d) * 0.1,
            }
        };
        let (b, e) = (stats(), stats());
        prop_assert!(frechet_distance(&b, &e).unwrap() >= 0.0);
        prop_assert!(frechet_distance(&b, &b).unwrap() < 1e-8);
    }
}

#[test]
fn multires_gradient_on_short_signals() {
    let w = LossWeights {
        stft_resolutions: vec![8, 16],
        ..LossWeights::default()
    };
    let loss = MultiResLoss::new(&w).unwrap();
    for seed in 0..4 {
        let target = Tensor::new(vec![1, 64], signal(64, seed)).unwrap();
        let targets = loss.target_magnitudes(&target).unwrap();
        let yhat = Tensor::new(vec![1, 64], signal(64, seed + 100)).unwrap();
        let r = check_gradients(&[yhat], |g, v| loss.loss(g, v[0], &targets), 1e-6, 64).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

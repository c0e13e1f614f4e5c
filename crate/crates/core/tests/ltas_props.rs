use bwe_core::audio::AudioBuffer;
use bwe_core::degrade::butterworth_condition;
use bwe_core::filters::{design_butterworth_lowpass, FilterSpec};
use bwe_core::ltas::{all_difference_curves, average_curves, compute_ltas, difference_curve, estimate_cutoff, LtasCurve};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn butterworth_difference_tracks_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = Normal::new(0.0, 0.1).unwrap();
    let clean = AudioBuffer::new((0..22050 * 20).map(|_| n.sample(&mut rng)).collect(), 22050).unwrap();
    let filtered = butterworth_condition(&clean, 3000.0).unwrap();
    let sigma = 1.0 / 48.0;
    let d = difference_curve(&compute_ltas(&filtered, sigma).unwrap(), &compute_ltas(&clean, sigma).unwrap()).unwrap();
    let sos = design_butterworth_lowpass(&FilterSpec::butterworth(3000.0, 22050)).unwrap();
    let mut worst: f64 = 0.0;
    for (f, l) in d.frequencies.iter().zip(&d.levels_db) {
        if (500.0..=8000.0).contains(f) {
            worst = worst.max((l - sos.magnitude_db(*f)).abs());
        }
    }
    assert!(worst <= 1.5, "max deviation {worst} dB");
    let fc = estimate_cutoff(&d).unwrap();
    assert!((fc - 3000.0).abs() <= 150.0, "{fc}");
}

fn curve(levels: &[f64]) -> LtasCurve {
    let f = (0..levels.len()).map(|i| 400.0 + 100.0 * i as f64).collect();
    LtasCurve::new(f, levels.to_vec(), 0.0).unwrap()
}

proptest! {
    #[test]
    fn average_of_all_pairs_matches_direct_sum(
        old in prop::collection::vec(prop::collection::vec(-40.0f64..10.0, 24), 1..4),
        modern in prop::collection::vec(prop::collection::vec(-40.0f64..10.0, 24), 1..4),
    ) {
        let o: Vec<LtasCurve> = old.iter().map(|l| curve(l)).collect();
        let m: Vec<LtasCurve> = modern.iter().map(|l| curve(l)).collect();
        let all = all_difference_curves(&o, &m).unwrap();
        prop_assert_eq!(all.len(), o.len() * m.len());
        let avg = average_curves(&all).unwrap();
        // grid points 1..=16 lie in [500, 2000] Hz
        for i in 0..24 {
            let mut total = 0.0;
            for a in &old {
                for b in &modern {
                    let off: f64 = (1..=16).map(|k| a[k] - b[k]).sum::<f64>() / 16.0;
                    total += a[i] - b[i] - off;
                }
            }
            let want = total / (old.len() * modern.len()) as f64;
            prop_assert!((avg.levels_db[i] - want).abs() < 1e-9);
        }
    }
}

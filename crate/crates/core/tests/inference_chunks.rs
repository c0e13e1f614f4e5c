use bwe_core::audio::{AudioBuffer, MODEL_RATE};
use bwe_core::generator::{Generator, GeneratorConfig};
use bwe_core::inference::{ChunkLayout, Restorer};
use bwe_core::synth::piano_clip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn chunked_matches_single_pass_away_from_boundaries() {
    let gen = Generator::new(GeneratorConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let r = Restorer::new(gen);
    let x: AudioBuffer = piano_clip(12.0, 5);
    let layout = ChunkLayout::new(5.0, 0.5, r.alignment()).unwrap();
    let whole = r.process(&x).unwrap();
    let chunked = r.process_chunked(&x, layout).unwrap();
    assert_eq!(chunked.len(), x.len());

    let margin = MODEL_RATE as usize / 2;
    let mut edges = Vec::new();
    let mut s = 0;
    while s < x.len() {
        edges.push(s);
        edges.push((s + layout.chunk).min(x.len()));
        s += layout.step;
    }
    let (mut err, mut sig, mut kept) = (0.0, 0.0, 0usize);
    for i in 0..x.len() {
        if edges.iter().any(|&e| i + margin > e && i < e + margin + layout.overlap) {
            continue;
        }
        let (a, b) = (whole.samples()[i], chunked.samples()[i]);
        err += (a - b).powi(2);
        sig += a * a;
        kept += 1;
    }
    assert!(kept > x.len() / 3, "only {kept} samples compared");
    let ratio_db = 10.0 * (err / sig).log10();
    assert!(ratio_db <= -40.0, "{ratio_db} dB");
}

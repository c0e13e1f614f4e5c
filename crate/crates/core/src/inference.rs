//! Restoration pipeline: optional external denoiser, resampling, optional
//! noise injection and chunked bandwidth extension.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_audio, resample, write_wav, AudioBuffer, WavEncoding, MODEL_RATE};
use crate::degrade::{add_noise, NoiseSpec};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::stft::{istft_with, stft_with, StftPlan};
use crate::trainer::load_generator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub checkpoint: PathBuf,
    /// Shell command run as `sh -c`; `{input}` and `{output}` are replaced by
    /// WAV paths.
    pub denoiser_cmd: Option<String>,
    pub chunk_seconds: f64,
    pub overlap_seconds: f64,
    pub inference_noise: Option<NoiseSpec>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: checkpoint.into(),
            denoiser_cmd: None,
            chunk_seconds: 5.0,
            overlap_seconds: 0.5,
            inference_noise: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_seconds >= 0.0 && self.chunk_seconds > 2.0 * self.overlap_seconds) || !self.chunk_seconds.is_finite() {
            return Err(Error::Config(format!(
                "need chunk_seconds > 2 * overlap_seconds >= 0, got {} and {}",
                self.chunk_seconds, self.overlap_seconds
            )));
        }
        if let Some(n) = &self.inference_noise {
            n.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// Chunk layout in samples; `step` is a multiple of the generator's frame
/// alignment so every chunk sees the same STFT and pooling grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    pub chunk: usize,
    pub overlap: usize,
    pub step: usize,
}

impl ChunkLayout {
    pub fn new(chunk_seconds: f64, overlap_seconds: f64, align: usize) -> Result<Self> {
        let fs = MODEL_RATE as f64;
        let overlap = (overlap_seconds * fs).round() as usize;
        let raw_step = ((chunk_seconds - overlap_seconds) * fs).round() as usize;
        let step = (raw_step / align) * align;
        if step == 0 || step <= overlap {
            return Err(Error::Config(format!(
                "chunk of {chunk_seconds} s is too short for overlap {overlap_seconds} s at alignment {align}"
            )));
        }
        Ok(Self {
            chunk: step + overlap,
            overlap,
            step,
        })
    }
}

pub struct Restorer {
    gen: Generator,
    plan: StftPlan,
}

impl Restorer {
    pub fn new(gen: Generator) -> Self {
        Self {
            gen,
            plan: StftPlan::model(),
        }
    }

    pub fn from_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(load_generator(path)?))
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    /// Samples per aligned block: one hop per frame, `2^depth` frames.
    pub fn alignment(&self) -> usize {
        self.plan.hop() << self.gen.config().depth
    }

    /// Runs the generator on the whole signal at once.
    pub fn process(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        if x.sample_rate() != MODEL_RATE {
            return Err(Error::arg(format!("generator runs at {MODEL_RATE} Hz, got {}", x.sample_rate())));
        }
        let s = stft_with(&self.plan, x)?;
        istft_with(&self.plan, &self.gen.forward(&s)?, x.len())
    }

    /// Overlapping chunks joined with a linear crossfade.
    pub fn process_chunked(&self, x: &AudioBuffer, layout: ChunkLayout) -> Result<AudioBuffer> {
        let n = x.len();
        if n <= layout.chunk {
            return self.process(x);
        }
        let mut out = vec![0.0; n];
        let mut start = 0;
        loop {
            let len = layout.chunk.min(n - start);
            let y = self.process(&x.slice(start, len)?)?;
            let first = start == 0;
            let last = start + len >= n;
            for (i, v) in y.samples().iter().enumerate() {
                let mut w = 1.0;
                if !first && i < layout.overlap {
                    w = (i as f64 + 0.5) / layout.overlap as f64;
                }
                if !last && i >= layout.step {
                    w = (layout.chunk - i) as f64 / layout.overlap as f64 - 0.5 / layout.overlap as f64;
                }
                out[start + i] += w * v;
            }
            if last {
                break;
            }
            start += layout.step;
        }
        AudioBuffer::new(out, MODEL_RATE)
    }
}

/// Runs the configured denoiser on `x`, returning its output.
pub fn run_denoiser(cmd: &str, x: &AudioBuffer) -> Result<AudioBuffer> {
    let dir = tempfile::tempdir().map_err(|e| Error::Io { path: None, source: e })?;
    let input = dir.path().join("denoise_in.wav");
    let output = dir.path().join("denoise_out.wav");
    write_wav(&input, x, WavEncoding::Float32)?;
    let line = cmd
        .replace("{input}", &input.to_string_lossy())
        .replace("{output}", &output.to_string_lossy());
    let stage_err = |diagnostics: String| Error::Stage {
        stage: "denoiser".into(),
        diagnostics,
    };
    let result = Command::new("sh")
        .arg("-c")
        .arg(&line)
        .output()
        .map_err(|e| stage_err(format!("could not launch `{line}`: {e}")))?;
    if !result.status.success() {
        return Err(stage_err(format!(
            "`{line}` exited with {}: {}",
            result.status,
            String::from_utf8_lossy(&result.stderr).trim()
        )));
    }
    load_audio(&output, x.sample_rate()).map_err(|e| stage_err(format!("reading denoiser output: {e}")))
}

/// Denoise, resample to the model rate and optionally add noise.
pub fn prepare_input(x: &AudioBuffer, cfg: &PipelineConfig) -> Result<AudioBuffer> {
    let x = match &cfg.denoiser_cmd {
        Some(cmd) => run_denoiser(cmd, x)?,
        None => x.clone(),
    };
    let x = resample(&x, MODEL_RATE)?;
    Ok(match &cfg.inference_noise {
        Some(spec) => add_noise(&x, spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
        None => x,
    })
}

/// Restores `x` end to end; the output has the length of `x` at the model rate.
pub fn restore(x: &AudioBuffer, cfg: &PipelineConfig) -> Result<AudioBuffer> {
    cfg.validate()?;
    let restorer = Restorer::from_checkpoint(&cfg.checkpoint)?;
    let prepared = prepare_input(x, cfg)?;
    let layout = ChunkLayout::new(cfg.chunk_seconds, cfg.overlap_seconds, restorer.alignment())?;
    restorer.process_chunked(&prepared, layout)
}

pub fn run_inference(input: impl AsRef<Path>, output: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<AudioBuffer> {
    let path = input.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let x = crate::audio::decode_wav(std::io::BufReader::new(file))?;
    let y = restore(&x, cfg)?;
    write_wav(output, &y, WavEncoding::Float32)?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::trainer::save_generator;

    fn tiny(gain: f64) -> Generator {
        let cfg = GeneratorConfig {
            head_init_gain: gain,
            ..GeneratorConfig::tiny()
        };
        Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    fn signal(len: usize) -> AudioBuffer {
        AudioBuffer::new((0..len).map(|i| 0.3 * (i as f64 * 0.031).sin() + 0.1 * (i as f64 * 0.4).sin()).collect(), MODEL_RATE).unwrap()
    }

    #[test]
    fn config_invariants() {
        let mut c = PipelineConfig::new("x");
        c.validate().unwrap();
        c.overlap_seconds = 2.5;
        assert!(c.validate().is_err());
        c.overlap_seconds = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn layout_is_aligned() {
        let l = ChunkLayout::new(5.0, 0.5, 1024).unwrap();
        assert_eq!(l.step % 1024, 0);
        assert_eq!(l.chunk, l.step + l.overlap);
        assert_eq!(l.overlap, 11025);
    }

    #[test]
    fn zero_head_checkpoint_gives_silence_of_input_length() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("g.ckpt");
        save_generator(&tiny(0.0), &ck).unwrap();
        let input = dir.path().join("in.wav");
        write_wav(&input, &AudioBuffer::new(signal(30_000).samples().to_vec(), 16_000).unwrap(), WavEncoding::Float32).unwrap();
        let out = dir.path().join("out.wav");
        let y = run_inference(&input, &out, &PipelineConfig::new(&ck)).unwrap();
        assert_eq!(y.len(), (30_000usize * 22_050).div_ceil(16_000));
        assert!(y.samples().iter().all(|&v| v == 0.0));
        assert!(out.exists());
    }

    #[test]
    fn denoiser_failure_is_a_stage_error() {
        let err = run_denoiser("echo boom >&2; exit 3", &signal(100)).unwrap_err();
        match err {
            Error::Stage { stage, diagnostics } => {
                assert_eq!(stage, "denoiser");
                assert!(diagnostics.contains("boom"), "{diagnostics}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn denoiser_passthrough() {
        let x = signal(2000);
        let y = run_denoiser("cp {input} {output}", &x).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn inference_noise_level() {
        let mut c = PipelineConfig::new("unused");
        c.inference_noise = Some(NoiseSpec::default());
        c.seed = 3;
        let y = prepare_input(&AudioBuffer::silence(22050 * 4, MODEL_RATE), &c).unwrap();
        assert!((y.rms() / 0.0316 - 1.0).abs() < 0.01, "{}", y.rms());
    }
}

//! Time-domain audio: the mono [`AudioBuffer`], WAV ingest/export, band-limited
//! resampling and fixed-length segmentation.

use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::{bessel_i0, kaiser_beta_for_attenuation};

/// Sample rate the models operate at.
pub const MODEL_RATE: u32 = 22_050;

/// Mono audio at a fixed sample rate, full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate).expect("valid silent buffer")
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Copy of `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| Error::arg(format!("slice {start}+{len} exceeds {}", self.len())))?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Sample encodings accepted by the WAV reader/writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Decodes a PCM WAV stream into mono samples. Stereo is averaged to mono.
///
/// Accepted encodings are 16/24-bit integer PCM and 32-bit float.
pub fn decode_wav<R: Read>(reader: R) -> Result<AudioBuffer> {
    let mut wav = hound::WavReader::new(reader).map_err(wav_err)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Format(format!("{channels} channels (mono or stereo only)")));
    }
    if spec.sample_rate == 0 {
        return Err(Error::Format("sample rate 0".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => wav
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32_768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Int, 24) => wav
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => wav
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::Format(format!("{bits}-bit {fmt:?} samples are not supported")))
        }
    };
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    };
    AudioBuffer::new(mono, spec.sample_rate).map_err(|e| Error::Format(e.to_string()))
}

/// Decodes WAV bytes held in memory.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    decode_wav(Cursor::new(bytes))
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io {
            path: None,
            source: io,
        },
        other => Error::Format(other.to_string()),
    }
}

/// Reads a WAV file, downmixes to mono and resamples to `target_rate`.
pub fn load_audio(path: impl AsRef<Path>, target_rate: u32) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = decode_wav(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    resample(&decoded, target_rate)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    })?;
    for &s in audio.samples() {
        let res = match encoding {
            WavEncoding::Pcm16 => {
                writer.write_sample((s.clamp(-1.0, 1.0) * 32_767.0).round() as i16)
            }
            WavEncoding::Float32 => writer.write_sample(s as f32),
        };
        res.map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Zero crossings of the interpolation kernel on each side, measured at the
/// lower of the two rates.
const RESAMPLE_ZERO_CROSSINGS: f64 = 32.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const RESAMPLE_ROLLOFF: f64 = 0.9;
const RESAMPLE_STOPBAND_DB: f64 = 90.0;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// Returns the input untouched when the rates already match. The output has
/// `ceil(len * target / source)` samples.
pub fn resample(x: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::arg("target sample rate must be positive"));
    }
    let source_rate = x.sample_rate();
    if source_rate == target_rate {
        return Ok(x.clone());
    }
    let input = x.samples();
    let out_len = ((input.len() as u128 * target_rate as u128).div_ceil(source_rate as u128)) as usize;

    // cutoff in cycles per input sample, doubled for the sinc argument
    let ratio = target_rate as f64 / source_rate as f64;
    let cutoff = ratio.min(1.0) * RESAMPLE_ROLLOFF;
    let half_width = RESAMPLE_ZERO_CROSSINGS / cutoff;
    let beta = kaiser_beta_for_attenuation(RESAMPLE_STOPBAND_DB);
    let norm = bessel_i0(beta);

    let kernel = |d: f64| {
        let r = d / half_width;
        if r.abs() > 1.0 {
            return 0.0;
        }
        cutoff * sinc(cutoff * d) * bessel_i0(beta * (1.0 - r * r).sqrt()) / norm
    };

    // output instant n sits at input position n * step + phase / den
    let g = gcd(source_rate as u64, target_rate as u64);
    let (num, den) = (source_rate as u64 / g, target_rate as u64 / g);
    let reach = half_width.ceil() as usize;
    let taps = 2 * reach + 1;
    let table: Option<Vec<f64>> = (den <= 4096).then(|| {
        let mut t = Vec::with_capacity(den as usize * taps);
        for phase in 0..den {
            let frac = phase as f64 / den as f64;
            t.extend((0..taps).map(|j| kernel(frac + reach as f64 - j as f64)));
        }
        t
    });

    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let base = (n * num / den) as isize;
        let phase = (n * num % den) as usize;
        let mut acc = 0.0;
        for j in 0..taps {
            let k = base - reach as isize + j as isize;
            if k < 0 || k as usize >= input.len() {
                continue;
            }
            let w = match &table {
                Some(t) => t[phase * taps + j],
                None => kernel(phase as f64 / den as f64 + reach as f64 - j as f64),
            };
            acc += input[k as usize] * w;
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Splits into consecutive non-overlapping segments of `seconds`; the
/// remainder is dropped.
pub fn segment(x: &AudioBuffer, seconds: f64) -> Result<Vec<AudioBuffer>> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::arg("segment duration must be positive"));
    }
    let len = (seconds * x.sample_rate() as f64).round() as usize;
    if len == 0 {
        return Err(Error::arg("segment shorter than one sample"));
    }
    Ok(x.samples()
        .chunks_exact(len)
        .map(|c| AudioBuffer {
            samples: c.to_vec(),
            sample_rate: x.sample_rate(),
        })
        .collect())
}

//! Spectrogram U-Net with residual dense blocks and frequency-positional
//! input channels.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvGeom, Graph, ParamSet, Tensor, Var};
use crate::stft::{ComplexSpectrogram, MODEL_FFT_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub dense_block_layers: usize,
    pub growth_rate: usize,
    pub freq_embedding_dims: usize,
    pub freq_bins: usize,
    /// Multiplier on the output head's initial weights; 0 gives a zero head.
    pub head_init_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            dense_block_layers: 3,
            growth_rate: 16,
            freq_embedding_dims: 8,
            freq_bins: MODEL_FFT_SIZE / 2 + 1,
            head_init_gain: 0.01,
        }
    }
}

impl GeneratorConfig {
    /// Small network for smoke runs.
    pub fn tiny() -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            dense_block_layers: 2,
            growth_rate: 4,
            freq_embedding_dims: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::arg("depth must be at least 1"));
        }
        if self.base_channels < 2 {
            return Err(Error::arg("base_channels must be at least 2"));
        }
        if self.dense_block_layers == 0 || self.growth_rate == 0 {
            return Err(Error::arg("dense block layer and growth counts must be positive"));
        }
        if self.freq_embedding_dims == 0 || self.freq_embedding_dims % 2 != 0 {
            return Err(Error::arg("freq_embedding_dims must be a positive even number"));
        }
        if !(self.head_init_gain >= 0.0 && self.head_init_gain.is_finite()) {
            return Err(Error::arg("head_init_gain must be finite and non-negative"));
        }
        if self.freq_bins < 2 {
            return Err(Error::arg("freq_bins must be at least 2"));
        }
        if self.depth > 16 {
            return Err(Error::arg("depth is unreasonably large"));
        }
        Ok(())
    }

    /// Stable identifier stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        format!(
            "generator/d{}-c{}-l{}-g{}-e{}-f{}",
            self.depth,
            self.base_channels,
            self.dense_block_layers,
            self.growth_rate,
            self.freq_embedding_dims,
            self.freq_bins
        )
    }

    fn channels(&self, scale: usize) -> usize {
        self.base_channels << scale
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: usize,
    b: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    layers: Vec<ConvLayer>,
    fuse: ConvLayer,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvLayer,
    merge: ConvLayer,
    dense: DenseBlock,
}

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    params: ParamSet,
    input: ConvLayer,
    encoder: Vec<(DenseBlock, ConvLayer)>,
    bottleneck: DenseBlock,
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
}

struct Builder<'a, R: Rng + ?Sized> {
    params: ParamSet,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> ConvLayer {
        let (kh, kw) = geom.kernel;
        let fan_in = cin * kh * kw;
        let w = self.params.push_uniform(format!("{name}.w"), &[cout, cin, kh, kw], fan_in, self.rng);
        let b = self.params.push_uniform(format!("{name}.b"), &[cout], fan_in, self.rng);
        ConvLayer { w, b, geom }
    }

    /// Transposed kernels are stored `[cin, cout, kh, kw]`.
    fn conv_t(&mut self, name: &str, cin: usize, cout: usize, geom: ConvGeom) -> ConvLayer {
        let (kh, kw) = geom.kernel;
        let fan_in = cout * kh * kw;
        let w = self.params.push_uniform(format!("{name}.w"), &[cin, cout, kh, kw], fan_in, self.rng);
        let b = self.params.push_uniform(format!("{name}.b"), &[cout], fan_in, self.rng);
        ConvLayer { w, b, geom }
    }

    fn dense(&mut self, name: &str, channels: usize, cfg: &GeneratorConfig) -> DenseBlock {
        let layers = (0..cfg.dense_block_layers)
            .map(|l| {
                let cin = channels + l * cfg.growth_rate;
                self.conv(&format!("{name}.l{l}"), cin, cfg.growth_rate, ConvGeom::square(3, 1, 1))
            })
            .collect();
        let cat = channels + cfg.dense_block_layers * cfg.growth_rate;
        let fuse = self.conv(&format!("{name}.fuse"), cat, channels, ConvGeom::square(1, 1, 0));
        DenseBlock { layers, fuse }
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder {
            params: ParamSet::new(),
            rng,
        };
        let c0 = cfg.channels(0);
        let input = b.conv("in", 2 + cfg.freq_embedding_dims, c0, ConvGeom::square(3, 1, 1));
        let mut encoder = Vec::new();
        for i in 0..cfg.depth {
            let dense = b.dense(&format!("enc{i}"), cfg.channels(i), &cfg);
            let down = b.conv(&format!("enc{i}.down"), cfg.channels(i), cfg.channels(i + 1), ConvGeom::square(4, 2, 1));
            encoder.push((dense, down));
        }
        let bottleneck = b.dense("mid", cfg.channels(cfg.depth), &cfg);
        let mut decoder = Vec::new();
        for i in (0..cfg.depth).rev() {
            let c = cfg.channels(i);
            let up = b.conv_t(&format!("dec{i}.up"), cfg.channels(i + 1), c, ConvGeom::square(4, 2, 1));
            let merge = b.conv(&format!("dec{i}.merge"), 2 * c, c, ConvGeom::square(3, 1, 1));
            let dense = b.dense(&format!("dec{i}"), c, &cfg);
            decoder.push(DecoderStage { up, merge, dense });
        }
        let head = b.conv("head", c0, 2, ConvGeom::square(3, 1, 1));
        let mut params = b.params;
        for id in [head.w, head.b] {
            params.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v *= cfg.head_init_gain);
        }
        Ok(Self {
            cfg,
            params,
            input,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Bins and frames after padding to a multiple of `2^depth`.
    pub fn padded_extent(&self, frames: usize) -> (usize, usize) {
        let m = 1 << self.cfg.depth;
        (self.cfg.freq_bins.div_ceil(m) * m, frames.div_ceil(m) * m)
    }

    /// `[b, 2 + E, Fp, Tp]` network input: zero-padded planes plus
    /// sinusoids of the bin index.
    pub fn assemble_input(&self, planes: &Tensor) -> Result<Tensor> {
        let s = planes.shape();
        if s.len() != 4 || s[1] != 2 || s[2] != self.cfg.freq_bins {
            return Err(Error::Shape(format!(
                "generator expects [b, 2, {}, t], got {s:?}",
                self.cfg.freq_bins
            )));
        }
        if s[3] == 0 {
            return Err(Error::Shape("spectrogram has no frames".into()));
        }
        let (b, f, t) = (s[0], s[2], s[3]);
        let (fp, tp) = self.padded_extent(t);
        let e = self.cfg.freq_embedding_dims;
        let ch = 2 + e;
        let mut out = Tensor::zeros(&[b, ch, fp, tp]);
        let data = out.data_mut();
        for bi in 0..b {
            for c in 0..2 {
                for k in 0..f {
                    let src = &planes.data()[((bi * 2 + c) * f + k) * t..][..t];
                    data[((bi * ch + c) * fp + k) * tp..][..t].copy_from_slice(src);
                }
            }
            for j in 0..e / 2 {
                let omega = PI * (1u64 << j) as f64 / fp as f64;
                for k in 0..fp {
                    let (sv, cv) = (omega * k as f64).sin_cos();
                    data[((bi * ch + 2 + 2 * j) * fp + k) * tp..][..tp].fill(sv);
                    data[((bi * ch + 3 + 2 * j) * fp + k) * tp..][..tp].fill(cv);
                }
            }
        }
        Ok(out)
    }

    fn conv(g: &mut Graph, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var> {
        g.conv2d(x, p[layer.w], Some(p[layer.b]), layer.geom)
    }

    fn dense(g: &mut Graph, p: &[Var], block: &DenseBlock, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for layer in &block.layers {
            let cat = if feats.len() == 1 { x } else { g.concat(&feats)? };
            let h = Self::conv(g, p, layer, cat)?;
            feats.push(g.elu(h));
        }
        let cat = g.concat(&feats)?;
        let fused = Self::conv(g, p, &block.fuse, cat)?;
        g.add(x, fused)
    }

    /// Builds the forward pass on `g` with parameters already bound as `p`.
    /// `planes` is `[b, 2, F, T]`; the result has the same shape.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], planes: &Tensor) -> Result<Var> {
        let (f, t) = (planes.dim(2), planes.dim(3));
        let x = g.constant(self.assemble_input(planes)?);
        let h = Self::conv(g, p, &self.input, x)?;
        let mut h = g.elu(h);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for (dense, down) in &self.encoder {
            let d = Self::dense(g, p, dense, h)?;
            skips.push(d);
            let y = Self::conv(g, p, down, d)?;
            h = g.elu(y);
        }
        h = Self::dense(g, p, &self.bottleneck, h)?;
        for stage in &self.decoder {
            let skip = skips.pop().expect("one skip per stage");
            let up = g.conv_transpose2d(h, p[stage.up.w], Some(p[stage.up.b]), stage.up.geom)?;
            let up = g.elu(up);
            let cat = g.concat(&[up, skip])?;
            let m = Self::conv(g, p, &stage.merge, cat)?;
            let m = g.elu(m);
            h = Self::dense(g, p, &stage.dense, m)?;
        }
        let out = Self::conv(g, p, &self.head, h)?;
        g.pad_crop(out, f, t)
    }

    /// Inference on a batch `[b, 2, F, T]`.
    pub fn forward_tensor(&self, planes: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward_graph(&mut g, &p, planes)?;
        Ok(g.value(out).clone())
    }

    pub fn forward(&self, s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        let (f, t) = (s.bins(), s.frames());
        let mut data = s.real().to_vec();
        data.extend_from_slice(s.imag());
        let out = self.forward_tensor(&Tensor::new(vec![1, 2, f, t], data)?)?;
        let (re, im) = out.data().split_at(f * t);
        ComplexSpectrogram::new(re.to_vec(), im.to_vec(), t, s.fft_size(), s.hop(), s.sample_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
        cout * cin * k * k + cout
    }

    fn expected_count(c: &GeneratorConfig) -> usize {
        let dense = |ch: usize| {
            let mut n = 0;
            for l in 0..c.dense_block_layers {
                n += conv_params(ch + l * c.growth_rate, c.growth_rate, 3);
            }
            n + conv_params(ch + c.dense_block_layers * c.growth_rate, ch, 1)
        };
        let ch = |i: usize| c.base_channels * 2usize.pow(i as u32);
        let mut n = conv_params(2 + c.freq_embedding_dims, ch(0), 3);
        for i in 0..c.depth {
            n += dense(ch(i)) + conv_params(ch(i), ch(i + 1), 4);
        }
        n += dense(ch(c.depth));
        for i in 0..c.depth {
            n += ch(i + 1) * ch(i) * 16 + ch(i);
            n += conv_params(2 * ch(i), ch(i), 3) + dense(ch(i));
        }
        n + conv_params(ch(0), 2, 3)
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [GeneratorConfig::default(), GeneratorConfig::tiny()] {
            let g = Generator::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(g.param_count(), expected_count(&cfg));
        }
    }

    #[test]
    fn seeded_init() {
        let cfg = GeneratorConfig::tiny();
        let a = Generator::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = Generator::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn invalid_config() {
        let bad = GeneratorConfig {
            depth: 0,
            ..GeneratorConfig::tiny()
        };
        assert!(matches!(Generator::new(bad, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Argument(_))));
    }

    fn random_planes(f: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![1, 2, f, t], (0..2 * f * t).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_preserved_and_deterministic() {
        let g = Generator::new(GeneratorConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for t in [1, 17] {
            let x = random_planes(513, t, t as u64);
            let a = g.forward_tensor(&x).unwrap();
            assert_eq!(a.shape(), &[1, 2, 513, t]);
            assert_eq!(a, g.forward_tensor(&x).unwrap());
        }
        assert!(matches!(g.forward_tensor(&random_planes(512, 4, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_head_outputs_zero() {
        let cfg = GeneratorConfig {
            head_init_gain: 0.0,
            ..GeneratorConfig::tiny()
        };
        let g = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let y = g.forward_tensor(&random_planes(513, 9, 5)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn not_translation_equivariant_in_frequency() {
        let g = Generator::new(GeneratorConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let (f, t, k) = (513, 8, 40);
        let mut x = Tensor::zeros(&[1, 2, f, t]);
        for c in 0..2 {
            for j in 100..140 {
                for n in 0..t {
                    x.data_mut()[(c * f + j) * t + n] = 0.5 + 0.01 * n as f64;
                }
            }
        }
        let mut shifted = Tensor::zeros(&[1, 2, f, t]);
        for c in 0..2 {
            for j in 0..f - k {
                for n in 0..t {
                    shifted.data_mut()[(c * f + j + k) * t + n] = x.data()[(c * f + j) * t + n];
                }
            }
        }
        let a = g.forward_tensor(&x).unwrap();
        let b = g.forward_tensor(&shifted).unwrap();
        let mut max_diff: f64 = 0.0;
        for c in 0..2 {
            for j in 200..300 {
                for n in 0..t {
                    let d = a.data()[(c * f + j) * t + n] - b.data()[(c * f + j + k) * t + n];
                    max_diff = max_diff.max(d.abs());
                }
            }
        }
        assert!(max_diff > 1e-6, "{max_diff}");
    }
}

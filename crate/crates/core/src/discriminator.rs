//! Multi-scale waveform discriminators with weight-normalized grouped
//! strided convolutions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::pooled_len;
use crate::nn::{ConvGeom, Graph, ParamSet, Tensor, Var};

pub const NUM_SCALES: usize = 3;
const MIN_VIEW_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_scales: usize,
    pub layers_per_disc: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub group_size: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_scales: NUM_SCALES,
            layers_per_disc: 7,
            base_channels: 16,
            max_channels: 1024,
            group_size: 4,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny() -> Self {
        Self {
            layers_per_disc: 5,
            base_channels: 4,
            max_channels: 32,
            group_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_scales != NUM_SCALES {
            return Err(Error::arg(format!("num_scales must be {NUM_SCALES}")));
        }
        if self.layers_per_disc < 4 {
            return Err(Error::arg("layers_per_disc must be at least 4"));
        }
        if self.base_channels == 0 || self.group_size == 0 || self.max_channels < self.base_channels {
            return Err(Error::arg("channel counts must be positive and max_channels >= base_channels"));
        }
        if self.base_channels % self.group_size != 0 || self.max_channels % self.group_size != 0 {
            return Err(Error::arg("group_size must divide base_channels and max_channels"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::arg("leaky_slope must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "discriminator/s{}-l{}-c{}-m{}-g{}",
            self.num_scales, self.layers_per_disc, self.base_channels, self.max_channels, self.group_size
        )
    }

    /// `(c_in, c_out, geometry)` per layer.
    fn layout(&self) -> Vec<(usize, usize, ConvGeom)> {
        let mut out = vec![(1, self.base_channels, ConvGeom::line(15, 1, 7, 1))];
        let mut c = self.base_channels;
        for _ in 0..self.layers_per_disc - 3 {
            let next = (c * 4).min(self.max_channels);
            let s = 4;
            out.push((c, next, ConvGeom::line(10 * s + 1, s, 5 * s, c / self.group_size)));
            c = next;
        }
        out.push((c, c, ConvGeom::line(5, 1, 2, 1)));
        out.push((c, 1, ConvGeom::line(3, 1, 1, 1)));
        out
    }

    /// Input samples that influence one output score.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (_, _, g) in self.layout() {
            rf += (g.kernel.1 - 1) * jump;
            jump *= g.stride.1;
        }
        rf
    }

    /// Product of layer strides.
    pub fn total_stride(&self) -> usize {
        self.layout().iter().map(|(_, _, g)| g.stride.1).product()
    }
}

#[derive(Debug, Clone)]
struct Layer {
    v: usize,
    g: usize,
    b: usize,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorEnsemble {
    cfg: DiscriminatorConfig,
    params: ParamSet,
    discs: Vec<Vec<Layer>>,
}

impl DiscriminatorEnsemble {
    pub fn new<R: Rng + ?Sized>(cfg: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut discs = Vec::new();
        for k in 0..cfg.num_scales {
            let mut layers = Vec::new();
            for (i, (cin, cout, geom)) in cfg.layout().into_iter().enumerate() {
                let per = cin / geom.groups;
                let fan_in = per * geom.kernel.1;
                let name = format!("d{k}.l{i}");
                let v = params.push_uniform(format!("{name}.v"), &[cout, per, 1, geom.kernel.1], fan_in, rng);
                let norms: Vec<f64> = params
                    .tensor(v)
                    .data()
                    .chunks(fan_in)
                    .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
                    .collect();
                let g = params.push(format!("{name}.g"), Tensor::new(vec![cout], norms)?);
                let b = params.push_uniform(format!("{name}.b"), &[cout], fan_in, rng);
                layers.push(Layer { v, g, b, geom });
            }
            discs.push(layers);
        }
        Ok(Self { cfg, params, discs })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Direction/magnitude parameter pairs; every kernel in the ensemble is
    /// listed.
    pub fn weight_norm_pairs(&self) -> Vec<(&str, &str)> {
        let names = self.params.names();
        self.discs
            .iter()
            .flatten()
            .map(|l| (names[l.v].as_str(), names[l.g].as_str()))
            .collect()
    }

    /// Score map of discriminator `k` for a `[b, 1, 1, len]` view.
    pub fn score_graph(&self, g: &mut Graph, p: &[Var], k: usize, view: Var) -> Result<Var> {
        let len = *g.value(view).shape().last().expect("4-D view");
        let rf = self.cfg.receptive_field();
        if len < rf {
            return Err(Error::arg(format!("view of {len} samples is shorter than the receptive field {rf}")));
        }
        let layers = &self.discs[k];
        let mut h = view;
        for (i, l) in layers.iter().enumerate() {
            let w = g.weight_norm(p[l.v], p[l.g])?;
            h = g.conv2d(h, w, Some(p[l.b]), l.geom)?;
            if i + 1 < layers.len() {
                h = g.leaky_relu(h, self.cfg.leaky_slope);
            }
        }
        Ok(h)
    }

    /// Score maps at all scales for audio `[b, len]`.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], audio: Var) -> Result<Vec<Var>> {
        let views = views_graph(g, audio)?;
        views
            .into_iter()
            .enumerate()
            .map(|(k, v)| self.score_graph(g, p, k, v))
            .collect()
    }

    /// Score maps of `audio` without gradient tracking.
    pub fn score_maps(&self, audio: &[Vec<f64>]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(batch_tensor(audio)?);
        let maps = self.forward_graph(&mut g, &p, x)?;
        Ok(maps.into_iter().map(|m| g.value(m).clone()).collect())
    }
}

/// Stacks equal-length signals into `[b, len]`.
pub fn batch_tensor(audio: &[Vec<f64>]) -> Result<Tensor> {
    let len = audio.first().map_or(0, Vec::len);
    if audio.iter().any(|a| a.len() != len) {
        return Err(Error::Shape("batch items differ in length".into()));
    }
    Tensor::new(vec![audio.len(), len], audio.concat())
}

/// `[b, len]` -> three `[b, 1, 1, n]` views at full, half and quarter rate.
pub fn views_graph(g: &mut Graph, audio: Var) -> Result<Vec<Var>> {
    let s = g.value(audio).shape().to_vec();
    if s.len() != 2 {
        return Err(Error::Shape(format!("audio batch must be [b, len], got {s:?}")));
    }
    if s[1] < MIN_VIEW_LEN {
        return Err(Error::arg(format!("need at least {MIN_VIEW_LEN} samples, got {}", s[1])));
    }
    let mut views = vec![g.reshape(audio, &[s[0], 1, 1, s[1]])?];
    for _ in 1..NUM_SCALES {
        let last = *views.last().unwrap();
        views.push(g.avg_pool(last)?);
    }
    Ok(views)
}

/// Full-rate signal and its two successive pooled versions.
pub fn multiscale_views(x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() < MIN_VIEW_LEN {
        return Err(Error::arg(format!("need at least {MIN_VIEW_LEN} samples, got {}", x.len())));
    }
    let mut out = vec![x.to_vec()];
    for _ in 1..NUM_SCALES {
        let prev = out.last().unwrap();
        let n = pooled_len(prev.len());
        let pooled = (0..n)
            .map(|i| {
                let lo = (2 * i).saturating_sub(1);
                let hi = (2 * i + 3).min(prev.len());
                prev[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        out.push(pooled);
    }
    Ok(out)
}

//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Nodes are created in topological order by
//! construction, so no sorting is needed.

use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::stft::StftPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    WeightNorm { v: Var, g: Var },
    Elu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    AddScalar { x: Var },
    Square { x: Var },
    Concat { parts: Vec<Var> },
    PadCrop { x: Var },
    Reshape { x: Var },
    AvgPool { x: Var },
    Istft { x: Var, plan: Arc<StftPlan> },
    StftMag { x: Var, plan: Arc<StftPlan>, re: Vec<f64>, im: Vec<f64> },
    SpectralConvergence { mag: Var, target: Arc<Tensor> },
    LogMagDistance { mag: Var, target: Arc<Tensor>, eps: f64 },
    Mean { x: Var },
    MeanPerItem { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that gradients are not tracked for.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient [`backward`](Self::backward) will report.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Shape(format!("conv2d on {xs:?} with kernel {ws:?}")));
        }
        if xs[1] % geom.groups != 0 || ws[0] % geom.groups != 0 || ws[1] * geom.groups != xs[1] {
            return Err(Error::Shape(format!(
                "conv2d channels: input {xs:?}, kernel {ws:?}, groups {}",
                geom.groups
            )));
        }
        if (ws[2], ws[3]) != geom.kernel {
            return Err(Error::Shape("kernel extent disagrees with geometry".into()));
        }
        if geom.out_size(xs[2], xs[3]).is_none() {
            return Err(Error::Shape(format!("input {xs:?} smaller than kernel {:?}", geom.kernel)));
        }
        let value = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || geom.groups != 1 {
            return Err(Error::Shape(format!("conv_transpose2d on {xs:?} with kernel {ws:?}")));
        }
        if geom.transposed_size(xs[2], xs[3]).is_none() {
            return Err(Error::Shape("transposed convolution output would be empty".into()));
        }
        let value = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    /// `w = g * v / ||v||`, norm taken per slice along axis 0.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let vt = self.value(v);
        let rows = vt.dim(0);
        if self.value(g).len() != rows {
            return Err(Error::Shape("weight-norm gain must have one entry per output".into()));
        }
        let per = vt.len() / rows;
        let mut out = vt.clone();
        for (r, chunk) in out.data_mut().chunks_mut(per).enumerate() {
            let n = chunk.iter().map(|a| a * a).sum::<f64>().sqrt();
            let s = if n > 0.0 { self.nodes[g.0].value.data()[r] / n } else { 0.0 };
            chunk.iter_mut().for_each(|a| *a *= s);
        }
        let rg = self.rg(v) || self.rg(g);
        Ok(self.push(out, Op::WeightNorm { v, g }, rg))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|a| if a > 0.0 { a } else { a.exp_m1() });
        let rg = self.rg(x);
        self.push(value, Op::Elu { x }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|a| a * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|a| a + c);
        let rg = self.rg(x);
        self.push(value, Op::AddScalar { x }, rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|a| a * a);
        let rg = self.rg(x);
        self.push(value, Op::Square { x }, rg)
    }

    /// Concatenates along axis 1; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::Shape(format!("concat {first:?} with {s:?}")));
            }
            channels += s[1];
        }
        let inner: usize = first[2..].iter().product();
        let batch = first[0];
        let mut shape = first.clone();
        shape[1] = channels;
        let mut data = Vec::with_capacity(batch * channels * inner);
        for bi in 0..batch {
            for &p in parts {
                let t = self.value(p);
                let c = t.dim(1);
                data.extend_from_slice(&t.data()[bi * c * inner..(bi + 1) * c * inner]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Zero-pads or crops the last two axes of a 4-D tensor at their far end.
    pub fn pad_crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 4 {
            return Err(Error::Shape("pad_crop expects a 4-D tensor".into()));
        }
        let (b, c, ih, iw) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
        let mut out = Tensor::zeros(&[b, c, h, w]);
        let (ch, cw) = (ih.min(h), iw.min(w));
        for bc in 0..b * c {
            for y in 0..ch {
                let src = &t.data()[(bc * ih + y) * iw..][..cw];
                out.data_mut()[(bc * h + y) * w..][..cw].copy_from_slice(src);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::PadCrop { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Average pooling along the last axis: kernel 4, stride 2, one sample of
    /// padding per side that is excluded from the average.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let len = *t.shape().last().expect("non-scalar");
        if len < 2 {
            return Err(Error::arg("pooling needs at least 2 samples"));
        }
        let out_len = pooled_len(len);
        let rows = t.len() / len;
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let mut data = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &t.data()[r * len..(r + 1) * len];
            for i in 0..out_len {
                let (lo, hi) = pool_window(i, len);
                data.push(row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::AvgPool { x }, rg))
    }

    /// `[b, 2, bins, frames]` -> `[b, len]` by inverse STFT.
    pub fn istft(&mut self, x: Var, plan: Arc<StftPlan>, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 4 || t.dim(1) != 2 || t.dim(2) != plan.bins() {
            return Err(Error::Shape(format!("istft input {:?}", t.shape())));
        }
        let (b, bins, frames) = (t.dim(0), t.dim(2), t.dim(3));
        let plane = bins * frames;
        let mut data = Vec::with_capacity(b * len);
        for bi in 0..b {
            let re = &t.data()[(2 * bi) * plane..(2 * bi + 1) * plane];
            let im = &t.data()[(2 * bi + 1) * plane..(2 * bi + 2) * plane];
            data.extend(plan.synthesize(re, im, frames, len)?);
        }
        let rg = self.rg(x);
        let value = Tensor::new(vec![b, len], data)?;
        Ok(self.push(value, Op::Istft { x, plan }, rg))
    }

    /// `[b, len]` -> `[b, bins, frames]` STFT magnitudes.
    pub fn stft_magnitude(&mut self, x: Var, plan: Arc<StftPlan>) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("stft input {:?}", t.shape())));
        }
        let (b, len) = (t.dim(0), t.dim(1));
        let frames = plan.num_frames(len);
        let plane = plan.bins() * frames;
        let mut re = Vec::with_capacity(b * plane);
        let mut im = Vec::with_capacity(b * plane);
        for bi in 0..b {
            let (r, i) = plan.analyze(&t.data()[bi * len..(bi + 1) * len])?;
            re.extend(r);
            im.extend(i);
        }
        let mag = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect();
        let value = Tensor::new(vec![b, plan.bins(), frames], mag)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::StftMag { x, plan, re, im }, rg))
    }

    /// Per-item `||T - M||_F / ||T||_F`, giving `[b]`.
    pub fn spectral_convergence(&mut self, mag: Var, target: Arc<Tensor>) -> Result<Var> {
        let m = self.value(mag);
        if m.shape() != target.shape() {
            return Err(Error::Shape(format!("{:?} vs target {:?}", m.shape(), target.shape())));
        }
        let b = m.dim(0);
        let per = m.len() / b;
        let mut out = Vec::with_capacity(b);
        for bi in 0..b {
            let mm = &m.data()[bi * per..(bi + 1) * per];
            let tt = &target.data()[bi * per..(bi + 1) * per];
            out.push(crate::losses::spectral_convergence_slices(tt, mm)?);
        }
        let rg = self.rg(mag);
        Ok(self.push(Tensor::new(vec![b], out)?, Op::SpectralConvergence { mag, target }, rg))
    }

    /// Per-item mean absolute log-magnitude difference with floor `eps`.
    pub fn log_magnitude_distance(&mut self, mag: Var, target: Arc<Tensor>, eps: f64) -> Result<Var> {
        let m = self.value(mag);
        if m.shape() != target.shape() {
            return Err(Error::Shape(format!("{:?} vs target {:?}", m.shape(), target.shape())));
        }
        let b = m.dim(0);
        let per = m.len() / b;
        let out = (0..b)
            .map(|bi| {
                crate::losses::log_magnitude_distance_slices(
                    &target.data()[bi * per..(bi + 1) * per],
                    &m.data()[bi * per..(bi + 1) * per],
                    eps,
                )
            })
            .collect();
        let rg = self.rg(mag);
        Ok(self.push(Tensor::new(vec![b], out)?, Op::LogMagDistance { mag, target, eps }, rg))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        let rg = self.rg(x);
        self.push(value, Op::Mean { x }, rg)
    }

    /// Mean over every axis but the first, giving `[b]`.
    pub fn mean_per_item(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let b = t.dim(0);
        let per = t.len() / b;
        let data = t.data().chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![b], data).expect("consistent"), Op::MeanPerItem { x }, rg)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = conv::conv2d_backward(self.value(*x), self.value(*w), gy, geom, self.rg(*x), self.rg(*w));
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.acc(grads, *w, gw);
                }
                if let Some(b) = b {
                    self.acc(grads, *b, gb);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (gx, gw, gb) =
                    conv::conv_transpose2d_backward(self.value(*x), self.value(*w), gy, geom, self.rg(*x), self.rg(*w));
                if let Some(gx) = gx {
                    self.acc(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.acc(grads, *w, gw);
                }
                if let Some(b) = b {
                    self.acc(grads, *b, gb);
                }
            }
            Op::WeightNorm { v, g } => {
                let vt = self.value(*v);
                let gt = self.value(*g);
                let rows = vt.dim(0);
                let per = vt.len() / rows;
                let mut gv = Tensor::zeros(vt.shape());
                let mut gg = Tensor::zeros(gt.shape());
                for r in 0..rows {
                    let vr = &vt.data()[r * per..(r + 1) * per];
                    let dr = &gy.data()[r * per..(r + 1) * per];
                    let n = vr.iter().map(|a| a * a).sum::<f64>().sqrt();
                    if n == 0.0 {
                        continue;
                    }
                    let proj: f64 = vr.iter().zip(dr).map(|(a, d)| a * d).sum::<f64>() / n;
                    gg.data_mut()[r] = proj;
                    let s = gt.data()[r] / n;
                    for ((o, a), d) in gv.data_mut()[r * per..(r + 1) * per].iter_mut().zip(vr).zip(dr) {
                        *o = s * (d - a / n * proj);
                    }
                }
                self.acc(grads, *v, gv);
                self.acc(grads, *g, gg);
            }
            Op::Elu { x } => {
                let mut g = gy.clone();
                for (o, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= 0.0 {
                        *o *= y + 1.0;
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::LeakyRelu { x, slope } => {
                let mut g = gy.clone();
                for (o, xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if *xv <= 0.0 {
                        *o *= slope;
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, gy.clone());
                self.acc(grads, *b, gy.clone());
            }
            Op::Scale { x, factor } => self.acc(grads, *x, gy.map(|g| g * factor)),
            Op::AddScalar { x } => self.acc(grads, *x, gy.clone()),
            Op::Square { x } => {
                let mut g = gy.clone();
                for (o, xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *o *= 2.0 * xv;
                }
                self.acc(grads, *x, g);
            }
            Op::Concat { parts } => {
                let batch = gy.dim(0);
                let inner: usize = gy.shape()[2..].iter().product();
                let total = gy.dim(1);
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let c = t.dim(1);
                    if self.rg(p) {
                        let mut g = Tensor::zeros(t.shape());
                        for bi in 0..batch {
                            let src = &gy.data()[(bi * total + offset) * inner..][..c * inner];
                            g.data_mut()[bi * c * inner..][..c * inner].copy_from_slice(src);
                        }
                        self.acc(grads, p, g);
                    }
                    offset += c;
                }
            }
            Op::PadCrop { x } => {
                let t = self.value(*x);
                let (b, c, ih, iw) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
                let (h, w) = (gy.dim(2), gy.dim(3));
                let (ch, cw) = (ih.min(h), iw.min(w));
                let mut g = Tensor::zeros(t.shape());
                for bc in 0..b * c {
                    for y in 0..ch {
                        let src = &gy.data()[(bc * h + y) * w..][..cw];
                        g.data_mut()[(bc * ih + y) * iw..][..cw].copy_from_slice(src);
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Reshape { x } => {
                let g = gy.clone().reshape(self.value(*x).shape()).expect("same size");
                self.acc(grads, *x, g);
            }
            Op::AvgPool { x } => {
                let t = self.value(*x);
                let len = *t.shape().last().unwrap();
                let out_len = *gy.shape().last().unwrap();
                let mut g = Tensor::zeros(t.shape());
                for (r, grow) in gy.data().chunks(out_len).enumerate() {
                    let row = &mut g.data_mut()[r * len..(r + 1) * len];
                    for (i, gv) in grow.iter().enumerate() {
                        let (lo, hi) = pool_window(i, len);
                        let share = gv / (hi - lo) as f64;
                        row[lo..hi].iter_mut().for_each(|v| *v += share);
                    }
                }
                self.acc(grads, *x, g);
            }
            Op::Istft { x, plan } => {
                let t = self.value(*x);
                let (b, bins, frames) = (t.dim(0), t.dim(2), t.dim(3));
                let len = gy.dim(1);
                let plane = bins * frames;
                let mut g = Tensor::zeros(t.shape());
                for bi in 0..b {
                    let (gr, gi) = plan.synthesize_adjoint(&gy.data()[bi * len..(bi + 1) * len], frames);
                    g.data_mut()[2 * bi * plane..(2 * bi + 1) * plane].copy_from_slice(&gr);
                    g.data_mut()[(2 * bi + 1) * plane..(2 * bi + 2) * plane].copy_from_slice(&gi);
                }
                self.acc(grads, *x, g);
            }
            Op::StftMag { x, plan, re, im } => {
                let t = self.value(*x);
                let (b, len) = (t.dim(0), t.dim(1));
                let plane = node.value.len() / b;
                let mut g = Tensor::zeros(t.shape());
                for bi in 0..b {
                    let range = bi * plane..(bi + 1) * plane;
                    let mut gr = vec![0.0; plane];
                    let mut gi = vec![0.0; plane];
                    for (j, k) in range.enumerate() {
                        let m = node.value.data()[k];
                        if m > 0.0 {
                            gr[j] = gy.data()[k] * re[k] / m;
                            gi[j] = gy.data()[k] * im[k] / m;
                        }
                    }
                    let gx = plan.analyze_adjoint(&gr, &gi, len);
                    g.data_mut()[bi * len..(bi + 1) * len].copy_from_slice(&gx);
                }
                self.acc(grads, *x, g);
            }
            Op::SpectralConvergence { mag, target } => {
                let m = self.value(*mag);
                let b = m.dim(0);
                let per = m.len() / b;
                let mut g = Tensor::zeros(m.shape());
                for bi in 0..b {
                    let r = bi * per..(bi + 1) * per;
                    let (mm, tt) = (&m.data()[r.clone()], &target.data()[r.clone()]);
                    let tn = tt.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dn = mm.iter().zip(tt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    if dn == 0.0 {
                        continue;
                    }
                    let s = gy.data()[bi] / (dn * tn);
                    for ((o, a), t) in g.data_mut()[r].iter_mut().zip(mm).zip(tt) {
                        *o = s * (a - t);
                    }
                }
                self.acc(grads, *mag, g);
            }
            Op::LogMagDistance { mag, target, eps } => {
                let m = self.value(*mag);
                let b = m.dim(0);
                let per = m.len() / b;
                let mut g = Tensor::zeros(m.shape());
                for bi in 0..b {
                    let s = gy.data()[bi] / per as f64;
                    let r = bi * per..(bi + 1) * per;
                    for ((o, a), t) in g.data_mut()[r.clone()]
                        .iter_mut()
                        .zip(&m.data()[r.clone()])
                        .zip(&target.data()[r])
                    {
                        if *a > *eps {
                            let diff = a.ln() - t.max(*eps).ln();
                            if diff != 0.0 {
                                *o = s * diff.signum() / a;
                            }
                        }
                    }
                }
                self.acc(grads, *mag, g);
            }
            Op::Mean { x } => {
                let t = self.value(*x);
                let s = gy.item() / t.len() as f64;
                self.acc(grads, *x, Tensor::full(t.shape(), s));
            }
            Op::MeanPerItem { x } => {
                let t = self.value(*x);
                let b = t.dim(0);
                let per = t.len() / b;
                let mut g = Tensor::zeros(t.shape());
                for (bi, chunk) in g.data_mut().chunks_mut(per).enumerate() {
                    let s = gy.data()[bi] / per as f64;
                    chunk.iter_mut().for_each(|v| *v = s);
                }
                self.acc(grads, *x, g);
            }
        }
    }
}

pub fn pooled_len(len: usize) -> usize {
    (len + 2 - 4) / 2 + 1
}

/// Input range `[lo, hi)` covered by pooled output `i`, padding excluded.
fn pool_window(i: usize, len: usize) -> (usize, usize) {
    let start = (2 * i) as isize - 1;
    let lo = start.max(0) as usize;
    let hi = ((start + 4) as usize).min(len);
    (lo, hi)
}

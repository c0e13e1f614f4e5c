//! Row-blocked direct convolution for stride-1, single-group layers, where
//! unfolding to columns is memory-bound.

use super::conv::ConvGeom;
use super::tensor::Tensor;

pub(crate) fn applies(g: &ConvGeom) -> bool {
    g.stride == (1, 1) && g.groups == 1
}

trait Madd {
    fn madd(a: f64, b: f64, c: f64) -> f64;
}

struct Plain;
impl Madd for Plain {
    #[inline(always)]
    fn madd(a: f64, b: f64, c: f64) -> f64 {
        a * b + c
    }
}

#[cfg(target_arch = "x86_64")]
struct Fused;
#[cfg(target_arch = "x86_64")]
impl Madd for Fused {
    #[inline(always)]
    fn madd(a: f64, b: f64, c: f64) -> f64 {
        a.mul_add(b, c)
    }
}

#[inline(always)]
fn axpy<M: Madd>(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = M::madd(a, *xv, *yv);
    }
}

#[inline(always)]
fn dot<M: Madd>(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for i in 0..8 {
            acc[i] = M::madd(a[i], b[i], acc[i]);
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (a, b) in xr.iter().zip(yr) {
        s = M::madd(*a, *b, s);
    }
    s
}

/// Output columns `[lo, hi)` that read valid input for kernel column `kx`.
#[inline(always)]
fn col_range(ow: usize, w: usize, kx: usize, pw: usize) -> (usize, usize) {
    let lo = pw.saturating_sub(kx);
    let hi = (w + pw).saturating_sub(kx).min(ow);
    (lo, hi.max(lo))
}

struct Dims {
    b: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
}

impl Dims {
    fn new(x: &[usize], wshape: &[usize], g: &ConvGeom) -> Self {
        let (oh, ow) = g.out_size(x[2], x[3]).expect("kernel fits");
        Self {
            b: x[0],
            cin: x[1],
            cout: wshape[0],
            h: x[2],
            w: x[3],
            oh,
            ow,
            kh: g.kernel.0,
            kw: g.kernel.1,
            ph: g.padding.0,
            pw: g.padding.1,
        }
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside.
    #[inline(always)]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy + ky).checked_sub(self.ph).filter(|&iy| iy < self.h)
    }
}

#[inline(always)]
fn forward_impl<M: Madd>(d: &Dims, x: &[f64], wt: &[f64], y: &mut [f64]) {
    let (ip, op) = (d.h * d.w, d.oh * d.ow);
    let ksz = d.kh * d.kw;
    for bi in 0..d.b {
        let xb = &x[bi * d.cin * ip..(bi + 1) * d.cin * ip];
        let yb = &mut y[bi * d.cout * op..(bi + 1) * d.cout * op];
        for oy in 0..d.oh {
            for ky in 0..d.kh {
                let Some(iy) = d.in_row(oy, ky) else { continue };
                for kx in 0..d.kw {
                    let (lo, hi) = col_range(d.ow, d.w, kx, d.pw);
                    if lo >= hi {
                        continue;
                    }
                    let ix = lo + kx - d.pw;
                    for ci in 0..d.cin {
                        let src = &xb[ci * ip + iy * d.w + ix..][..hi - lo];
                        for co in 0..d.cout {
                            let wv = wt[(co * d.cin + ci) * ksz + ky * d.kw + kx];
                            let dst = &mut yb[co * op + oy * d.ow + lo..][..hi - lo];
                            axpy::<M>(wv, src, dst);
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn backward_impl<M: Madd>(d: &Dims, x: &[f64], wt: &[f64], gy: &[f64], gx: Option<&mut [f64]>, gw: Option<&mut [f64]>) {
    let (ip, op) = (d.h * d.w, d.oh * d.ow);
    let ksz = d.kh * d.kw;
    if let Some(gx) = gx {
        for bi in 0..d.b {
            let gyb = &gy[bi * d.cout * op..(bi + 1) * d.cout * op];
            let gxb = &mut gx[bi * d.cin * ip..(bi + 1) * d.cin * ip];
            for oy in 0..d.oh {
                for ky in 0..d.kh {
                    let Some(iy) = d.in_row(oy, ky) else { continue };
                    for kx in 0..d.kw {
                        let (lo, hi) = col_range(d.ow, d.w, kx, d.pw);
                        if lo >= hi {
                            continue;
                        }
                        let ix = lo + kx - d.pw;
                        for ci in 0..d.cin {
                            let dst = &mut gxb[ci * ip + iy * d.w + ix..][..hi - lo];
                            for co in 0..d.cout {
                                let wv = wt[(co * d.cin + ci) * ksz + ky * d.kw + kx];
                                axpy::<M>(wv, &gyb[co * op + oy * d.ow + lo..][..hi - lo], dst);
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(gw) = gw {
        for bi in 0..d.b {
            let xb = &x[bi * d.cin * ip..(bi + 1) * d.cin * ip];
            let gyb = &gy[bi * d.cout * op..(bi + 1) * d.cout * op];
            for oy in 0..d.oh {
                for ky in 0..d.kh {
                    let Some(iy) = d.in_row(oy, ky) else { continue };
                    for kx in 0..d.kw {
                        let (lo, hi) = col_range(d.ow, d.w, kx, d.pw);
                        if lo >= hi {
                            continue;
                        }
                        let ix = lo + kx - d.pw;
                        for ci in 0..d.cin {
                            let src = &xb[ci * ip + iy * d.w + ix..][..hi - lo];
                            for co in 0..d.cout {
                                let g = &gyb[co * op + oy * d.ow + lo..][..hi - lo];
                                gw[(co * d.cin + ci) * ksz + ky * d.kw + kx] += dot::<M>(g, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn forward_fma(d: &Dims, x: &[f64], wt: &[f64], y: &mut [f64]) {
    forward_impl::<Fused>(d, x, wt, y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn backward_fma(d: &Dims, x: &[f64], wt: &[f64], gy: &[f64], gx: Option<&mut [f64]>, gw: Option<&mut [f64]>) {
    backward_impl::<Fused>(d, x, wt, gy, gx, gw)
}

fn has_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    let d = Dims::new(x.shape(), w.shape(), g);
    let mut out = Tensor::zeros(&[d.b, d.cout, d.oh, d.ow]);
    if let Some(bias) = bias {
        let op = d.oh * d.ow;
        for (i, chunk) in out.data_mut().chunks_mut(op).enumerate() {
            chunk.fill(bias.data()[i % d.cout]);
        }
    }
    if has_fma() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: the required CPU features were detected at runtime.
        unsafe {
            forward_fma(&d, x.data(), w.data(), out.data_mut())
        };
    } else {
        forward_impl::<Plain>(&d, x.data(), w.data(), out.data_mut());
    }
    out
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let d = Dims::new(x.shape(), w.shape(), g);
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = Tensor::zeros(&[d.cout]);
    let op = d.oh * d.ow;
    for (i, chunk) in gy.data().chunks(op).enumerate() {
        gb.data_mut()[i % d.cout] += chunk.iter().sum::<f64>();
    }
    let gxs = gx.as_mut().map(|t| t.data_mut());
    let gws = gw.as_mut().map(|t| t.data_mut());
    if has_fma() {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: the required CPU features were detected at runtime.
        unsafe {
            backward_fma(&d, x.data(), w.data(), gy.data(), gxs, gws)
        };
    } else {
        backward_impl::<Plain>(&d, x.data(), w.data(), gy.data(), gxs, gws);
    }
    (gx, gw, gb)
}

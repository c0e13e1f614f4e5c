//! im2col/GEMM kernels for grouped 2-D convolution and its transpose.
//! 1-D convolution is the `kh = 1` special case.

use super::direct;
use super::tensor::Tensor;

/// Kernel size, stride, zero padding and group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: (k, k),
            stride: (stride, stride),
            padding: (padding, padding),
            groups: 1,
        }
    }

    pub fn line(k: usize, stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            kernel: (1, k),
            stride: (1, stride),
            padding: (0, padding),
            groups,
        }
    }

    /// Output extent of the forward convolution, `None` if the kernel does
    /// not fit.
    pub fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return None;
        }
        Some(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }

    /// Output extent of the transposed convolution.
    pub fn transposed_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let oh = ((h - 1) * sh + kh).checked_sub(2 * ph)?;
        let ow = ((w - 1) * sw + kw).checked_sub(2 * pw)?;
        Some((oh, ow))
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, all row-major; `op` transposes when
/// the flag is set. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents checked below.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid output index range along one axis for kernel offset `kk`.
fn valid_range(out: usize, inp: usize, kk: usize, s: usize, p: usize) -> (usize, usize) {
    // i = o*s + kk - p must lie in [0, inp)
    let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
    let hi = if inp + p > kk {
        ((inp + p - kk - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfolds one `[c, h, w]` image into `[c*kh*kw, oh*ow]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, cols: &mut [f64]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let plane = oh * ow;
    cols.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..c {
        let img = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let (ylo, yhi) = valid_range(oh, h, ki, sh, ph);
            for kj in 0..kw {
                let (xlo, xhi) = valid_range(ow, w, kj, sw, pw);
                let row = &mut cols[((ci * kh + ki) * kw + kj) * plane..][..plane];
                for oy in ylo..yhi {
                    let iy = oy * sh + ki - ph;
                    let src = &img[iy * w..(iy + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        let ix0 = xlo + kj - pw;
                        dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * sw + kj - pw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, oh: usize, ow: usize, x: &mut [f64]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let plane = oh * ow;
    for ci in 0..c {
        let img = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            let (ylo, yhi) = valid_range(oh, h, ki, sh, ph);
            for kj in 0..kw {
                let (xlo, xhi) = valid_range(ow, w, kj, sw, pw);
                let row = &cols[((ci * kh + ki) * kw + kj) * plane..][..plane];
                for oy in ylo..yhi {
                    let iy = oy * sh + ki - ph;
                    let dst = &mut img[iy * w..(iy + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in xlo..xhi {
                        dst[ox * sw + kj - pw] += src[ox];
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == (1, 1) && g.stride == (1, 1) && g.padding == (0, 0)
}

fn use_direct(g: &ConvGeom, w: &Tensor) -> bool {
    !is_pointwise(g) && direct::applies(g) && w.dim(0) * w.dim(1) <= 1024
}

/// `x: [b, cin, h, w]`, `w: [cout, cin/groups, kh, kw]`, `bias: [cout]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    if use_direct(g, w) {
        return direct::conv2d(x, w, bias, g);
    }
    let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let cg = cin / g.groups;
    let og = cout / g.groups;
    let (oh, ow) = g.out_size(h, wd).expect("kernel fits");
    let k = cg * g.kernel.0 * g.kernel.1;
    let plane = oh * ow;
    let mut out = Tensor::zeros(&[b, cout, oh, ow]);
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![0.0; k * plane] };
    for bi in 0..b {
        let xb = &x.data()[bi * cin * h * wd..(bi + 1) * cin * h * wd];
        for gi in 0..g.groups {
            let xg = &xb[gi * cg * h * wd..(gi + 1) * cg * h * wd];
            let colref: &[f64] = if is_pointwise(g) {
                xg
            } else {
                im2col(xg, cg, h, wd, g, oh, ow, &mut cols);
                &cols
            };
            let wg = &w.data()[gi * og * k..(gi + 1) * og * k];
            let yo = &mut out.data_mut()[(bi * cout + gi * og) * plane..(bi * cout + (gi + 1) * og) * plane];
            gemm(og, k, plane, wg, false, colref, false, 0.0, yo);
        }
        if let Some(bias) = bias {
            let yb = &mut out.data_mut()[bi * cout * plane..(bi + 1) * cout * plane];
            for (co, chunk) in yb.chunks_mut(plane).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    if use_direct(g, w) {
        return direct::conv2d_backward(x, w, gy, g, need_x, need_w);
    }
    let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let cg = cin / g.groups;
    let og = cout / g.groups;
    let (oh, ow) = (gy.dim(2), gy.dim(3));
    let k = cg * g.kernel.0 * g.kernel.1;
    let plane = oh * ow;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = Tensor::zeros(&[cout]);
    let pointwise = is_pointwise(g);
    let mut cols = vec![0.0; k * plane];
    for bi in 0..b {
        let gyb = &gy.data()[bi * cout * plane..(bi + 1) * cout * plane];
        for (co, chunk) in gyb.chunks(plane).enumerate() {
            gb.data_mut()[co] += chunk.iter().sum::<f64>();
        }
        for gi in 0..g.groups {
            let gyg = &gyb[gi * og * plane..(gi + 1) * og * plane];
            let xoff = bi * cin * h * wd + gi * cg * h * wd;
            if let Some(gw) = gw.as_mut() {
                let xg = &x.data()[xoff..xoff + cg * h * wd];
                let colref: &[f64] = if pointwise {
                    xg
                } else {
                    im2col(xg, cg, h, wd, g, oh, ow, &mut cols);
                    &cols
                };
                let gwg = &mut gw.data_mut()[gi * og * k..(gi + 1) * og * k];
                gemm(og, plane, k, gyg, false, colref, true, 1.0, gwg);
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[gi * og * k..(gi + 1) * og * k];
                let gxg = &mut gx.data_mut()[xoff..xoff + cg * h * wd];
                if pointwise {
                    gemm(k, og, plane, wg, true, gyg, false, 1.0, gxg);
                } else {
                    gemm(k, og, plane, wg, true, gyg, false, 0.0, &mut cols);
                    col2im(&cols, cg, h, wd, g, oh, ow, gxg);
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Transposed convolution, `x: [b, cin, h, w]`, `w: [cin, cout, kh, kw]`,
/// single group.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: &ConvGeom) -> Tensor {
    let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(1);
    let (oh, ow) = g.transposed_size(h, wd).expect("valid transposed geometry");
    let k = cout * g.kernel.0 * g.kernel.1;
    let plane_in = h * wd;
    let plane_out = oh * ow;
    let mut out = Tensor::zeros(&[b, cout, oh, ow]);
    let mut cols = vec![0.0; k * plane_in];
    for bi in 0..b {
        let xb = &x.data()[bi * cin * plane_in..(bi + 1) * cin * plane_in];
        gemm(k, cin, plane_in, w.data(), true, xb, false, 0.0, &mut cols);
        let yb = &mut out.data_mut()[bi * cout * plane_out..(bi + 1) * cout * plane_out];
        col2im(&cols, cout, oh, ow, g, h, wd, yb);
        if let Some(bias) = bias {
            for (co, chunk) in yb.chunks_mut(plane_out).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(1);
    let (oh, ow) = (gy.dim(2), gy.dim(3));
    let k = cout * g.kernel.0 * g.kernel.1;
    let plane_in = h * wd;
    let plane_out = oh * ow;
    let mut gx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut gb = Tensor::zeros(&[cout]);
    let mut cols = vec![0.0; k * plane_in];
    for bi in 0..b {
        let gyb = &gy.data()[bi * cout * plane_out..(bi + 1) * cout * plane_out];
        for (co, chunk) in gyb.chunks(plane_out).enumerate() {
            gb.data_mut()[co] += chunk.iter().sum::<f64>();
        }
        // the transposed conv's adjoint is the ordinary conv of the output grad
        im2col(gyb, cout, oh, ow, g, h, wd, &mut cols);
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx.data_mut()[bi * cin * plane_in..(bi + 1) * cin * plane_in];
            gemm(cin, k, plane_in, w.data(), false, &cols, false, 0.0, gxb);
        }
        if let Some(gw) = gw.as_mut() {
            let xb = &x.data()[bi * cin * plane_in..(bi + 1) * cin * plane_in];
            gemm(cin, plane_in, k, xb, false, &cols, true, 1.0, gw.data_mut());
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
        let (b, cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let cout = w.dim(0);
        let cg = cin / g.groups;
        let og = cout / g.groups;
        let (oh, ow) = g.out_size(h, wd).unwrap();
        let mut out = Tensor::zeros(&[b, cout, oh, ow]);
        for bi in 0..b {
            for co in 0..cout {
                let gi = co / og;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..cg {
                            for ki in 0..g.kernel.0 {
                                for kj in 0..g.kernel.1 {
                                    let iy = (oy * g.stride.0 + ki) as isize - g.padding.0 as isize;
                                    let ix = (ox * g.stride.1 + kj) as isize - g.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((bi * cin + gi * cg + c) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((co * cg + c) * g.kernel.0 + ki) * g.kernel.1 + kj;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn filled(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| (((i as u64 + 1) * 2_654_435_761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        let cases = [
            (ConvGeom::square(3, 1, 1), [2, 4, 7, 6], 6),
            (ConvGeom::square(4, 2, 1), [1, 3, 8, 6], 5),
            (ConvGeom::square(1, 1, 0), [2, 3, 4, 5], 2),
            (ConvGeom::line(5, 3, 2, 2), [2, 4, 1, 19], 6),
            (ConvGeom::line(7, 1, 3, 1), [1, 2, 1, 2], 3),
        ];
        for (g, xs, cout) in cases {
            let x = filled(&xs, 1);
            let w = filled(&[cout, xs[1] / g.groups, g.kernel.0, g.kernel.1], 2);
            let fast = conv2d(&x, &w, None, &g);
            let slow = naive_conv(&x, &w, &g);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let g = ConvGeom::square(4, 2, 1);
        let x = filled(&[1, 3, 8, 6], 3);
        let w = filled(&[5, 3, 4, 4], 4);
        let y = conv2d(&x, &w, None, &g);
        let u = filled(y.shape(), 5);
        // <conv(x), u> == <x, convT(u)> with weight laid out [cout, cin] as [in, out] of the transpose
        let xt = conv_transpose2d(&u, &w, None, &g);
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}

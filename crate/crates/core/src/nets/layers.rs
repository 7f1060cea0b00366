//! Layer definitions with explicit forward and backward passes.
//!
//! Convolutions are lowered to matrix products through `im2col` / `col2im`.
//! The stride-2 transposed convolution is the adjoint of a stride-2
//! convolution on an input of twice the size, so it reuses the same lowering
//! with the roles of the two passes exchanged.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Same-padded convolution with stride 2, halving height and width.
    ConvStride2,
    /// Same-padded convolution with stride 1.
    Conv,
    /// Transposed convolution with stride 2, doubling height and width.
    DeconvX2,
    Relu,
    /// Per-pixel softmax over exactly two channels.
    Softmax2,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::ConvStride2 => 0,
            LayerKind::Conv => 1,
            LayerKind::DeconvX2 => 2,
            LayerKind::Relu => 3,
            LayerKind::Softmax2 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::ConvStride2,
            1 => LayerKind::Conv,
            2 => LayerKind::DeconvX2,
            3 => LayerKind::Relu,
            4 => LayerKind::Softmax2,
            _ => return None,
        })
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::ConvStride2 | LayerKind::Conv | LayerKind::DeconvX2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub filter: usize,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, filter: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            filter,
        }
    }

    pub fn conv_s2(in_ch: usize, out_ch: usize, filter: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ConvStride2,
            in_ch,
            out_ch,
            filter,
        }
    }

    pub fn deconv(in_ch: usize, out_ch: usize, filter: usize) -> Self {
        LayerSpec {
            kind: LayerKind::DeconvX2,
            in_ch,
            out_ch,
            filter,
        }
    }

    pub fn relu(ch: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Relu,
            in_ch: ch,
            out_ch: ch,
            filter: 1,
        }
    }

    pub fn softmax2() -> Self {
        LayerSpec {
            kind: LayerKind::Softmax2,
            in_ch: 2,
            out_ch: 2,
            filter: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_params() && (self.filter % 2 == 0 || self.in_ch == 0 || self.out_ch == 0) {
            return Err(Error::shape(format!("invalid layer {self:?}: filter must be odd")));
        }
        if self.kind == LayerKind::Softmax2 && self.in_ch != 2 {
            return Err(Error::shape("softmax layer needs two channels"));
        }
        Ok(())
    }

    /// Filter shape. Convolutions use `(out, in, k, k)`; the transposed
    /// convolution uses `(in, out, k, k)`, the layout of the convolution it
    /// is the adjoint of.
    pub fn weight_shape(&self) -> Option<[usize; 4]> {
        let k = self.filter;
        match self.kind {
            LayerKind::Conv | LayerKind::ConvStride2 => Some([self.out_ch, self.in_ch, k, k]),
            LayerKind::DeconvX2 => Some([self.in_ch, self.out_ch, k, k]),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` for weight initialization.
    pub fn fans(&self) -> (usize, usize) {
        let kk = self.filter * self.filter;
        match self.kind {
            LayerKind::DeconvX2 => (self.in_ch * kk / 4, self.out_ch * kk),
            _ => (self.in_ch * kk, self.out_ch * kk),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::ConvStride2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(format!("stride-2 input {h}x{w} must be even")));
                }
                Ok((h / 2, w / 2))
            }
            LayerKind::DeconvX2 => Ok((2 * h, 2 * w)),
            _ => Ok((h, w)),
        }
    }
}

// ---------------------------------------------------------------------------
// Lowering

/// Geometry of a convolution from an `(in_c, in_h, in_w)` input to an
/// `(out_h, out_w)` output grid.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn conv(in_c: usize, in_h: usize, in_w: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        Geometry {
            in_c,
            in_h,
            in_w,
            out_h: in_h / stride,
            out_w: in_w / stride,
            k,
            stride,
            pad,
        }
    }

    fn rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// For each kernel offset, the `(out_index, in_index)` ranges along one
    /// axis that land inside the input.
    fn taps(&self, out_len: usize, in_len: usize, offset: usize) -> Vec<(usize, usize)> {
        (0..out_len)
            .filter_map(|o| {
                let i = (o * self.stride + offset) as isize - self.pad as isize;
                (i >= 0 && (i as usize) < in_len).then_some((o, i as usize))
            })
            .collect()
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        let n = self.cols();
        for ky in 0..self.k {
            let ys = self.taps(self.out_h, self.in_h, ky);
            for kx in 0..self.k {
                let xs = self.taps(self.out_w, self.in_w, kx);
                for c in 0..self.in_c {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let src = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
                    for &(oy, iy) in &ys {
                        let d = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        let s = &src[iy * self.in_w..(iy + 1) * self.in_w];
                        for &(ox, ix) in &xs {
                            d[ox] = s[ix];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of `im2col`: accumulate columns back into the input grid.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        let n = self.cols();
        for ky in 0..self.k {
            let ys = self.taps(self.out_h, self.in_h, ky);
            for kx in 0..self.k {
                let xs = self.taps(self.out_w, self.in_w, kx);
                for c in 0..self.in_c {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    let dst = &mut x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
                    for &(oy, iy) in &ys {
                        let s = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let d = &mut dst[iy * self.in_w..(iy + 1) * self.in_w];
                        for &(ox, ix) in &xs {
                            d[ix] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where
/// `op` optionally transposes. `a` is `m x k` after `op`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
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
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the slice lengths above cover every index addressed by the
    // given dimensions and strides.
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

// ---------------------------------------------------------------------------
// Forward and backward

/// Per-layer state kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Saved {
    Input(Tensor),
    /// Relu: which outputs were positive.
    Active(Vec<bool>),
    /// Softmax: the output probabilities.
    Output(Tensor),
}

pub(crate) fn forward(
    spec: &LayerSpec,
    weight: Option<&Tensor>,
    bias: Option<&Tensor>,
    x: &Tensor,
    keep: bool,
) -> Result<(Tensor, Option<Saved>)> {
    let (c, h, w) = x.chw()?;
    if c != spec.in_ch {
        return Err(Error::shape(format!(
            "layer {:?} expects {} channels, got {c}",
            spec.kind, spec.in_ch
        )));
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    match spec.kind {
        LayerKind::Conv | LayerKind::ConvStride2 => {
            let (wt, b) = (weight.expect("conv weight"), bias.expect("conv bias"));
            let stride = if spec.kind == LayerKind::Conv { 1 } else { 2 };
            let g = Geometry::conv(c, h, w, spec.filter, stride);
            let mut cols = vec![0.0; g.rows() * g.cols()];
            g.im2col(&x.data, &mut cols);
            let mut y = Tensor::zeros(&[spec.out_ch, oh, ow]);
            fill_bias(&mut y.data, &b.data, oh * ow);
            gemm(spec.out_ch, g.rows(), g.cols(), &wt.data, false, &cols, false, 1.0, &mut y.data);
            Ok((y, keep.then(|| Saved::Input(x.clone()))))
        }
        LayerKind::DeconvX2 => {
            let (wt, b) = (weight.expect("deconv weight"), bias.expect("deconv bias"));
            let g = Geometry::conv(spec.out_ch, oh, ow, spec.filter, 2);
            let mut cols = vec![0.0; g.rows() * g.cols()];
            // cols = W^T x, with W of shape (in, out * k * k).
            gemm(g.rows(), spec.in_ch, h * w, &wt.data, true, &x.data, false, 0.0, &mut cols);
            let mut y = Tensor::zeros(&[spec.out_ch, oh, ow]);
            g.col2im(&cols, &mut y.data);
            add_bias(&mut y.data, &b.data, oh * ow);
            Ok((y, keep.then(|| Saved::Input(x.clone()))))
        }
        LayerKind::Relu => {
            let active: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
            let y = Tensor {
                shape: x.shape.clone(),
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
            };
            Ok((y, keep.then_some(Saved::Active(active))))
        }
        LayerKind::Softmax2 => {
            let n = h * w;
            let mut y = x.clone();
            let (z0, z1) = x.data.split_at(n);
            let (p0, p1) = y.data.split_at_mut(n);
            for i in 0..n {
                let m = z0[i].max(z1[i]);
                let (e0, e1) = ((z0[i] - m).exp(), (z1[i] - m).exp());
                let s = e0 + e1;
                p0[i] = e0 / s;
                p1[i] = e1 / s;
            }
            let saved = keep.then(|| Saved::Output(y.clone()));
            Ok((y, saved))
        }
    }
}

fn fill_bias(y: &mut [f64], b: &[f64], plane: usize) {
    for (ch, &bv) in b.iter().enumerate() {
        y[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v = bv);
    }
}

fn add_bias(y: &mut [f64], b: &[f64], plane: usize) {
    for (ch, &bv) in b.iter().enumerate() {
        y[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v += bv);
    }
}

/// Returns the gradient with respect to the layer input and accumulates
/// parameter gradients into `dw` / `db`.
pub(crate) fn backward(
    spec: &LayerSpec,
    weight: Option<&Tensor>,
    saved: &Saved,
    dy: &Tensor,
    dw: Option<&mut Tensor>,
    db: Option<&mut Tensor>,
) -> Result<Tensor> {
    match (spec.kind, saved) {
        (LayerKind::Conv | LayerKind::ConvStride2, Saved::Input(x)) => {
            let (c, h, w) = x.chw()?;
            let wt = weight.expect("conv weight");
            let stride = if spec.kind == LayerKind::Conv { 1 } else { 2 };
            let g = Geometry::conv(c, h, w, spec.filter, stride);
            let (m, n) = (spec.out_ch, g.cols());
            let mut cols = vec![0.0; g.rows() * n];
            g.im2col(&x.data, &mut cols);
            if let Some(dw) = dw {
                gemm(m, n, g.rows(), &dy.data, false, &cols, true, 1.0, &mut dw.data);
            }
            if let Some(db) = db {
                accumulate_bias(&mut db.data, &dy.data, n);
            }
            gemm(g.rows(), m, n, &wt.data, true, &dy.data, false, 0.0, &mut cols);
            let mut dx = Tensor::zeros(&[c, h, w]);
            g.col2im(&cols, &mut dx.data);
            Ok(dx)
        }
        (LayerKind::DeconvX2, Saved::Input(x)) => {
            let (c, h, w) = x.chw()?;
            let wt = weight.expect("deconv weight");
            let (oh, ow) = (2 * h, 2 * w);
            let g = Geometry::conv(spec.out_ch, oh, ow, spec.filter, 2);
            let mut cols = vec![0.0; g.rows() * g.cols()];
            g.im2col(&dy.data, &mut cols);
            if let Some(dw) = dw {
                gemm(c, h * w, g.rows(), &x.data, false, &cols, true, 1.0, &mut dw.data);
            }
            if let Some(db) = db {
                accumulate_bias(&mut db.data, &dy.data, oh * ow);
            }
            let mut dx = Tensor::zeros(&[c, h, w]);
            gemm(c, g.rows(), h * w, &wt.data, false, &cols, false, 0.0, &mut dx.data);
            Ok(dx)
        }
        (LayerKind::Relu, Saved::Active(active)) => Ok(Tensor {
            shape: dy.shape.clone(),
            data: dy
                .data
                .iter()
                .zip(active)
                .map(|(&g, &a)| if a { g } else { 0.0 })
                .collect(),
        }),
        (LayerKind::Softmax2, Saved::Output(p)) => {
            let n = p.len() / 2;
            let mut dz = dy.clone();
            for i in 0..n {
                let (p0, p1) = (p.data[i], p.data[n + i]);
                let dot = p0 * dy.data[i] + p1 * dy.data[n + i];
                dz.data[i] = p0 * (dy.data[i] - dot);
                dz.data[n + i] = p1 * (dy.data[n + i] - dot);
            }
            Ok(dz)
        }
        _ => Err(Error::shape(format!("no saved state for layer {:?}", spec.kind))),
    }
}

fn accumulate_bias(db: &mut [f64], dy: &[f64], plane: usize) {
    for (ch, g) in db.iter_mut().enumerate() {
        *g += dy[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(spec: &LayerSpec, w: Vec<f64>, b: Vec<f64>) -> (Tensor, Tensor) {
        let ws = spec.weight_shape().unwrap();
        (Tensor::new(ws.to_vec(), w).unwrap(), Tensor::new(vec![spec.out_ch], b).unwrap())
    }

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let spec = LayerSpec::conv(1, 1, 1);
        let (w, b) = params(&spec, vec![1.0], vec![0.0]);
        let x = ramp(&[1, 4, 5]);
        let (y, _) = forward(&spec, Some(&w), Some(&b), &x, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let spec = LayerSpec::conv(2, 3, 3);
        let (w, b) = params(&spec, vec![0.0; 54], vec![1.5, -2.0, 0.25]);
        let (y, _) = forward(&spec, Some(&w), Some(&b), &ramp(&[2, 4, 4]), false).unwrap();
        assert!(y.data[..16].iter().all(|&v| v == 1.5));
        assert!(y.data[16..32].iter().all(|&v| v == -2.0));
        assert!(y.data[32..].iter().all(|&v| v == 0.25));
    }

    #[test]
    fn averaging_kernel_keeps_constant_interior() {
        let spec = LayerSpec::conv(1, 1, 3);
        let (w, b) = params(&spec, vec![1.0 / 9.0; 9], vec![0.0]);
        let x = Tensor::filled(&[1, 5, 5], 4.0);
        let (y, _) = forward(&spec, Some(&w), Some(&b), &x, false).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((y.data[yy * 5 + xx] - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves() {
        let spec = LayerSpec::conv_s2(1, 2, 3);
        let (w, b) = params(&spec, vec![0.1; 18], vec![0.0, 0.0]);
        let (y, _) = forward(&spec, Some(&w), Some(&b), &ramp(&[1, 8, 6]), false).unwrap();
        assert_eq!(y.shape, vec![2, 4, 3]);
        assert!(forward(&spec, Some(&w), Some(&b), &ramp(&[1, 7, 6]), false).is_err());
    }

    #[test]
    fn deconv_doubles_and_clips_through_relu() {
        let spec = LayerSpec::deconv(1, 16, 5);
        let (w, b) = params(&spec, vec![0.0; 400], vec![-1.0; 16]);
        let (y, _) = forward(&spec, Some(&w), Some(&b), &ramp(&[1, 8, 8]), false).unwrap();
        assert_eq!(y.shape, vec![16, 16, 16]);
        let (r, _) = forward(&LayerSpec::relu(16), None, None, &y, false).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let spec = LayerSpec::conv(2, 1, 1);
        let (w, b) = params(&spec, vec![1.0, 1.0], vec![0.0]);
        assert!(matches!(
            forward(&spec, Some(&w), Some(&b), &ramp(&[3, 2, 2]), false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_of_equal_logits_is_half() {
        let x = Tensor::filled(&[2, 3, 3], 0.7);
        let (y, _) = forward(&LayerSpec::softmax2(), None, None, &x, false).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.5));
    }

    /// Finite-difference check of one parameterised layer under the loss
    /// `sum(y * r)` for a fixed random `r`.
    fn check_layer(spec: LayerSpec, in_shape: &[usize]) {
        let ws = spec.weight_shape().unwrap();
        let nw: usize = ws.iter().product();
        let mut w = Tensor::new(ws.to_vec(), (0..nw).map(|i| ((i * 7 % 13) as f64 - 6.0) / 10.0).collect()).unwrap();
        let b = Tensor::new(vec![spec.out_ch], (0..spec.out_ch).map(|i| i as f64 * 0.1).collect()).unwrap();
        let x = ramp(in_shape);
        let (y, saved) = forward(&spec, Some(&w), Some(&b), &x, true).unwrap();
        let r = Tensor::new(y.shape.clone(), (0..y.len()).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let loss = |w: &Tensor, x: &Tensor| -> f64 {
            let (y, _) = forward(&spec, Some(w), Some(&b), x, false).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let mut dw = w.zeros_like();
        let mut db = b.zeros_like();
        let dx = backward(&spec, Some(&w), &saved.unwrap(), &r, Some(&mut dw), Some(&mut db)).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let orig = w.data[i];
            w.data[i] = orig + h;
            let lp = loss(&w, &x);
            w.data[i] = orig - h;
            let lm = loss(&w, &x);
            w.data[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - dw.data[i]).abs() <= 1e-7 * (1.0 + num.abs()), "w[{i}]: {num} vs {}", dw.data[i]);
        }
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp.data[i] = x.data[i] + h;
            let lp = loss(&w, &xp);
            xp.data[i] = x.data[i] - h;
            let lm = loss(&w, &xp);
            xp.data[i] = x.data[i];
            let num = (lp - lm) / (2.0 * h);
            assert!((num - dx.data[i]).abs() <= 1e-7 * (1.0 + num.abs()), "x[{i}]: {num} vs {}", dx.data[i]);
        }
        let plane = y.len() / spec.out_ch;
        for c in 0..spec.out_ch {
            let want: f64 = r.data[c * plane..(c + 1) * plane].iter().sum();
            assert!((db.data[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_layer(LayerSpec::conv(2, 3, 3), &[2, 5, 4]);
        check_layer(LayerSpec::conv_s2(2, 2, 3), &[2, 6, 4]);
        check_layer(LayerSpec::conv(3, 2, 5), &[3, 4, 4]);
    }

    #[test]
    fn deconv_gradients_match_finite_differences() {
        check_layer(LayerSpec::deconv(2, 3, 5), &[2, 3, 4]);
        check_layer(LayerSpec::deconv(1, 2, 3), &[1, 2, 2]);
    }
}

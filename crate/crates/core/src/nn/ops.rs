//! Stateless forward and backward kernels.
//!
//! Convolutions are lowered to GEMM through an explicit im2col buffer per
//! sample. Samples inside a batch are processed in order, so gradient sums
//! are reduced in a fixed sequence.

use super::scalar::matmul;
use super::{NnError, Scalar, Tensor};

fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}

/// Geometry of a plain convolution `[c, h, w] → [·, out_h, out_w]`.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(
        channels: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self, NnError> {
        if stride == 0 {
            return Err(shape_err("stride must be positive"));
        }
        let padded_h = h + 2 * pad;
        let padded_w = w + 2 * pad;
        if padded_h < kh || padded_w < kw {
            return Err(shape_err(format!(
                "{h}x{w} input with padding {pad} is smaller than the {kh}x{kw} kernel"
            )));
        }
        Ok(ConvGeometry {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            out_h: (padded_h - kh) / stride + 1,
            out_w: (padded_w - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output `(i, j)` and kernel tap `(u, v)`, if inside.
    #[inline]
    fn source(&self, i: usize, j: usize, u: usize, v: usize) -> Option<usize> {
        let y = (i * self.stride + u).checked_sub(self.pad)?;
        let x = (j * self.stride + v).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    /// `cols[(c,u,v), (i,j)] = image[c, i·s+u-p, j·s+v-p]`.
    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let plane = self.h * self.w;
        let pixels = self.out_pixels();
        for c in 0..self.channels {
            let src = &image[c * plane..(c + 1) * plane];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = ((c * self.kh + u) * self.kw + v) * pixels;
                    let dst = &mut cols[row..row + pixels];
                    for i in 0..self.out_h {
                        for j in 0..self.out_w {
                            dst[i * self.out_w + j] = match self.source(i, j, u, v) {
                                Some(idx) => src[idx],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds columns back onto the image.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let plane = self.h * self.w;
        let pixels = self.out_pixels();
        for c in 0..self.channels {
            let dst = &mut image[c * plane..(c + 1) * plane];
            for u in 0..self.kh {
                for v in 0..self.kw {
                    let row = ((c * self.kh + u) * self.kw + v) * pixels;
                    let src = &cols[row..row + pixels];
                    for i in 0..self.out_h {
                        for j in 0..self.out_w {
                            if let Some(idx) = self.source(i, j, u, v) {
                                dst[idx] = dst[idx] + src[i * self.out_w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank<T: Scalar>(t: &Tensor<T>, rank: usize, what: &str) -> Result<(), NnError> {
    if t.rank() != rank {
        return Err(shape_err(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, channels: usize) -> Result<(), NnError> {
    if bias.shape() != [channels] {
        return Err(shape_err(format!(
            "bias shape {:?} does not match {channels} channels",
            bias.shape()
        )));
    }
    Ok(())
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn channel_sums<T: Scalar>(upstream: &[T], channels: usize, plane: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); channels];
    for (idx, chunk) in upstream.chunks_exact(plane).enumerate() {
        let c = idx % channels;
        sums[c] = sums[c] + chunk.iter().copied().sum::<T>();
    }
    sums
}

/// Gradients of a parameterized layer.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn conv2d_geometry<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGeometry, NnError> {
    expect_rank(input, 4, "conv2d input")?;
    expect_rank(weights, 4, "conv2d weights")?;
    let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let ws = weights.shape();
    if ws[1] != c {
        return Err(shape_err(format!(
            "conv2d input has {c} channels, weights expect {}",
            ws[1]
        )));
    }
    ConvGeometry::new(c, h, w, ws[2], ws[3], stride, padding)
}

/// `out[n,f,i,j] = bias[f] + Σ_{c,u,v} input[n,c,i·s+u-p, j·s+v-p] · weights[f,c,u,v]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let g = conv2d_geometry(input, weights, stride, padding)?;
    let filters = weights.shape()[0];
    check_bias(bias, filters)?;
    let n = input.batch();
    let in_len = input.row_len();
    let out_len = filters * g.out_pixels();
    let mut out = Tensor::zeros(&[n, filters, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    for s in 0..n {
        g.im2col(&input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        matmul(
            weights.data(),
            false,
            &cols,
            false,
            filters,
            g.patch_len(),
            g.out_pixels(),
            dst,
            false,
        );
        add_channel_bias(dst, bias.data(), g.out_pixels());
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    upstream: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ParamGrads<T>, NnError> {
    let g = conv2d_geometry(input, weights, stride, padding)?;
    let filters = weights.shape()[0];
    let n = input.batch();
    if upstream.shape() != [n, filters, g.out_h, g.out_w] {
        return Err(shape_err(format!(
            "conv2d upstream {:?} does not match output [{n}, {filters}, {}, {}]",
            upstream.shape(),
            g.out_h,
            g.out_w
        )));
    }
    let in_len = input.row_len();
    let out_len = filters * g.out_pixels();
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    for s in 0..n {
        let up = &upstream.data()[s * out_len..(s + 1) * out_len];
        g.im2col(&input.data()[s * in_len..(s + 1) * in_len], &mut cols);
        matmul(
            up,
            false,
            &cols,
            true,
            filters,
            g.out_pixels(),
            g.patch_len(),
            grad_weights.data_mut(),
            true,
        );
        matmul(
            weights.data(),
            true,
            up,
            false,
            g.patch_len(),
            filters,
            g.out_pixels(),
            &mut cols,
            false,
        );
        g.col2im(
            &cols,
            &mut grad_input.data_mut()[s * in_len..(s + 1) * in_len],
        );
    }
    let bias = channel_sums(upstream.data(), filters, g.out_pixels());
    Ok(ParamGrads {
        input: grad_input,
        weights: grad_weights,
        bias: Tensor::from_vec(&[filters], bias)?,
    })
}

/// Geometry of the plain convolution this transposed convolution is the
/// adjoint of: it maps the transposed output back onto the transposed input.
fn transpose_geometry<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<ConvGeometry, NnError> {
    expect_rank(input, 4, "conv_transpose2d input")?;
    expect_rank(weights, 4, "conv_transpose2d weights")?;
    let (f, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let ws = weights.shape();
    if ws[0] != f {
        return Err(shape_err(format!(
            "conv_transpose2d input has {f} channels, weights expect {}",
            ws[0]
        )));
    }
    if stride == 0 || output_padding >= stride {
        return Err(shape_err("output padding must be smaller than the stride"));
    }
    let (kh, kw) = (ws[2], ws[3]);
    let out_h = ((h - 1) * stride + kh + output_padding)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("padding leaves no output"))?;
    let out_w = ((w - 1) * stride + kw + output_padding)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| shape_err("padding leaves no output"))?;
    let g = ConvGeometry::new(ws[1], out_h, out_w, kh, kw, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok(g)
}

/// Adjoint of [`conv2d_forward`] sharing its weight layout: weights
/// `[in, out, kh, kw]`, output side `(H-1)·stride - 2·padding + kh + output_padding`.
pub fn conv_transpose2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor<T>, NnError> {
    let g = transpose_geometry(input, weights, stride, padding, output_padding)?;
    let (in_ch, out_ch) = (weights.shape()[0], weights.shape()[1]);
    check_bias(bias, out_ch)?;
    let n = input.batch();
    let in_len = input.row_len();
    let out_len = out_ch * g.h * g.w;
    let mut out = Tensor::zeros(&[n, out_ch, g.h, g.w]);
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    for s in 0..n {
        matmul(
            weights.data(),
            true,
            &input.data()[s * in_len..(s + 1) * in_len],
            false,
            g.patch_len(),
            in_ch,
            g.out_pixels(),
            &mut cols,
            false,
        );
        let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        g.col2im(&cols, dst);
        add_channel_bias(dst, bias.data(), g.h * g.w);
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    upstream: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<ParamGrads<T>, NnError> {
    let g = transpose_geometry(input, weights, stride, padding, output_padding)?;
    let (in_ch, out_ch) = (weights.shape()[0], weights.shape()[1]);
    let n = input.batch();
    if upstream.shape() != [n, out_ch, g.h, g.w] {
        return Err(shape_err(format!(
            "conv_transpose2d upstream {:?} does not match output [{n}, {out_ch}, {}, {}]",
            upstream.shape(),
            g.h,
            g.w
        )));
    }
    let in_len = input.row_len();
    let out_len = out_ch * g.h * g.w;
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
    for s in 0..n {
        g.im2col(&upstream.data()[s * out_len..(s + 1) * out_len], &mut cols);
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        matmul(
            weights.data(),
            false,
            &cols,
            false,
            in_ch,
            g.patch_len(),
            g.out_pixels(),
            &mut grad_input.data_mut()[s * in_len..(s + 1) * in_len],
            false,
        );
        matmul(
            x,
            false,
            &cols,
            true,
            in_ch,
            g.out_pixels(),
            g.patch_len(),
            grad_weights.data_mut(),
            true,
        );
    }
    let bias = channel_sums(upstream.data(), out_ch, g.h * g.w);
    Ok(ParamGrads {
        input: grad_input,
        weights: grad_weights,
        bias: Tensor::from_vec(&[out_ch], bias)?,
    })
}

fn dense_dims<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<(usize, usize, usize), NnError> {
    expect_rank(input, 2, "dense input")?;
    expect_rank(weights, 2, "dense weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, k) = (weights.shape()[0], weights.shape()[1]);
    if wd != d {
        return Err(shape_err(format!(
            "dense input has {d} features, weights expect {wd}"
        )));
    }
    Ok((n, d, k))
}

/// `input [N,D] · weights [D,K] + bias [K]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, d, k) = dense_dims(input, weights)?;
    check_bias(bias, k)?;
    let mut out = Tensor::zeros(&[n, k]);
    matmul(
        input.data(),
        false,
        weights.data(),
        false,
        n,
        d,
        k,
        out.data_mut(),
        false,
    );
    add_channel_bias(out.data_mut(), bias.data(), 1);
    Ok(out)
}

pub fn dense_backward<T: Scalar>(
    upstream: &Tensor<T>,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<ParamGrads<T>, NnError> {
    let (n, d, k) = dense_dims(input, weights)?;
    if upstream.shape() != [n, k] {
        return Err(shape_err(format!(
            "dense upstream {:?} does not match output [{n}, {k}]",
            upstream.shape()
        )));
    }
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    matmul(
        input.data(),
        true,
        upstream.data(),
        false,
        d,
        n,
        k,
        grad_weights.data_mut(),
        false,
    );
    matmul(
        upstream.data(),
        false,
        weights.data(),
        true,
        n,
        k,
        d,
        grad_input.data_mut(),
        false,
    );
    let bias = channel_sums(upstream.data(), k, 1);
    Ok(ParamGrads {
        input: grad_input,
        weights: grad_weights,
        bias: Tensor::from_vec(&[k], bias)?,
    })
}

/// `x` if `x > 0`, else `slope · x`.
pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut().iter_mut().for_each(|v| {
        if *v <= T::zero() {
            *v = *v * slope
        }
    });
    out
}

/// Upstream times 1 where `x > 0`, times `slope` otherwise (including 0).
pub fn leaky_relu_backward<T: Scalar>(
    upstream: &Tensor<T>,
    input: &Tensor<T>,
    slope: T,
) -> Tensor<T> {
    let mut g = upstream.clone();
    g.clear_grad();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *gv = *gv * slope;
        }
    }
    g
}

/// Logistic function in the overflow-free split form.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.clear_grad();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// `s · (1 - s) · upstream`, given the forward output `s`.
pub fn sigmoid_backward<T: Scalar>(upstream: &Tensor<T>, output: &Tensor<T>) -> Tensor<T> {
    let mut g = upstream.clone();
    g.clear_grad();
    for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
        *gv = *gv * s * (T::one() - s);
    }
    g
}

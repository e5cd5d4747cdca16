//! Single-sample layer kernels with their hand-written backward passes.
//!
//! Convolution is cross-correlation (no kernel flip) lowered to a matrix
//! product via im2col.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `c = beta * c + op(a) * op(b)` on row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`. A transposed operand is stored in the
/// opposite orientation (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the assertion above bounds every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial extent of a strided, zero-padded window.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    channels: usize,
    rows: usize,
    cols: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_rows: usize,
    out_cols: usize,
}

impl ConvGeometry {
    fn new(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (channels, rows, cols) = input.chw("conv2d")?;
        let [out_channels, in_channels, kh, kw] = weights.shape()[..] else {
            return Err(TensorError::RankMismatch {
                op: "conv2d",
                expected: 4,
                found: weights.shape().to_vec(),
            });
        };
        if in_channels != channels {
            return Err(TensorError::DimensionMismatch {
                op: "conv2d",
                axis: "in_channels",
                expected: in_channels,
                found: channels,
            });
        }
        let out_rows = conv_output_dim(rows, kh, stride, padding).ok_or(
            TensorError::DimensionMismatch {
                op: "conv2d",
                axis: "rows",
                expected: kh,
                found: rows + 2 * padding,
            },
        )?;
        let out_cols = conv_output_dim(cols, kw, stride, padding).ok_or(
            TensorError::DimensionMismatch {
                op: "conv2d",
                axis: "cols",
                expected: kw,
                found: cols + 2 * padding,
            },
        )?;
        Ok(Self {
            channels,
            rows,
            cols,
            out_channels,
            kh,
            kw,
            stride,
            padding,
            out_rows,
            out_cols,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.out_rows * self.out_cols
    }

    /// Unfolds the input into a `patch_len x out_pixels` matrix.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let n = self.out_pixels();
        let mut cols = vec![0.0; self.patch_len() * n];
        for c in 0..self.channels {
            let plane = &input[c * self.rows * self.cols..(c + 1) * self.rows * self.cols];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_rows {
                        let y = (oy * self.stride + i) as isize - self.padding as isize;
                        if y < 0 || y >= self.rows as isize {
                            continue;
                        }
                        let src = &plane[y as usize * self.cols..(y as usize + 1) * self.cols];
                        for ox in 0..self.out_cols {
                            let x = (ox * self.stride + j) as isize - self.padding as isize;
                            if x >= 0 && x < self.cols as isize {
                                dst[oy * self.out_cols + ox] = src[x as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds an unfolded gradient back onto the input grid.
    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.out_pixels();
        let mut out = vec![0.0; self.channels * self.rows * self.cols];
        for c in 0..self.channels {
            let plane = &mut out[c * self.rows * self.cols..(c + 1) * self.rows * self.cols];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_rows {
                        let y = (oy * self.stride + i) as isize - self.padding as isize;
                        if y < 0 || y >= self.rows as isize {
                            continue;
                        }
                        for ox in 0..self.out_cols {
                            let x = (ox * self.stride + j) as isize - self.padding as isize;
                            if x >= 0 && x < self.cols as isize {
                                plane[y as usize * self.cols + x as usize] += src[oy * self.out_cols + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn check_bias(bias: &Tensor, expected: usize, op: &'static str) -> Result<()> {
    if bias.len() != expected {
        return Err(TensorError::DimensionMismatch {
            op,
            axis: "bias",
            expected,
            found: bias.len(),
        });
    }
    Ok(())
}

/// Unfolded input kept by the forward pass so backward can skip re-unfolding.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
}

pub(crate) fn conv2d_forward_cached(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, ConvCache)> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    check_bias(bias, g.out_channels, "conv2d")?;
    let cols = g.im2col(input.data());
    let n = g.out_pixels();
    let mut out = vec![0.0; g.out_channels * n];
    for (o, chunk) in out.chunks_mut(n).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    gemm(g.out_channels, g.patch_len(), n, weights.data(), false, &cols, false, 1.0, &mut out);
    Ok((
        Tensor::new(&[g.out_channels, g.out_rows, g.out_cols], out)?,
        ConvCache { cols },
    ))
}

pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    conv2d_forward_cached(input, weights, bias, stride, padding).map(|(out, _)| out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub(crate) fn conv2d_backward_cached(
    grad_out: &Tensor,
    saved_input: &Tensor,
    cache: Option<&ConvCache>,
    weights: &Tensor,
    stride: usize,
    padding: usize,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(saved_input, weights, stride, padding)?;
    let expected = [g.out_channels, g.out_rows, g.out_cols];
    for (axis, (&e, &f)) in ["channels", "rows", "cols"]
        .into_iter()
        .zip(expected.iter().zip(grad_out.shape()))
    {
        if e != f {
            return Err(TensorError::DimensionMismatch {
                op: "conv2d_backward",
                axis,
                expected: e,
                found: f,
            });
        }
    }
    if grad_out.shape().len() != 3 {
        return Err(TensorError::RankMismatch {
            op: "conv2d_backward",
            expected: 3,
            found: grad_out.shape().to_vec(),
        });
    }
    let owned;
    let cols = match cache {
        Some(c) => &c.cols,
        None => {
            owned = g.im2col(saved_input.data());
            &owned
        }
    };
    let n = g.out_pixels();
    let k = g.patch_len();
    let go = grad_out.data();

    let mut gw = vec![0.0; g.out_channels * k];
    gemm(g.out_channels, n, k, go, false, cols, true, 0.0, &mut gw);
    let gb: Vec<f64> = go.chunks(n).map(|c| c.iter().sum()).collect();

    let input = if need_input_grad {
        let mut gcols = vec![0.0; k * n];
        gemm(k, g.out_channels, n, weights.data(), true, go, false, 0.0, &mut gcols);
        Some(Tensor::new(saved_input.shape(), g.col2im(&gcols))?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[g.out_channels], gb)?,
    })
}

/// Gradients of a convolution with respect to its input, weights and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads> {
    conv2d_backward_cached(grad_out, saved_input, None, weights, stride, padding, true)
}

/// 2x2 max pooling with stride 2. Odd trailing rows/cols are dropped.
/// Returns the pooled map and, per output element, the flat index of the
/// input element that won.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw("maxpool2x2")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(TensorError::DimensionMismatch {
            op: "maxpool2x2",
            axis: if oh == 0 { "rows" } else { "cols" },
            expected: 2,
            found: if oh == 0 { h } else { w },
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, idx))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != indices.len() {
        return Err(TensorError::DimensionMismatch {
            op: "maxpool2x2_backward",
            axis: "elements",
            expected: indices.len(),
            found: grad_out.len(),
        });
    }
    let mut gi = Tensor::zeros(input_shape);
    let d = gi.data_mut();
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(gi)
}

/// Nearest-neighbour 2x upsampling in both spatial dims.
pub fn upsample2x2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw("upsample2x2")?;
    let x = input.data();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                out[(ch * oh + y) * ow + xo] = x[(ch * h + y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn upsample2x2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw("upsample2x2_backward")?;
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ch * h + y / 2) * w + x / 2] += g[(ch * oh + y) * ow + x];
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Adds `rows` zero rows above and below and `cols` zero columns left and right.
pub fn zeropad(input: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw("zeropad")?;
    let (oh, ow) = (h + 2 * rows, w + 2 * cols);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let dst = (ch * oh + y + rows) * ow + cols;
            out[dst..dst + w].copy_from_slice(&x[(ch * h + y) * w..(ch * h + y + 1) * w]);
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn zeropad_backward(grad_out: &Tensor, rows: usize, cols: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw("zeropad_backward")?;
    let (h, w) = (oh - 2 * rows, ow - 2 * cols);
    let g = grad_out.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let src = (ch * oh + y + rows) * ow + cols;
            out.extend_from_slice(&g[src..src + w]);
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// `y = W x + b` where `x` is the flattened input and `W` is `out x in`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [out_units, in_units] = weights.shape()[..] else {
        return Err(TensorError::RankMismatch {
            op: "dense",
            expected: 2,
            found: weights.shape().to_vec(),
        });
    };
    if input.len() != in_units {
        return Err(TensorError::DimensionMismatch {
            op: "dense",
            axis: "in_units",
            expected: in_units,
            found: input.len(),
        });
    }
    check_bias(bias, out_units, "dense")?;
    let mut y = bias.data().to_vec();
    gemm(out_units, in_units, 1, weights.data(), false, input.data(), false, 1.0, &mut y);
    Tensor::new(&[out_units], y)
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(
    grad_out: &Tensor,
    saved_input: &Tensor,
    weights: &Tensor,
    need_input_grad: bool,
) -> Result<DenseGrads> {
    let [out_units, in_units] = weights.shape()[..] else {
        return Err(TensorError::RankMismatch {
            op: "dense_backward",
            expected: 2,
            found: weights.shape().to_vec(),
        });
    };
    if grad_out.len() != out_units {
        return Err(TensorError::DimensionMismatch {
            op: "dense_backward",
            axis: "out_units",
            expected: out_units,
            found: grad_out.len(),
        });
    }
    if saved_input.len() != in_units {
        return Err(TensorError::DimensionMismatch {
            op: "dense_backward",
            axis: "in_units",
            expected: in_units,
            found: saved_input.len(),
        });
    }
    let g = grad_out.data();
    let x = saved_input.data();
    let mut gw = vec![0.0; out_units * in_units];
    for (row, &go) in gw.chunks_mut(in_units).zip(g) {
        if go != 0.0 {
            for (w, &xi) in row.iter_mut().zip(x) {
                *w = go * xi;
            }
        }
    }
    let input = if need_input_grad {
        let mut gi = vec![0.0; in_units];
        gemm(in_units, out_units, 1, weights.data(), true, g, false, 0.0, &mut gi);
        Some(Tensor::new(saved_input.shape(), gi)?)
    } else {
        None
    };
    Ok(DenseGrads {
        input,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[out_units], g.to_vec())?,
    })
}

pub fn tanh_forward(input: &Tensor) -> Tensor {
    input.map(f64::tanh)
}

/// Backward of tanh expressed through the saved forward output `y`.
pub fn tanh_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    if grad_out.len() != output.len() {
        return Err(TensorError::DimensionMismatch {
            op: "tanh_backward",
            axis: "elements",
            expected: output.len(),
            found: grad_out.len(),
        });
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(g, y)| g * (1.0 - y * y))
        .collect();
    Tensor::new(output.shape(), data)
}

/// Inverted dropout: each element is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`. Returns the output and the
/// multiplicative mask needed by backward.
pub fn dropout_forward<R: Rng + ?Sized>(input: &Tensor, rate: f64, rng: &mut R) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidLayer(format!("dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok((input.clone(), vec![1.0; input.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok((Tensor::new(input.shape(), data)?, mask))
}

pub fn dropout_backward(grad_out: &Tensor, mask: &[f64]) -> Result<Tensor> {
    if grad_out.len() != mask.len() {
        return Err(TensorError::DimensionMismatch {
            op: "dropout_backward",
            axis: "elements",
            expected: mask.len(),
            found: grad_out.len(),
        });
    }
    let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
    Tensor::new(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let b = t(&[1], &[0.]);
        let y = conv2d_forward(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[6., 8., 12., 14.]);
    }

    #[test]
    fn conv_zero_kernel_and_identity_kernel() {
        let x = Tensor::from_fn(&[2, 4, 5], |i| (i as f64 * 0.37).sin());
        let zero = conv2d_forward(&x, &Tensor::zeros(&[3, 2, 3, 3]), &Tensor::zeros(&[3]), 1, 1).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let x1 = Tensor::from_fn(&[1, 4, 5], |i| i as f64 - 3.5);
        let id = conv2d_forward(&x1, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(id, x1);
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let err = conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1]), 1, 0).unwrap_err();
        match err {
            TensorError::DimensionMismatch { axis, expected, found, .. } => {
                assert_eq!((axis, expected, found), ("in_channels", 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conv_backward_zero_upstream() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let w = Tensor::from_fn(&[2, 1, 3, 3], |i| 0.1 * i as f64);
        let g = conv2d_backward(&Tensor::zeros(&[2, 2, 2]), &x, &w, 1, 0).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_chain_rule() {
        let (x, w, g) = (1.7, -0.4, 2.5);
        let grads = conv2d_backward(&t(&[1, 1, 1], &[g]), &t(&[1, 1, 1], &[x]), &t(&[1, 1, 1, 1], &[w]), 1, 0).unwrap();
        assert_eq!(grads.input.unwrap().data(), &[w * g]);
        assert_eq!(grads.weights.data(), &[x * g]);
        assert_eq!(grads.bias.data(), &[g]);
    }

    #[test]
    fn conv_backward_rejects_wrong_grad_shape() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let w = Tensor::zeros(&[2, 1, 3, 3]);
        assert!(conv2d_backward(&Tensor::zeros(&[2, 3, 2]), &x, &w, 1, 0).is_err());
    }

    #[test]
    fn maxpool_examples() {
        let (y, _) = maxpool2x2_forward(&t(&[1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        assert_eq!(y.data(), &[4.]);
        let ramp = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        let (y, _) = maxpool2x2_forward(&ramp).unwrap();
        assert_eq!(y.data(), &[5., 7., 13., 15.]);
        let (y, _) = maxpool2x2_forward(&Tensor::full(&[2, 6, 4], 3.0)).unwrap();
        assert_eq!(y, Tensor::full(&[2, 3, 2], 3.0));
    }

    #[test]
    fn maxpool_odd_dims_drop_last() {
        let x = Tensor::from_fn(&[1, 5, 3], |i| i as f64);
        let (y, _) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1]);
        assert_eq!(y.data(), &[4., 10.]);
    }

    #[test]
    fn upsample_examples() {
        assert_eq!(upsample2x2(&t(&[1, 1, 1], &[5.])).unwrap().data(), &[5.; 4]);
        let y = upsample2x2(&t(&[1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let (pooled, _) = maxpool2x2_forward(&y).unwrap();
        assert_eq!(upsample2x2(&pooled).unwrap(), y);
    }

    #[test]
    fn zeropad_example() {
        let y = zeropad(&t(&[1, 2, 2], &[1., 2., 3., 4.]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert_eq!(
            y.data(),
            &[0., 0., 0., 0., 0., 1., 2., 0., 0., 3., 4., 0., 0., 0., 0., 0.]
        );
        assert_eq!(zeropad_backward(&y, 1, 1).unwrap().data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn dense_examples() {
        let x = t(&[2], &[1., 1.]);
        let y = dense_forward(&x, &t(&[1, 2], &[0.2, 0.35]), &t(&[1], &[0.])).unwrap();
        assert!((y.data()[0] - 0.55).abs() < 1e-15);
        let x = t(&[3], &[0.5, -2.0, 7.0]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        assert!(dense_forward(&x, &t(&[1, 2], &[1., 1.]), &t(&[1], &[0.])).is_err());
    }

    #[test]
    fn tanh_at_zero() {
        let y = tanh_forward(&t(&[1], &[0.0]));
        assert_eq!(y.data(), &[0.0]);
        let g = tanh_backward(&t(&[1], &[1.0]), &y).unwrap();
        assert_eq!(g.data(), &[1.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let x = Tensor::from_fn(&[10], |i| i as f64);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(dropout_forward(&x, 0.0, &mut rng).unwrap().0, x);
        }
    }

    #[test]
    fn dropout_fixed_seed_is_deterministic() {
        let x = Tensor::full(&[64], 1.0);
        let a = dropout_forward(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout_forward(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.0, b.0);
        assert!(a.0.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(dropout_forward(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn dropout_preserves_mean_in_expectation() {
        let x = Tensor::full(&[1000], 3.0);
        let mut acc = 0.0;
        let runs = 200;
        for seed in 0..runs {
            let (y, _) = dropout_forward(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            acc += y.mean();
        }
        // Each run's mean has std 3/sqrt(1000); averaged over 200 runs ~0.0067.
        assert!((acc / runs as f64 - 3.0).abs() < 0.04);
    }

    #[test]
    fn maxpool_backward_routes_each_gradient_once() {
        let x = Tensor::from_fn(&[2, 6, 6], |i| ((i * 7919) % 101) as f64);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let g = Tensor::from_fn(y.shape(), |i| 1.0 + i as f64);
        let gi = maxpool2x2_backward(&g, &idx, x.shape()).unwrap();
        assert_eq!(gi.sum(), g.sum());
        assert_eq!(gi.data().iter().filter(|&&v| v != 0.0).count(), g.len());
    }
}

//! Layer kernels: forward passes that record what their backward pass needs,
//! and backward passes that accumulate parameter gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::lstm::{self, LstmCache, LstmParams};
use super::Rng;
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv1d {
        weight: usize,
        bias: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        size: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
    GlobalAvgPool,
    Dense {
        weight: usize,
        bias: usize,
        in_features: usize,
        out_features: usize,
    },
    BiLstm {
        forward: LstmParams,
        backward: LstmParams,
        input_size: usize,
        hidden: usize,
        return_sequences: bool,
    },
}

pub(crate) enum Cache {
    Conv { cols: Vec<f64>, in_shape: [usize; 3], out_len: usize },
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Relu { mask: Vec<bool> },
    Dropout { scale: Option<Vec<f64>> },
    Reshape { in_shape: Vec<usize> },
    Dense { input: Tensor },
    Lstm(Box<LstmCache>),
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

pub fn pool_out_len(len: usize, size: usize, stride: usize) -> Option<usize> {
    if len < size {
        None
    } else {
        Some((len - size) / stride + 1)
    }
}

/// Lays out the receptive fields of a `(batch, channels, len)` input as a
/// `(channels * kernel) x (batch * out_len)` matrix.
pub fn im2col<T: Copy + Default>(
    x: &[T],
    [batch, channels, len]: [usize; 3],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> Vec<T> {
    let ncols = batch * out_len;
    let mut cols = vec![T::default(); channels * kernel * ncols];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            for k in 0..kernel {
                let row = (c * kernel + k) * ncols + b * out_len;
                for t in 0..out_len {
                    let pos = (t * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        cols[row + t] = src[pos as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &[f64],
    [batch, channels, len]: [usize; 3],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> Vec<f64> {
    let ncols = batch * out_len;
    let mut dx = vec![0.0; batch * channels * len];
    for b in 0..batch {
        for c in 0..channels {
            let dst = &mut dx[(b * channels + c) * len..(b * channels + c + 1) * len];
            for k in 0..kernel {
                let row = (c * kernel + k) * ncols + b * out_len;
                for t in 0..out_len {
                    let pos = (t * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dst[pos as usize] += dcols[row + t];
                    }
                }
            }
        }
    }
    dx
}

fn dims3(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    assert_eq!(s.len(), 3, "expected (batch, channels, length) activation, got {s:?}");
    [s[0], s[1], s[2]]
}

impl Layer {
    pub(crate) fn forward(&self, params: &ParamSet, x: Tensor, rng: Option<&mut Rng>) -> (Tensor, Cache) {
        match *self {
            Layer::Conv1d { weight, bias, out_channels, kernel, stride, padding, .. } => {
                let in_shape = dims3(&x);
                let [batch, in_ch, len] = in_shape;
                let out_len = conv_out_len(len, kernel, stride, padding).expect("conv length checked at build");
                let cols = im2col(x.data(), in_shape, kernel, stride, padding, out_len);
                let ncols = batch * out_len;
                let mut y2 = vec![0.0; out_channels * ncols];
                gemm(
                    out_channels,
                    in_ch * kernel,
                    ncols,
                    1.0,
                    params.get(weight).data(),
                    false,
                    &cols,
                    false,
                    0.0,
                    &mut y2,
                );
                let bvec = params.get(bias).data();
                let mut out = vec![0.0; batch * out_channels * out_len];
                for b in 0..batch {
                    for co in 0..out_channels {
                        let src = &y2[co * ncols + b * out_len..co * ncols + (b + 1) * out_len];
                        let dst = &mut out[(b * out_channels + co) * out_len..(b * out_channels + co + 1) * out_len];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s + bvec[co];
                        }
                    }
                }
                let out = Tensor::new(vec![batch, out_channels, out_len], out).expect("conv output shape");
                (out, Cache::Conv { cols, in_shape, out_len })
            }
            Layer::MaxPool1d { size, stride } => {
                let [batch, ch, len] = dims3(&x);
                let out_len = pool_out_len(len, size, stride).expect("pool length checked at build");
                let xd = x.data();
                let mut out = Vec::with_capacity(batch * ch * out_len);
                let mut argmax = Vec::with_capacity(batch * ch * out_len);
                for row in 0..batch * ch {
                    let base = row * len;
                    for t in 0..out_len {
                        let start = base + t * stride;
                        let mut best = start;
                        for i in start + 1..start + size {
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best);
                    }
                }
                let out = Tensor::new(vec![batch, ch, out_len], out).expect("pool output shape");
                (out, Cache::Pool { argmax, in_shape: x.shape().to_vec() })
            }
            Layer::Relu => {
                let mut x = x;
                let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                (x, Cache::Relu { mask })
            }
            Layer::Dropout { rate } => match rng {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mut x = x;
                    let scale: Vec<f64> =
                        (0..x.len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
                    for (v, s) in x.data_mut().iter_mut().zip(&scale) {
                        *v *= s;
                    }
                    (x, Cache::Dropout { scale: Some(scale) })
                }
                _ => (x, Cache::Dropout { scale: None }),
            },
            Layer::Flatten => {
                let in_shape = x.shape().to_vec();
                let batch = in_shape[0];
                let feat = x.len() / batch;
                (x.reshape(&[batch, feat]).expect("flatten"), Cache::Reshape { in_shape })
            }
            Layer::GlobalAvgPool => {
                let [batch, ch, len] = dims3(&x);
                let out: Vec<f64> = x.data().chunks(len).map(|c| c.iter().sum::<f64>() / len as f64).collect();
                let in_shape = x.shape().to_vec();
                (Tensor::new(vec![batch, ch], out).expect("gap shape"), Cache::Reshape { in_shape })
            }
            Layer::Dense { weight, bias, in_features, out_features } => {
                let batch = x.shape()[0];
                assert_eq!(x.len(), batch * in_features, "dense input width");
                let mut out = vec![0.0; batch * out_features];
                let bvec = params.get(bias).data();
                for row in out.chunks_mut(out_features) {
                    row.copy_from_slice(bvec);
                }
                gemm(
                    batch,
                    in_features,
                    out_features,
                    1.0,
                    x.data(),
                    false,
                    params.get(weight).data(),
                    true,
                    1.0,
                    &mut out,
                );
                let out = Tensor::new(vec![batch, out_features], out).expect("dense shape");
                (out, Cache::Dense { input: x })
            }
            Layer::BiLstm { forward, backward, hidden, return_sequences, .. } => {
                let (out, cache) = lstm::bilstm_forward(params, &x, &forward, &backward, hidden, return_sequences);
                (out, Cache::Lstm(Box::new(cache)))
            }
        }
    }

    /// Accumulates this layer's parameter gradients into `grads` and returns
    /// the gradient with respect to the layer input when `need_dx` is set.
    pub(crate) fn backward(
        &self,
        params: &ParamSet,
        cache: Cache,
        dy: Tensor,
        grads: &mut ParamSet,
        need_dx: bool,
    ) -> Option<Tensor> {
        match (self, cache) {
            (
                &Layer::Conv1d { weight, bias, in_channels, out_channels, kernel, stride, padding },
                Cache::Conv { cols, in_shape, out_len },
            ) => {
                let batch = in_shape[0];
                let ncols = batch * out_len;
                let dyd = dy.data();
                let mut dy2 = vec![0.0; out_channels * ncols];
                for b in 0..batch {
                    for co in 0..out_channels {
                        dy2[co * ncols + b * out_len..co * ncols + (b + 1) * out_len].copy_from_slice(
                            &dyd[(b * out_channels + co) * out_len..(b * out_channels + co + 1) * out_len],
                        );
                    }
                }
                let rows = in_channels * kernel;
                gemm(out_channels, ncols, rows, 1.0, &dy2, false, &cols, true, 1.0, grads.get_mut(weight).data_mut());
                let db = grads.get_mut(bias).data_mut();
                for co in 0..out_channels {
                    db[co] += dy2[co * ncols..(co + 1) * ncols].iter().sum::<f64>();
                }
                if !need_dx {
                    return None;
                }
                let mut dcols = vec![0.0; rows * ncols];
                gemm(rows, out_channels, ncols, 1.0, params.get(weight).data(), true, &dy2, false, 0.0, &mut dcols);
                let dx = col2im(&dcols, in_shape, kernel, stride, padding, out_len);
                Some(Tensor::new(in_shape.to_vec(), dx).expect("conv dx shape"))
            }
            (Layer::MaxPool1d { .. }, Cache::Pool { argmax, in_shape }) => {
                if !need_dx {
                    return None;
                }
                let mut dx = Tensor::zeros(&in_shape);
                let dxd = dx.data_mut();
                for (&i, g) in argmax.iter().zip(dy.data()) {
                    dxd[i] += g;
                }
                Some(dx)
            }
            (Layer::Relu, Cache::Relu { mask }) => {
                if !need_dx {
                    return None;
                }
                let mut dx = dy;
                for (v, m) in dx.data_mut().iter_mut().zip(mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                Some(dx)
            }
            (Layer::Dropout { .. }, Cache::Dropout { scale }) => {
                if !need_dx {
                    return None;
                }
                let mut dx = dy;
                if let Some(scale) = scale {
                    for (v, s) in dx.data_mut().iter_mut().zip(scale) {
                        *v *= s;
                    }
                }
                Some(dx)
            }
            (Layer::Flatten, Cache::Reshape { in_shape }) => {
                if !need_dx {
                    return None;
                }
                Some(dy.reshape(&in_shape).expect("unflatten"))
            }
            (Layer::GlobalAvgPool, Cache::Reshape { in_shape }) => {
                if !need_dx {
                    return None;
                }
                let len = in_shape[2];
                let inv = 1.0 / len as f64;
                let mut dx = Vec::with_capacity(in_shape.iter().product());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, len));
                }
                Some(Tensor::new(in_shape, dx).expect("gap dx shape"))
            }
            (&Layer::Dense { weight, bias, in_features, out_features }, Cache::Dense { input }) => {
                let batch = input.shape()[0];
                gemm(
                    out_features,
                    batch,
                    in_features,
                    1.0,
                    dy.data(),
                    true,
                    input.data(),
                    false,
                    1.0,
                    grads.get_mut(weight).data_mut(),
                );
                let db = grads.get_mut(bias).data_mut();
                for row in dy.data().chunks(out_features) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                if !need_dx {
                    return None;
                }
                let mut dx = vec![0.0; batch * in_features];
                gemm(
                    batch,
                    out_features,
                    in_features,
                    1.0,
                    dy.data(),
                    false,
                    params.get(weight).data(),
                    false,
                    0.0,
                    &mut dx,
                );
                Some(Tensor::new(input.shape().to_vec(), dx).expect("dense dx shape"))
            }
            (Layer::BiLstm { forward, backward, hidden, .. }, Cache::Lstm(cache)) => {
                lstm::bilstm_backward(params, *cache, &dy, forward, backward, *hidden, grads, need_dx)
            }
            _ => unreachable!("layer/cache mismatch"),
        }
    }
}

//! One SGD step evaluated entirely on shares, used for runtime comparison.
//!
//! Softmax runs on shares here: the row maximum is subtracted, `exp` is
//! the limit `(1 + x/256)^256` and the reciprocal of the row sum comes from
//! Newton iterations started at `1/classes`.

use super::inference::{batch_to_channel_major, layer_forward, pool_window, Dims, SharedModel};
use super::party::Party;
use super::ring::{add, sub, transpose};
use super::MpcError;
use crate::nn::{conv_out_len, im2col, pool_out_len, Layer};

const EXP_SQUARINGS: u32 = 8;
const NEWTON_STEPS: usize = 10;

enum Cache {
    Conv { cols: Vec<u64>, batch: usize, len: usize, out_len: usize },
    Pool { onehots: Vec<Vec<u64>>, dims: Dims },
    Relu { keep: Vec<u64> },
    Dense { input: Vec<u64>, batch: usize },
    Gap { len: usize },
    Identity,
}

fn col2im_ring(
    dcols: &[u64],
    [batch, channels, len]: [usize; 3],
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
) -> Vec<u64> {
    let ncols = batch * out_len;
    let mut dx = vec![0u64; batch * channels * len];
    for b in 0..batch {
        for c in 0..channels {
            let dst = &mut dx[(b * channels + c) * len..(b * channels + c + 1) * len];
            for k in 0..kernel {
                let row = (c * kernel + k) * ncols + b * out_len;
                for t in 0..out_len {
                    let pos = (t * stride + k) as isize - padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dst[pos as usize] = dst[pos as usize].wrapping_add(dcols[row + t]);
                    }
                }
            }
        }
    }
    dx
}

fn public_one(party: &Party, len: usize, value: u64) -> Vec<u64> {
    vec![if party.id() == 0 { value } else { 0 }; len]
}

fn forward_cached(
    party: &mut Party,
    model: &SharedModel,
    layer: &Layer,
    x: Vec<u64>,
    dims: Dims,
) -> Result<(Vec<u64>, Dims, Cache), MpcError> {
    match *layer {
        Layer::Conv1d { in_channels, kernel, stride, padding, .. } => {
            let Dims::Seq { batch, len, .. } = dims else { unreachable!("conv on a flat activation") };
            let out_len = conv_out_len(len, kernel, stride, padding).expect("validated layout");
            let cols = im2col(&x, [batch, in_channels, len], kernel, stride, padding, out_len);
            let (y, d) = layer_forward(party, model, layer, x, dims)?;
            Ok((y, d, Cache::Conv { cols, batch, len, out_len }))
        }
        Layer::MaxPool1d { size, stride } => {
            let Dims::Seq { batch, channels, len } = dims else { unreachable!("pool on a flat activation") };
            let out_len = pool_out_len(len, size, stride).expect("validated layout");
            let gather = |j: usize| {
                pool_window(batch * channels, len, size, stride, j).into_iter().map(|i| x[i]).collect::<Vec<_>>()
            };
            let m = batch * channels * out_len;
            let mut cur = gather(0);
            let mut onehots = vec![public_one(party, m, 1)];
            for j in 1..size {
                let (next, sel) = party.max_with_mask(&gather(j), &cur)?;
                cur = next;
                let sels: Vec<u64> = sel.iter().copied().cycle().take(m * j).collect();
                let stacked: Vec<u64> = onehots.concat();
                let cleared = party.mul(&sels, &stacked)?;
                for (i, h) in onehots.iter_mut().enumerate() {
                    *h = sub(h, &cleared[i * m..(i + 1) * m]);
                }
                onehots.push(sel);
            }
            Ok((cur, Dims::Seq { batch, channels, len: out_len }, Cache::Pool { onehots, dims }))
        }
        Layer::Relu => {
            let (y, keep) = party.relu_with_mask(&x)?;
            Ok((y, dims, Cache::Relu { keep }))
        }
        Layer::Dense { .. } => {
            let batch = match dims {
                Dims::Flat { batch, .. } | Dims::Seq { batch, .. } => batch,
            };
            let (y, d) = layer_forward(party, model, layer, x.clone(), dims)?;
            Ok((y, d, Cache::Dense { input: x, batch }))
        }
        Layer::GlobalAvgPool => {
            let Dims::Seq { len, .. } = dims else { unreachable!("pool on a flat activation") };
            let (y, d) = layer_forward(party, model, layer, x, dims)?;
            Ok((y, d, Cache::Gap { len }))
        }
        _ => {
            let (y, d) = layer_forward(party, model, layer, x, dims)?;
            Ok((y, d, Cache::Identity))
        }
    }
}

/// Shares of `softmax(z) - onehot` divided by the batch size.
fn softmax_xent_grad(
    party: &mut Party,
    z: &[u64],
    onehot: &[u64],
    batch: usize,
    classes: usize,
) -> Result<Vec<u64>, MpcError> {
    let codec = party.codec();
    let col = |k: usize| (0..batch).map(|b| z[b * classes + k]).collect::<Vec<_>>();
    let mut m = col(0);
    for k in 1..classes {
        m = party.max(&col(k), &m)?;
    }
    let shifted: Vec<u64> = (0..batch * classes).map(|i| z[i].wrapping_sub(m[i / classes])).collect();
    let mut e = party.mul_public_fixed(&shifted, 1.0 / f64::from(1u32 << EXP_SQUARINGS))?;
    e = add(&e, &public_one(party, e.len(), codec.encode(1.0)?));
    for _ in 0..EXP_SQUARINGS {
        e = party.mul_fixed(&e, &e)?;
    }
    let sums: Vec<u64> = e.chunks(classes).map(|r| r.iter().fold(0u64, |a, v| a.wrapping_add(*v))).collect();
    let mut inv = public_one(party, batch, codec.encode(1.0 / classes as f64)?);
    let two = public_one(party, batch, codec.encode(2.0)?);
    for _ in 0..NEWTON_STEPS {
        let sy = party.mul_fixed(&sums, &inv)?;
        inv = party.mul_fixed(&inv, &sub(&two, &sy))?;
    }
    let inv_rows: Vec<u64> = (0..batch * classes).map(|i| inv[i / classes]).collect();
    let p = party.mul_fixed(&e, &inv_rows)?;
    party.mul_public_fixed(&sub(&p, onehot), 1.0 / batch as f64)
}

/// Runs forward, loss gradient, backward and the SGD update on shares.
/// `onehot` holds fixed-point shares of the one-hot labels `(batch, classes)`.
pub fn encrypted_train_step(
    party: &mut Party,
    model: &mut SharedModel,
    x: Vec<u64>,
    onehot: &[u64],
    batch: usize,
    lr: f64,
) -> Result<(), MpcError> {
    model.layout.check_supported()?;
    let spec = model.layout.spec;
    let layers = model.layout.layers.clone();
    let mut dims = Dims::Seq { batch, channels: spec.input_channels, len: spec.input_length };
    let mut caches = Vec::with_capacity(layers.len());
    let mut x = x;
    for layer in &layers {
        let (y, d, cache) = forward_cached(party, model, layer, x, dims)?;
        caches.push(cache);
        (x, dims) = (y, d);
    }
    let mut dy = softmax_xent_grad(party, &x, onehot, batch, spec.num_classes)?;
    let mut updates: Vec<(usize, Vec<u64>)> = Vec::new();
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let need_dx = i > 0;
        dy = match (layer, cache) {
            (
                &Layer::Conv1d { weight, bias, in_channels, out_channels, kernel, stride, padding },
                Cache::Conv { cols, batch, len, out_len },
            ) => {
                let rows = in_channels * kernel;
                let ncols = batch * out_len;
                let dy2 = batch_to_channel_major(&dy, batch, out_channels, out_len);
                let dw = party.matmul_fixed(&dy2, &transpose(&cols, rows, ncols), out_channels, ncols, rows)?;
                let db = dy2.chunks(ncols).map(|r| r.iter().fold(0u64, |a, v| a.wrapping_add(*v))).collect();
                updates.push((weight, dw));
                updates.push((bias, db));
                if !need_dx {
                    break;
                }
                let wt = transpose(&model.params[weight], out_channels, rows);
                let dcols = party.matmul_fixed(&wt, &dy2, rows, out_channels, ncols)?;
                col2im_ring(&dcols, [batch, in_channels, len], kernel, stride, padding, out_len)
            }
            (&Layer::MaxPool1d { size, stride }, Cache::Pool { onehots, dims }) => {
                let Dims::Seq { batch, channels, len } = dims else { unreachable!("pool cache") };
                let m = dy.len();
                let dys: Vec<u64> = dy.iter().copied().cycle().take(m * size).collect();
                let routed = party.mul(&dys, &onehots.concat())?;
                let mut dx = vec![0u64; batch * channels * len];
                for j in 0..size {
                    for (k, idx) in pool_window(batch * channels, len, size, stride, j).into_iter().enumerate() {
                        dx[idx] = dx[idx].wrapping_add(routed[j * m + k]);
                    }
                }
                dx
            }
            (Layer::Relu, Cache::Relu { keep }) => party.mul(&dy, &keep)?,
            (&Layer::Dense { weight, bias, in_features, out_features }, Cache::Dense { input, batch }) => {
                let dw = party.matmul_fixed(
                    &transpose(&dy, batch, out_features),
                    &input,
                    out_features,
                    batch,
                    in_features,
                )?;
                let mut db = vec![0u64; out_features];
                for row in dy.chunks(out_features) {
                    db = add(&db, row);
                }
                updates.push((weight, dw));
                updates.push((bias, db));
                if !need_dx {
                    break;
                }
                party.matmul_fixed(&dy, &model.params[weight], batch, out_features, in_features)?
            }
            (Layer::GlobalAvgPool, Cache::Gap { len }) => {
                let scaled = party.mul_public_fixed(&dy, 1.0 / len as f64)?;
                scaled.iter().flat_map(|&g| std::iter::repeat_n(g, len)).collect()
            }
            (_, Cache::Identity) => dy,
            _ => unreachable!("layer/cache mismatch"),
        };
        if !need_dx {
            break;
        }
    }
    for (idx, grad) in updates {
        let step = party.mul_public_fixed(&grad, lr)?;
        model.params[idx] = sub(&model.params[idx], &step);
    }
    Ok(())
}

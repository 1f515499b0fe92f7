use std::time::Instant;

use serde::Serialize;

use super::party::{CommStats, Party};
use super::ring::transpose;
use super::{run_protocol, MpcConfig, MpcError};
use crate::nn::{argmax_rows, conv_out_len, im2col, pool_out_len, Layer, Model, ModelSpec};
use crate::tensor::Tensor;

/// The public part of a model: layer stack and parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    pub param_shapes: Vec<Vec<usize>>,
}

impl ModelLayout {
    pub fn of(model: &Model) -> Self {
        Self {
            spec: model.spec,
            layers: model.layers().to_vec(),
            param_shapes: model.params.iter().map(|p| p.tensor.shape().to_vec()).collect(),
        }
    }

    pub fn check_supported(&self) -> Result<(), MpcError> {
        match self.layers.iter().find(|l| matches!(l, Layer::BiLstm { .. })) {
            Some(_) => Err(MpcError::UnsupportedLayer("BiLstm".into())),
            None => Ok(()),
        }
    }

    fn param_len(&self, idx: usize) -> usize {
        self.param_shapes[idx].iter().product()
    }
}

/// One party's shares of every model parameter, in parameter order.
#[derive(Debug, Clone)]
pub struct SharedModel {
    pub layout: ModelLayout,
    pub params: Vec<Vec<u64>>,
}

/// Shares the weights held by `owner`; the other parties pass `None`.
pub fn share_model(
    party: &mut Party,
    owner: usize,
    layout: &ModelLayout,
    model: Option<&Model>,
) -> Result<SharedModel, MpcError> {
    layout.check_supported()?;
    let total: usize = (0..layout.param_shapes.len()).map(|i| layout.param_len(i)).sum();
    let flat = model.map(|m| m.params.flatten());
    let mut all = party.input_reals(owner, flat.as_deref(), total)?.into_iter();
    let params = (0..layout.param_shapes.len()).map(|i| all.by_ref().take(layout.param_len(i)).collect()).collect();
    Ok(SharedModel { layout: layout.clone(), params })
}

/// `(batch, channels, len)` row-major activations reordered from the
/// `(channels, batch * len)` layout produced by a matrix product.
pub(crate) fn channel_major_to_batch(y: &[u64], batch: usize, channels: usize, len: usize) -> Vec<u64> {
    let mut out = vec![0u64; y.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(b * channels + c) * len..(b * channels + c + 1) * len]
                .copy_from_slice(&y[c * batch * len + b * len..c * batch * len + (b + 1) * len]);
        }
    }
    out
}

pub(crate) fn batch_to_channel_major(x: &[u64], batch: usize, channels: usize, len: usize) -> Vec<u64> {
    let mut out = vec![0u64; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[c * batch * len + b * len..c * batch * len + (b + 1) * len]
                .copy_from_slice(&x[(b * channels + c) * len..(b * channels + c + 1) * len]);
        }
    }
    out
}

/// Indices of the `j`-th element of every pooling window, in output order.
pub(crate) fn pool_window(rows: usize, len: usize, size: usize, stride: usize, j: usize) -> Vec<usize> {
    debug_assert!(j < size);
    let out_len = pool_out_len(len, size, stride).expect("pool fits");
    (0..rows).flat_map(|r| (0..out_len).map(move |t| r * len + t * stride + j)).collect()
}

fn add_bias_channels(y: &mut [u64], bias: &[u64], len: usize) {
    let channels = bias.len();
    for (i, chunk) in y.chunks_mut(len).enumerate() {
        let b = bias[i % channels];
        chunk.iter_mut().for_each(|v| *v = v.wrapping_add(b));
    }
}

fn add_bias_rows(y: &mut [u64], bias: &[u64]) {
    for row in y.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v = v.wrapping_add(*b));
    }
}

/// Activation shape while evaluating a layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Dims {
    Seq { batch: usize, channels: usize, len: usize },
    Flat { batch: usize, features: usize },
}

/// Evaluates one layer on shares. `Dropout` is the identity.
pub(crate) fn layer_forward(
    party: &mut Party,
    model: &SharedModel,
    layer: &Layer,
    x: Vec<u64>,
    dims: Dims,
) -> Result<(Vec<u64>, Dims), MpcError> {
    let seq = |what: &str| MpcError::Desync(format!("{what} applied to a flat activation"));
    Ok(match *layer {
        Layer::Conv1d { weight, bias, in_channels, out_channels, kernel, stride, padding } => {
            let Dims::Seq { batch, len, .. } = dims else { return Err(seq("conv")) };
            let out_len = conv_out_len(len, kernel, stride, padding).expect("validated layout");
            let cols = im2col(&x, [batch, in_channels, len], kernel, stride, padding, out_len);
            let y = party.matmul_fixed(
                &model.params[weight],
                &cols,
                out_channels,
                in_channels * kernel,
                batch * out_len,
            )?;
            let mut y = channel_major_to_batch(&y, batch, out_channels, out_len);
            add_bias_channels(&mut y, &model.params[bias], out_len);
            (y, Dims::Seq { batch, channels: out_channels, len: out_len })
        }
        Layer::MaxPool1d { size, stride } => {
            let Dims::Seq { batch, channels, len } = dims else { return Err(seq("max-pool")) };
            let out_len = pool_out_len(len, size, stride).expect("validated layout");
            let gather = |j: usize| {
                pool_window(batch * channels, len, size, stride, j).into_iter().map(|i| x[i]).collect::<Vec<_>>()
            };
            let mut cur = gather(0);
            for j in 1..size {
                cur = party.max(&gather(j), &cur)?;
            }
            (cur, Dims::Seq { batch, channels, len: out_len })
        }
        Layer::Relu => (party.relu(&x)?, dims),
        Layer::Dropout { .. } => (x, dims),
        Layer::Flatten => match dims {
            Dims::Seq { batch, channels, len } => (x, Dims::Flat { batch, features: channels * len }),
            flat => (x, flat),
        },
        Layer::GlobalAvgPool => {
            let Dims::Seq { batch, channels, len } = dims else { return Err(seq("global average pool")) };
            let sums: Vec<u64> = x.chunks(len).map(|c| c.iter().fold(0u64, |a, v| a.wrapping_add(*v))).collect();
            (party.mul_public_fixed(&sums, 1.0 / len as f64)?, Dims::Flat { batch, features: channels })
        }
        Layer::Dense { weight, bias, in_features, out_features } => {
            let batch = match dims {
                Dims::Flat { batch, .. } | Dims::Seq { batch, .. } => batch,
            };
            let wt = transpose(&model.params[weight], out_features, in_features);
            let mut y = party.matmul_fixed(&x, &wt, batch, in_features, out_features)?;
            add_bias_rows(&mut y, &model.params[bias]);
            (y, Dims::Flat { batch, features: out_features })
        }
        Layer::BiLstm { .. } => return Err(MpcError::UnsupportedLayer("BiLstm".into())),
    })
}

/// Logit shares `(batch, classes)` for shared inputs `(batch, channels, len)`.
pub fn encrypted_forward(
    party: &mut Party,
    model: &SharedModel,
    x: Vec<u64>,
    batch: usize,
) -> Result<Vec<u64>, MpcError> {
    let spec = model.layout.spec;
    let mut dims = Dims::Seq { batch, channels: spec.input_channels, len: spec.input_length };
    let mut x = x;
    for layer in &model.layout.layers {
        (x, dims) = layer_forward(party, model, layer, x, dims)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceOutcome {
    /// Decoded logits `(n, classes)` as opened at the data owner.
    #[serde(skip)]
    pub logits: Tensor,
    pub predictions: Vec<usize>,
    pub stats: Vec<CommStats>,
    pub seconds: f64,
}

/// Encrypted inference with party 0 holding `model` and the last party
/// holding `inputs` and receiving the logits.
pub fn encrypted_inference(
    model: &Model,
    inputs: &Tensor,
    config: &MpcConfig,
    batch_size: usize,
) -> Result<InferenceOutcome, MpcError> {
    let layout = ModelLayout::of(model);
    layout.check_supported()?;
    let spec = model.spec;
    let s = inputs.shape();
    if s.len() != 3 || s[1] != spec.input_channels || s[2] != spec.input_length {
        return Err(MpcError::Nn(crate::nn::NnError::ShapeMismatch {
            channels: spec.input_channels,
            length: spec.input_length,
            got: s.to_vec(),
        }));
    }
    let n = s[0];
    let per_sample = spec.input_channels * spec.input_length;
    let batch_size = batch_size.max(1);
    let owner = config.data_owner();
    let codec = config.codec();
    let start = Instant::now();
    let run = run_protocol(config, |party| {
        let me = party.id();
        let shared = share_model(party, 0, &layout, (me == 0).then_some(model))?;
        let mut opened = Vec::new();
        let mut done = 0;
        while done < n {
            let count = batch_size.min(n - done);
            let chunk = (me == owner).then(|| &inputs.data()[done * per_sample..(done + count) * per_sample]);
            let x = party.input_reals(owner, chunk, count * per_sample)?;
            let logits = encrypted_forward(party, &shared, x, count)?;
            if let Some(v) = party.reveal_to(owner, &logits)? {
                opened.extend(v);
            }
            done += count;
        }
        Ok(opened)
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let logits = Tensor::new(vec![n, spec.num_classes], codec.decode_all(&run.outputs[owner])).expect("logit shape");
    Ok(InferenceOutcome { predictions: argmax_rows(&logits), logits, stats: run.stats, seconds })
}

/// Joins channel blocks held by different parties into one shared tensor.
///
/// Every party calls this with its own block, or `None` if it holds no
/// features. Blocks must cover the same sample ids in the same order; the
/// result is `(samples, total channels, len)` in party order.
pub fn feature_aggregate(
    party: &mut Party,
    block: Option<(&[u64], &Tensor)>,
) -> Result<(Vec<u64>, [usize; 3]), MpcError> {
    let header = match block {
        Some((ids, data)) => {
            let s = data.shape();
            if s.len() != 3 || s[0] != ids.len() {
                return Err(MpcError::SampleIdMismatch(format!("{} ids for a block of shape {s:?}", ids.len())));
            }
            let digest = ids.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, id| (h ^ id).wrapping_mul(0x0100_0000_01b3));
            [1, s[0] as u64, s[1] as u64, s[2] as u64, digest]
        }
        None => [0; 5],
    };
    let headers = party.exchange_public(&header)?;
    let holders: Vec<usize> = (0..headers.len()).filter(|&p| headers[p][0] == 1).collect();
    let Some(&first) = holders.first() else {
        return Err(MpcError::SampleIdMismatch("no party holds features".into()));
    };
    let (n, len, digest) = (headers[first][1], headers[first][3], headers[first][4]);
    for &p in &holders {
        let h = &headers[p];
        if h[1] != n || h[3] != len || h[4] != digest {
            return Err(MpcError::SampleIdMismatch(format!(
                "party {p} holds {} samples of length {} that do not align with party {first}",
                h[1], h[3]
            )));
        }
    }
    let (n, len) = (n as usize, len as usize);
    let codec = party.codec();
    let mut blocks = Vec::with_capacity(holders.len());
    for &p in &holders {
        let channels = headers[p][2] as usize;
        let values = match block {
            Some((_, data)) if p == party.id() => Some(codec.encode_all(data.data())?),
            _ => None,
        };
        blocks.push((channels, party.input(p, values.as_deref(), n * channels * len)?));
    }
    let total: usize = blocks.iter().map(|b| b.0).sum();
    let mut out = Vec::with_capacity(n * total * len);
    for s in 0..n {
        for (channels, shares) in &blocks {
            out.extend_from_slice(&shares[s * channels * len..(s + 1) * channels * len]);
        }
    }
    Ok((out, [n, total, len]))
}

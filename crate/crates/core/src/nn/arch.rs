//! Layer stacks for the five benchmark architectures.
//!
//! A conv or pool layer whose output would be shorter than one step is left
//! out at build time, so short series still produce a valid model.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{conv_out_len, pool_out_len, Layer};
use super::lstm::LstmParams;
use super::{rng_from_seed, ModelSpec, NnError, Rng};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    AlexNet1D,
    LeNet1D,
    #[serde(rename = "FCN")]
    Fcn,
    #[serde(rename = "FDN")]
    Fdn,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Architecture::AlexNet1D, Architecture::LeNet1D, Architecture::Fcn, Architecture::Fdn, Architecture::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::AlexNet1D => "AlexNet1D",
            Architecture::LeNet1D => "LeNet1D",
            Architecture::Fcn => "FCN",
            Architecture::Fdn => "FDN",
            Architecture::Lstm => "LSTM",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown architecture '{s}'"))
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

struct Builder {
    layers: Vec<Layer>,
    params: ParamSet,
    rng: Rng,
    shape: Shape,
}

const LSTM_HIDDEN: usize = 128;

impl Builder {
    fn new(spec: &ModelSpec, seed: u64) -> Self {
        Self {
            layers: Vec::new(),
            params: ParamSet::new(),
            rng: rng_from_seed(seed),
            shape: Shape::Seq { channels: spec.input_channels, len: spec.input_length },
        }
    }

    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
    }

    /// Conv followed by ReLU; returns false when the layer does not fit.
    fn conv(&mut self, name: &str, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> bool {
        let Shape::Seq { channels, len } = self.shape else { unreachable!("conv after flatten") };
        let Some(out_len) = conv_out_len(len, kernel, stride, padding) else { return false };
        let w = self.uniform(&[out_channels, channels, kernel], channels * kernel);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        self.layers.push(Layer::Conv1d { weight, bias, in_channels: channels, out_channels, kernel, stride, padding });
        self.layers.push(Layer::Relu);
        self.shape = Shape::Seq { channels: out_channels, len: out_len };
        true
    }

    fn pool(&mut self, size: usize, stride: usize) {
        let Shape::Seq { channels, len } = self.shape else { unreachable!("pool after flatten") };
        if let Some(out_len) = pool_out_len(len, size, stride) {
            self.layers.push(Layer::MaxPool1d { size, stride });
            self.shape = Shape::Seq { channels, len: out_len };
        }
    }

    fn flatten(&mut self) {
        if let Shape::Seq { channels, len } = self.shape {
            self.layers.push(Layer::Flatten);
            self.shape = Shape::Flat(channels * len);
        }
    }

    fn global_avg_pool(&mut self) {
        let Shape::Seq { channels, .. } = self.shape else { unreachable!("gap after flatten") };
        self.layers.push(Layer::GlobalAvgPool);
        self.shape = Shape::Flat(channels);
    }

    fn dense(&mut self, name: &str, out_features: usize, relu: bool) {
        let Shape::Flat(in_features) = self.shape else { unreachable!("dense before flatten") };
        let w = self.uniform(&[out_features, in_features], in_features);
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        self.layers.push(Layer::Dense { weight, bias, in_features, out_features });
        if relu {
            self.layers.push(Layer::Relu);
        }
        self.shape = Shape::Flat(out_features);
    }

    fn dropout(&mut self, rate: f64) {
        self.layers.push(Layer::Dropout { rate });
    }

    fn lstm_direction(&mut self, name: &str, input: usize, hidden: usize) -> LstmParams {
        let w_ih = self.uniform(&[4 * hidden, input], input);
        let w_hh = self.uniform(&[4 * hidden, hidden], hidden);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmParams {
            w_ih: self.params.push(format!("{name}.w_ih"), w_ih),
            w_hh: self.params.push(format!("{name}.w_hh"), w_hh),
            bias: self.params.push(format!("{name}.bias"), bias),
        }
    }

    fn bilstm(&mut self, name: &str, hidden: usize, return_sequences: bool) {
        let Shape::Seq { channels, len } = self.shape else { unreachable!("lstm after flatten") };
        let forward = self.lstm_direction(&format!("{name}.fwd"), channels, hidden);
        let backward = self.lstm_direction(&format!("{name}.bwd"), channels, hidden);
        self.layers.push(Layer::BiLstm { forward, backward, input_size: channels, hidden, return_sequences });
        self.shape = if return_sequences { Shape::Seq { channels: 2 * hidden, len } } else { Shape::Flat(2 * hidden) };
    }

    /// AlexNet feature extractor; returns how many conv layers were kept.
    fn alexnet_features(&mut self) -> usize {
        let mut kept = 0;
        kept += self.conv("conv1", 96, 11, 4, 0) as usize;
        self.pool(3, 2);
        kept += self.conv("conv2", 256, 5, 1, 2) as usize;
        self.pool(3, 2);
        kept += self.conv("conv3", 384, 3, 1, 1) as usize;
        kept += self.conv("conv4", 384, 3, 1, 1) as usize;
        kept += self.conv("conv5", 256, 3, 1, 1) as usize;
        self.pool(3, 2);
        kept
    }
}

pub(super) fn build(spec: &ModelSpec, seed: u64) -> Result<(Vec<Layer>, ParamSet), NnError> {
    let mut b = Builder::new(spec, seed);
    let classes = spec.num_classes;
    let unsupported = || NnError::UnsupportedShape {
        architecture: spec.architecture,
        channels: spec.input_channels,
        length: spec.input_length,
    };
    match spec.architecture {
        Architecture::AlexNet1D => {
            if b.alexnet_features() == 0 {
                return Err(unsupported());
            }
            b.flatten();
            b.dense("fc1", 512, true);
            b.dropout(0.5);
            b.dense("fc2", 256, true);
            b.dense("fc3", classes, false);
        }
        Architecture::LeNet1D => {
            let mut kept = b.conv("conv1", 6, 5, 1, 0) as usize;
            b.pool(2, 2);
            kept += b.conv("conv2", 16, 5, 1, 0) as usize;
            b.pool(2, 2);
            if kept == 0 {
                return Err(unsupported());
            }
            b.flatten();
            b.dense("fc1", 120, true);
            b.dense("fc2", 84, true);
            b.dense("fc3", classes, false);
        }
        Architecture::Fcn => {
            if b.alexnet_features() == 0 {
                return Err(unsupported());
            }
            b.global_avg_pool();
            b.dense("fc", classes, false);
        }
        Architecture::Fdn => {
            b.flatten();
            b.dense("fc1", 512, true);
            b.dense("fc2", 256, true);
            b.dense("fc3", classes, false);
        }
        Architecture::Lstm => {
            b.bilstm("lstm1", LSTM_HIDDEN, true);
            b.bilstm("lstm2", LSTM_HIDDEN, false);
            b.dense("fc", classes, false);
        }
    }
    Ok((b.layers, b.params))
}

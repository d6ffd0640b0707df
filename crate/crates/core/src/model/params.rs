use rand::Rng;

use super::SrcnConfig;
use crate::error::{Error, Result};
use crate::lstm::{LstmCellParams, LstmVars};
use crate::nn::{ConvBlock, ConvBlockVars, DenseLayer, DenseVars};
use crate::tensor::{Tape, Tensor, Var};

/// Every learnable tensor of the network plus the batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SrcnParams {
    pub conv: Vec<ConvBlock>,
    /// Flattened conv output → per-frame feature vector.
    pub feature: DenseLayer,
    pub lstm: Vec<LstmCellParams>,
    /// One affine head per horizon offset.
    pub heads: Vec<DenseLayer>,
}

/// Tape handles for one bound copy of [`SrcnParams`].
#[derive(Debug, Clone)]
pub struct SrcnVars {
    pub conv: Vec<ConvBlockVars>,
    pub feature: DenseVars,
    pub lstm: Vec<LstmVars>,
    pub heads: Vec<DenseVars>,
}

impl SrcnVars {
    /// Same order as [`SrcnParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend([c.kernels, c.bias, c.gamma, c.beta]);
        }
        out.extend([self.feature.weight, self.feature.bias]);
        for l in &self.lstm {
            out.extend(l.all());
        }
        for h in &self.heads {
            out.extend([h.weight, h.bias]);
        }
        out
    }
}

impl SrcnParams {
    pub fn init<R: Rng + ?Sized>(config: &SrcnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::with_capacity(config.conv_channels.len());
        let mut c_in = 1;
        for (b, &c_out) in config.conv_channels.iter().enumerate() {
            conv.push(ConvBlock::init(c_in, c_out, config.pools_after(b), rng));
            c_in = c_out;
        }
        let feature = DenseLayer::init(config.flatten_dim(), config.feature_dim, rng);
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        let mut p = config.feature_dim;
        for _ in 0..config.lstm_layers {
            lstm.push(LstmCellParams::init(p, config.lstm_hidden, rng));
            p = config.lstm_hidden;
        }
        let heads = config
            .horizons
            .iter()
            .map(|_| DenseLayer::init(config.lstm_hidden, config.n_links, rng))
            .collect();
        Ok(Self { conv, feature, lstm, heads })
    }

    /// All-zero parameters (batch-norm scale included).
    pub fn zeros(config: &SrcnConfig) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::new();
        let mut c_in = 1;
        for (b, &c_out) in config.conv_channels.iter().enumerate() {
            conv.push(ConvBlock::zeros(c_in, c_out, config.pools_after(b)));
            c_in = c_out;
        }
        let mut lstm = Vec::new();
        let mut p = config.feature_dim;
        for _ in 0..config.lstm_layers {
            lstm.push(LstmCellParams::zeros(p, config.lstm_hidden));
            p = config.lstm_hidden;
        }
        Ok(Self {
            conv,
            feature: DenseLayer::zeros(config.flatten_dim(), config.feature_dim),
            lstm,
            heads: config
                .horizons
                .iter()
                .map(|_| DenseLayer::zeros(config.lstm_hidden, config.n_links))
                .collect(),
        })
    }

    /// Trainable tensors with stable names, in optimizer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.kernels"), &c.kernels));
            out.push((format!("conv.{i}.bias"), &c.bias));
            out.push((format!("conv.{i}.bn.gamma"), &c.bn.gamma));
            out.push((format!("conv.{i}.bn.beta"), &c.bn.beta));
        }
        out.push(("feature.weight".into(), &self.feature.weight));
        out.push(("feature.bias".into(), &self.feature.bias));
        const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];
        const PARTS: [&str; 3] = ["input_weight", "hidden_weight", "bias"];
        for (i, l) in self.lstm.iter().enumerate() {
            for (k, t) in l.tensors().into_iter().enumerate() {
                out.push((format!("lstm.{i}.{}.{}", GATES[k / 3], PARTS[k % 3]), t));
            }
        }
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("head.{i}.weight"), &h.weight));
            out.push((format!("head.{i}.bias"), &h.bias));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in &mut self.conv {
            out.extend([&mut c.kernels, &mut c.bias, &mut c.bn.gamma, &mut c.bn.beta]);
        }
        out.extend([&mut self.feature.weight, &mut self.feature.bias]);
        for l in &mut self.lstm {
            out.extend(l.tensors_mut());
        }
        for h in &mut self.heads {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out
    }

    /// Non-trainable state: batch-norm running statistics.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("conv.{i}.bn.running_mean"), &c.bn.running_mean));
            out.push((format!("conv.{i}.bn.running_var"), &c.bn.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.bn.running_mean);
            out.push(&mut c.bn.running_var);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> SrcnVars {
        SrcnVars {
            conv: self.conv.iter().map(|c| c.bind(tape)).collect(),
            feature: self.feature.bind(tape),
            lstm: self.lstm.iter().map(|l| l.bind(tape)).collect(),
            heads: self.heads.iter().map(|h| h.bind(tape)).collect(),
        }
    }

    /// Checks that every shape agrees with `config`.
    pub fn check_against(&self, config: &SrcnConfig) -> Result<()> {
        let expected = Self::zeros(config)?;
        let mine = self.named_tensors().into_iter().chain(self.named_buffers());
        let theirs: Vec<_> = expected.named_tensors().into_iter().chain(expected.named_buffers()).collect();
        let mine: Vec<_> = mine.collect();
        if mine.len() != theirs.len() {
            return Err(Error::shape(format!(
                "parameter set has {} tensors, configuration needs {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name, a), (_, b)) in mine.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "{name}: shape {:?}, configuration needs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if self.conv.iter().zip(&expected.conv).any(|(a, b)| a.pool != b.pool) {
            return Err(Error::shape("pooling schedule differs from configuration"));
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training hyper-parameters.
///
/// `Default` is the full-size network (163×148 grid, five conv blocks,
/// 278-wide features and outputs, two 800-unit LSTMs); [`SrcnConfig::desk`]
/// is a small configuration that trains in minutes on one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrcnConfig {
    pub grid_height: usize,
    pub grid_width: usize,
    /// Output channels of each conv block, in order.
    pub conv_channels: Vec<usize>,
    /// Zero-based indices of the blocks followed by 2×2 max pooling.
    pub pool_blocks: Vec<usize>,
    /// Width of the per-frame feature vector fed to the LSTM.
    pub feature_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    /// Input frames per sample (time lag).
    pub seq_len: usize,
    /// Prediction offsets in bins after the last input frame.
    pub horizons: Vec<usize>,
    pub n_links: usize,
    pub learning_rate: f64,
    /// RMSprop squared-gradient decay.
    pub decay: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    /// Speed normalization constant (km/h); filled in from the training data
    /// when not given.
    pub v_max: Option<f64>,
}

impl Default for SrcnConfig {
    fn default() -> Self {
        Self {
            grid_height: 163,
            grid_width: 148,
            conv_channels: vec![16, 32, 64, 64, 128],
            pool_blocks: vec![0, 1, 4],
            feature_dim: 278,
            lstm_hidden: 800,
            lstm_layers: 2,
            dropout: 0.2,
            seq_len: 15,
            horizons: vec![1, 2, 3],
            n_links: 278,
            learning_rate: 0.003,
            decay: 0.9,
            batch_size: 64,
            validation_fraction: 0.2,
            patience: 10,
            min_delta: 1e-5,
            max_epochs: 100,
            v_max: None,
        }
    }
}

impl SrcnConfig {
    pub fn desk() -> Self {
        Self {
            grid_height: 24,
            grid_width: 24,
            conv_channels: vec![4, 8],
            pool_blocks: vec![0, 1],
            feature_dim: 20,
            lstm_hidden: 32,
            seq_len: 5,
            n_links: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.grid_height == 0 || self.grid_width == 0 {
            return fail(format!("grid {}x{} is empty", self.grid_height, self.grid_width));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return fail("conv_channels must be a nonempty list of positive counts".into());
        }
        if let Some(&b) = self.pool_blocks.iter().find(|&&b| b >= self.conv_channels.len()) {
            return fail(format!("pool block index {b} out of range"));
        }
        let (h, w) = self.conv_output_extent();
        if h == 0 || w == 0 {
            return fail(format!(
                "grid {}x{} pools down to nothing",
                self.grid_height, self.grid_width
            ));
        }
        if self.feature_dim == 0 || self.lstm_hidden == 0 || self.lstm_layers == 0 || self.n_links == 0 {
            return fail("feature_dim, lstm_hidden, lstm_layers and n_links must be positive".into());
        }
        if self.seq_len == 0 {
            return fail("seq_len must be at least 1".into());
        }
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|p| p[1] <= p[0]) {
            return fail(format!("horizons {:?} must be strictly increasing and >= 1", self.horizons));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return fail(format!("decay {} outside [0, 1)", self.decay));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!("validation fraction {} outside (0, 1)", self.validation_fraction));
        }
        if let Some(v) = self.v_max {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("v_max {v} must be positive"));
            }
        }
        Ok(())
    }

    pub fn pools_after(&self, block: usize) -> bool {
        self.pool_blocks.contains(&block)
    }

    /// Spatial extent leaving the conv stack.
    pub fn conv_output_extent(&self) -> (usize, usize) {
        (0..self.conv_channels.len()).fold((self.grid_height, self.grid_width), |(h, w), b| {
            if self.pools_after(b) {
                (h / 2, w / 2)
            } else {
                (h, w)
            }
        })
    }

    /// Length of the flattened conv output.
    pub fn flatten_dim(&self) -> usize {
        let (h, w) = self.conv_output_extent();
        h * w * self.conv_channels.last().copied().unwrap_or(1)
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.last().copied().unwrap_or(0)
    }
}

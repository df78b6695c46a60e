//! Spatiotemporal illumination forecaster: a convolutional encoder turns
//! each frame into a feature vector, a GRU propagates the features through
//! time, and a mirrored unpooling/deconvolution decoder turns the predicted
//! feature vector back into a grid.

mod checkpoint;
mod gru;
mod layers;
mod model;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_matching, parse_checkpoint, save_checkpoint, write_checkpoint};
pub use gru::{gru_step, GruState, GruWeights};
pub use layers::{
    conv_forward, correlate_valid, deconv_forward, maxpool_forward, transpose_correlate, unpool, ConvLayer, Switches,
};
pub use model::{
    decode, encode, forward_window, loss, predict_features, predict_next, window_gradient, window_loss, EncodeTrace,
    EncodedLayer, PredictorWeights, WindowTrace,
};
pub use tensor::{Map, Mat};
pub use train::{train, train_from, training_windows, TrainedPredictor, Window};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("{what}: shape mismatch ({detail})")]
    Shape { what: &'static str, detail: String },
    #[error("invalid predictor configuration: {0}")]
    Config(String),
    #[error("input sequence is empty")]
    EmptySequence,
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("no training window: every sequence needs at least {needed} frames")]
    NoTrainingData { needed: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    /// Input grid side `λ0`.
    pub grid_side: usize,
    /// Number of conv/pool (and unpool/deconv) layers `L`.
    pub layers: usize,
    /// Kernel side `S`.
    pub kernel: usize,
    /// Feature maps per encoder layer; the decoder mirrors them.
    pub feature_maps: Vec<usize>,
    /// Pooling window side `S_m`.
    pub pool: usize,
    /// GRU width `D_h`.
    pub hidden: usize,
    /// Gradient-descent step `α`.
    pub learn_rate: f64,
    /// Full-batch epochs `e`.
    pub epochs: usize,
    /// Input frames per training window `T`.
    pub seq_len: usize,
    /// Seed of the weight initialisation.
    pub seed: u64,
    /// Half-width of the uniform weight initialisation.
    pub init_range: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            grid_side: 32,
            layers: 2,
            kernel: 5,
            feature_maps: vec![4, 8],
            pool: 2,
            hidden: 32,
            learn_rate: 1e-3,
            epochs: 200,
            seq_len: 4,
            seed: 0,
            init_range: 0.08,
        }
    }
}

/// Sizes flowing through one encoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input_side: usize,
    pub conv_side: usize,
    pub pooled_side: usize,
    pub in_maps: usize,
    pub out_maps: usize,
}

impl PredictorConfig {
    /// Per-layer sizes; fails unless every layer yields integral sizes.
    pub fn shapes(&self) -> Result<Vec<LayerShape>, PredictorError> {
        let bad = |msg: String| Err(PredictorError::Config(msg));
        if self.layers == 0 || self.feature_maps.len() != self.layers {
            return bad(format!("{} layers but {} feature-map counts", self.layers, self.feature_maps.len()));
        }
        if self.kernel == 0 || self.pool == 0 || self.hidden == 0 || self.seq_len == 0 {
            return bad("kernel, pool, hidden and seq_len must be positive".into());
        }
        if self.feature_maps.contains(&0) {
            return bad("feature-map counts must be positive".into());
        }
        let mut side = self.grid_side;
        let mut in_maps = 1;
        let mut shapes = Vec::with_capacity(self.layers);
        for (l, &out_maps) in self.feature_maps.iter().enumerate() {
            if side < self.kernel {
                return bad(format!("layer {}: side {side} smaller than kernel {}", l + 1, self.kernel));
            }
            let conv_side = side - self.kernel + 1;
            if conv_side % self.pool != 0 {
                return bad(format!(
                    "layer {}: convolution output side {conv_side} not divisible by pooling window {}",
                    l + 1,
                    self.pool
                ));
            }
            let pooled_side = conv_side / self.pool;
            shapes.push(LayerShape { input_side: side, conv_side, pooled_side, in_maps, out_maps });
            side = pooled_side;
            in_maps = out_maps;
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        self.shapes()?;
        if !(self.learn_rate.is_finite() && self.learn_rate >= 0.0) {
            return Err(PredictorError::Config(format!("learn_rate {} must be >= 0", self.learn_rate)));
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            return Err(PredictorError::Config(format!("init_range {} must be >= 0", self.init_range)));
        }
        Ok(())
    }

    /// Length `N = λ_L² · K_L` of the encoded feature vector.
    pub fn feature_len(&self) -> Result<usize, PredictorError> {
        let last = *self.shapes()?.last().expect("at least one layer");
        Ok(last.pooled_side * last.pooled_side * last.out_maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_consistent() {
        let cfg = PredictorConfig::default();
        let shapes = cfg.shapes().unwrap();
        assert_eq!(shapes[0].conv_side, 28);
        assert_eq!(shapes[0].pooled_side, 14);
        assert_eq!(shapes[1].conv_side, 10);
        assert_eq!(shapes[1].pooled_side, 5);
        assert_eq!(cfg.feature_len().unwrap(), 200);
    }

    #[test]
    fn rejects_non_integral_layer_sizes() {
        // 32 -> 30 -> 15 -> 13 cannot be pooled by 2
        let cfg = PredictorConfig { kernel: 3, ..Default::default() };
        assert!(matches!(cfg.shapes(), Err(PredictorError::Config(_))));
        let cfg = PredictorConfig { feature_maps: vec![4], ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = PredictorConfig { learn_rate: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tiny_gradient_check_config() {
        let cfg = PredictorConfig {
            grid_side: 8,
            layers: 1,
            kernel: 3,
            feature_maps: vec![2],
            hidden: 4,
            seq_len: 2,
            ..Default::default()
        };
        assert_eq!(cfg.feature_len().unwrap(), 18);
    }
}

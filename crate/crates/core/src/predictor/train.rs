use rayon::prelude::*;

use super::model::{encode_frame, encoder_backward, head_gradient, target_map, EncodeTrace, PredictorWeights};
use super::tensor::Map;
use super::{PredictorConfig, PredictorError};
use crate::illum::{GridSequence, IlluminationGrid};

/// `seq_len` consecutive input frames and the frame that follows them.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub inputs: &'a [IlluminationGrid],
    pub target: &'a IlluminationGrid,
}

/// Every sliding window of every sequence, in sequence then time order.
pub fn training_windows(dataset: &[GridSequence], seq_len: usize) -> Vec<Window<'_>> {
    let mut out = Vec::new();
    for seq in dataset {
        let frames = seq.frames();
        for start in 0..frames.len().saturating_sub(seq_len) {
            out.push(Window { inputs: &frames[start..start + seq_len], target: &frames[start + seq_len] });
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub config: PredictorConfig,
    pub weights: PredictorWeights,
    /// Full-batch loss at the start of every epoch.
    pub loss_trace: Vec<f64>,
    /// Full-batch loss of the returned weights.
    pub final_loss: f64,
}

/// Seeded initialisation followed by [`train_from`].
pub fn train(dataset: &[GridSequence], cfg: &PredictorConfig) -> Result<TrainedPredictor, PredictorError> {
    let weights = PredictorWeights::init(cfg)?;
    train_from(weights, dataset, cfg)
}

/// Full-batch gradient descent on the mean window loss.
///
/// Each epoch encodes every frame once, runs the GRU and decoder per window
/// in parallel, and back-propagates the summed feature gradients of each
/// frame through its encoding once. All reductions run in a fixed order, so
/// results are bit-reproducible.
pub fn train_from(
    mut weights: PredictorWeights,
    dataset: &[GridSequence],
    cfg: &PredictorConfig,
) -> Result<TrainedPredictor, PredictorError> {
    cfg.validate()?;
    weights.check_shapes(cfg)?;
    if dataset.iter().any(|s| s.len() < cfg.seq_len + 1) || dataset.is_empty() {
        return Err(PredictorError::NoTrainingData { needed: cfg.seq_len + 1 });
    }
    let shapes = cfg.shapes()?;
    let targets: Vec<Vec<Map>> = dataset
        .iter()
        .map(|s| s.frames().iter().map(|f| target_map(f, cfg)).collect())
        .collect::<Result<_, _>>()?;
    // (sequence, first input frame)
    let windows: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.len() - cfg.seq_len).map(move |t| (i, t)))
        .collect();
    let scale = 1.0 / windows.len() as f64;

    let batch = |w: &PredictorWeights| -> Result<(f64, PredictorWeights), PredictorError> {
        let encodes: Vec<Vec<EncodeTrace>> = dataset
            .par_iter()
            .map(|s| s.frames().iter().map(|f| encode_frame(f, w, cfg)).collect())
            .collect::<Result<_, _>>()?;
        let heads: Vec<(f64, PredictorWeights, Vec<Vec<f64>>)> = windows
            .par_iter()
            .map(|&(i, t)| {
                let inputs: Vec<&EncodeTrace> = encodes[i][t..t + cfg.seq_len].iter().collect();
                let mut g = PredictorWeights::zeros(cfg)?;
                let (v, dxs) = head_gradient(&inputs, &targets[i][t + cfg.seq_len], w, cfg, &shapes, &mut g)?;
                Ok((v, g, dxs))
            })
            .collect::<Result<_, PredictorError>>()?;

        let mut total = PredictorWeights::zeros(cfg)?;
        let mut value = 0.0;
        let n = cfg.feature_len()?;
        let mut d_features: Vec<Vec<Vec<f64>>> = dataset.iter().map(|s| vec![vec![0.0; n]; s.len()]).collect();
        for (&(i, t), (v, g, dxs)) in windows.iter().zip(&heads) {
            value += v;
            total.axpy(scale, g);
            for (k, dx) in dxs.iter().enumerate() {
                for (acc, d) in d_features[i][t + k].iter_mut().zip(dx) {
                    *acc += scale * d;
                }
            }
        }
        let frame_grads: Vec<PredictorWeights> = encodes
            .par_iter()
            .zip(&d_features)
            .flat_map_iter(|(encs, dfs)| encs.iter().zip(dfs))
            .map(|(enc, df)| {
                let mut g = PredictorWeights::zeros(cfg)?;
                if df.iter().any(|&v| v != 0.0) {
                    encoder_backward(enc, df, w, &mut g, &shapes);
                }
                Ok(g)
            })
            .collect::<Result<_, PredictorError>>()?;
        for g in &frame_grads {
            for (dst, src) in total.encoder.iter_mut().zip(&g.encoder) {
                dst.add_assign(src);
            }
        }
        Ok((value * scale, total))
    };

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (value, grad) = batch(&weights)?;
        if !value.is_finite() {
            return Err(PredictorError::Divergence { epoch, loss: value });
        }
        loss_trace.push(value);
        log::debug!("epoch {epoch}: loss {value:.6e}");
        if cfg.learn_rate > 0.0 {
            weights.axpy(-cfg.learn_rate, &grad);
        }
        if !weights.is_finite() {
            return Err(PredictorError::Divergence { epoch, loss: f64::NAN });
        }
    }
    let final_loss = batch(&weights)?.0;
    if !final_loss.is_finite() {
        return Err(PredictorError::Divergence { epoch: cfg.epochs, loss: final_loss });
    }
    Ok(TrainedPredictor { config: cfg.clone(), weights, loss_trace, final_loss })
}

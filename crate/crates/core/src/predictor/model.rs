use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gru::{gru_step, gru_step_backward, GruState, GruWeights};
use super::layers::{
    conv_backward, conv_forward, deconv_backward, deconv_forward, maxpool_forward, pool_backward, unpool,
    unpool_backward, ConvLayer, Switches,
};
use super::tensor::{sum_maps, Map, Mat};
use super::{LayerShape, PredictorConfig, PredictorError};
use crate::illum::IlluminationGrid;

/// All trainable tensors. Decoder layer `j` mirrors encoder layer `L-1-j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWeights {
    pub encoder: Vec<ConvLayer>,
    pub gru: GruWeights,
    /// Readout `N × D_h`.
    pub w_o: Mat,
    pub decoder: Vec<ConvLayer>,
}

impl PredictorWeights {
    pub fn zeros(cfg: &PredictorConfig) -> Result<Self, PredictorError> {
        let shapes = cfg.shapes()?;
        let n = cfg.feature_len()?;
        Ok(Self {
            encoder: shapes.iter().map(|s| ConvLayer::zeros(cfg.kernel, s.out_maps)).collect(),
            gru: GruWeights::zeros(n, cfg.hidden),
            w_o: Mat::zeros(n, cfg.hidden),
            decoder: shapes.iter().rev().map(|s| ConvLayer::zeros(cfg.kernel, s.in_maps)).collect(),
        })
    }

    /// Seeded uniform initialisation on `±init_range`.
    pub fn init(cfg: &PredictorConfig) -> Result<Self, PredictorError> {
        cfg.validate()?;
        let shapes = cfg.shapes()?;
        let n = cfg.feature_len()?;
        let r = cfg.init_range;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = shapes.iter().map(|s| ConvLayer::random(cfg.kernel, s.out_maps, r, &mut rng)).collect();
        let gru = GruWeights::random(n, cfg.hidden, r, &mut rng);
        let w_o = Mat::random(n, cfg.hidden, r, &mut rng);
        let decoder = shapes.iter().rev().map(|s| ConvLayer::random(cfg.kernel, s.in_maps, r, &mut rng)).collect();
        Ok(Self { encoder, gru, w_o, decoder })
    }

    /// Named tensors in a fixed order: encoder, GRU, readout, decoder.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (l, c) in self.encoder.iter().enumerate() {
            out.push((format!("enc{l}.kernels"), &c.kernels));
            out.push((format!("enc{l}.biases"), &c.biases));
        }
        let g = &self.gru;
        for (name, m) in [("w_r", &g.w_r), ("u_r", &g.u_r), ("w_z", &g.w_z), ("u_z", &g.u_z), ("w_h", &g.w_h), ("u_h", &g.u_h)]
        {
            out.push((format!("gru.{name}"), &m.data));
        }
        out.push(("w_o".into(), &self.w_o.data));
        for (l, c) in self.decoder.iter().enumerate() {
            out.push((format!("dec{l}.kernels"), &c.kernels));
            out.push((format!("dec{l}.biases"), &c.biases));
        }
        out
    }

    /// Mutable views in the order of [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.encoder {
            out.push(&mut c.kernels);
            out.push(&mut c.biases);
        }
        let g = &mut self.gru;
        for m in [&mut g.w_r, &mut g.u_r, &mut g.w_z, &mut g.u_z, &mut g.w_h, &mut g.u_h] {
            out.push(&mut m.data);
        }
        out.push(&mut self.w_o.data);
        for c in &mut self.decoder {
            out.push(&mut c.kernels);
            out.push(&mut c.biases);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha · other`
    pub(crate) fn axpy(&mut self, alpha: f64, other: &PredictorWeights) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    /// Fails unless every tensor has the size `cfg` implies.
    pub fn check_shapes(&self, cfg: &PredictorConfig) -> Result<(), PredictorError> {
        let want = PredictorWeights::zeros(cfg)?;
        let ours = self.tensors();
        let theirs = want.tensors();
        let kernels_ok = self.encoder.iter().chain(&self.decoder).all(|c| c.kernel == cfg.kernel);
        if ours.len() != theirs.len() || !kernels_ok || ours.iter().zip(&theirs).any(|(a, b)| a.1.len() != b.1.len()) {
            return Err(PredictorError::Shape {
                what: "weights",
                detail: "tensor sizes do not match the configuration".into(),
            });
        }
        Ok(())
    }
}

/// Activations of one encoder layer.
#[derive(Debug, Clone)]
pub struct EncodedLayer {
    pub conv: Vec<Map>,
    pub pooled: Vec<Map>,
    pub switches: Vec<Switches>,
}

/// Every activation of one frame's encoding plus the flattened features.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub input: Map,
    pub layers: Vec<EncodedLayer>,
    pub features: Vec<f64>,
}

impl EncodeTrace {
    /// Switch sets of every layer, outermost first.
    pub fn switches(&self) -> Vec<Vec<Switches>> {
        self.layers.iter().map(|l| l.switches.clone()).collect()
    }
}

fn flatten(maps: &[Map]) -> Vec<f64> {
    maps.iter().flat_map(|m| m.data.iter().copied()).collect()
}

fn unflatten(v: &[f64], side: usize) -> Vec<Map> {
    v.chunks_exact(side * side).map(|c| Map::from_vec(side, c.to_vec())).collect()
}

fn grid_map(grid: &IlluminationGrid, cfg: &PredictorConfig) -> Result<Map, PredictorError> {
    if grid.side() != cfg.grid_side {
        return Err(PredictorError::Shape {
            what: "encode",
            detail: format!("grid side {} but the model expects {}", grid.side(), cfg.grid_side),
        });
    }
    Ok(Map::from_vec(grid.side(), grid.values().to_vec()))
}

fn check_weights(w: &PredictorWeights, cfg: &PredictorConfig) -> Result<Vec<LayerShape>, PredictorError> {
    w.check_shapes(cfg)?;
    cfg.shapes()
}

fn encode_map(input: Map, w: &PredictorWeights, cfg: &PredictorConfig) -> Result<EncodeTrace, PredictorError> {
    let mut layers = Vec::with_capacity(w.encoder.len());
    let mut current = vec![input.clone()];
    for layer in &w.encoder {
        let conv = conv_forward(&current, layer)?;
        let (pooled, switches) = maxpool_forward(&conv, cfg.pool)?;
        current = pooled.clone();
        layers.push(EncodedLayer { conv, pooled, switches });
    }
    Ok(EncodeTrace { input, layers, features: flatten(&current) })
}

/// Encodes one frame into an `N`-vector (map-major flattening).
pub fn encode(
    grid: &IlluminationGrid,
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<EncodeTrace, PredictorError> {
    check_weights(weights, cfg)?;
    encode_map(grid_map(grid, cfg)?, weights, cfg)
}

fn run_gru(xs: &[Vec<f64>], w: &PredictorWeights) -> Result<(Vec<GruState>, Vec<f64>), PredictorError> {
    let mut h = vec![0.0; w.gru.hidden()];
    let mut states = Vec::with_capacity(xs.len());
    for x in xs {
        let s = gru_step(x, &h, &w.gru)?;
        h = s.h.clone();
        states.push(s);
    }
    let y = w.w_o.matvec(&h);
    Ok((states, y))
}

/// Runs the GRU from a zero state over `xs` and reads out `W_o h_T`.
pub fn predict_features(xs: &[Vec<f64>], weights: &PredictorWeights) -> Result<Vec<f64>, PredictorError> {
    if xs.is_empty() {
        return Err(PredictorError::EmptySequence);
    }
    Ok(run_gru(xs, weights)?.1)
}

/// Activations of one decoder layer.
#[derive(Debug, Clone)]
struct DecodedLayer {
    unpooled: Vec<Map>,
    out: Vec<Map>,
}

fn decode_trace(
    x: &[f64],
    switches: &[Vec<Switches>],
    w: &PredictorWeights,
    shapes: &[LayerShape],
) -> Result<Vec<DecodedLayer>, PredictorError> {
    let last = shapes.last().expect("at least one layer");
    if x.len() != last.pooled_side * last.pooled_side * last.out_maps || switches.len() != shapes.len() {
        return Err(PredictorError::Shape {
            what: "decode",
            detail: format!("{} features and {} switch layers", x.len(), switches.len()),
        });
    }
    let mut maps = unflatten(x, last.pooled_side);
    let mut out = Vec::with_capacity(shapes.len());
    for (j, layer) in w.decoder.iter().enumerate() {
        let l = shapes.len() - 1 - j;
        let unpooled = unpool(&maps, &switches[l], shapes[l].conv_side)?;
        let produced = deconv_forward(&unpooled, layer)?;
        maps = produced.clone();
        out.push(DecodedLayer { unpooled, out: produced });
    }
    Ok(out)
}

/// Decodes a feature vector into a grid using the given pooling switches
/// (outermost layer first). The result has unit cells at the origin.
pub fn decode(
    x: &[f64],
    switches: &[Vec<Switches>],
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<IlluminationGrid, PredictorError> {
    let shapes = check_weights(weights, cfg)?;
    let trace = decode_trace(x, switches, weights, &shapes)?;
    let map = trace.into_iter().last().expect("at least one layer").out.remove(0);
    Ok(IlluminationGrid::new(map.side, map.data, 1.0, (0.0, 0.0)).expect("ReLU output is a valid grid"))
}

/// `E = 1/(2λ0²) Σ (pred - actual)²`
pub fn loss(pred: &IlluminationGrid, actual: &IlluminationGrid) -> Result<f64, PredictorError> {
    if pred.side() != actual.side() {
        return Err(PredictorError::Shape {
            what: "loss",
            detail: format!("sides {} and {}", pred.side(), actual.side()),
        });
    }
    Ok(map_loss(pred.values(), actual.values(), pred.side()))
}

fn map_loss(pred: &[f64], actual: &[f64], side: usize) -> f64 {
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    sse / (2.0 * (side * side) as f64)
}

/// Predicts the frame following `frames`, with the geometry of the last
/// input frame.
pub fn predict_next(
    frames: &[IlluminationGrid],
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<IlluminationGrid, PredictorError> {
    let last = frames.last().ok_or(PredictorError::EmptySequence)?;
    let trace = forward_window(frames, weights, cfg)?;
    let out = trace.output().clone();
    Ok(IlluminationGrid::new(out.side, out.data, last.cell_size(), last.origin()).expect("ReLU output is a valid grid"))
}

/// Full forward pass over one window of input frames.
#[derive(Debug, Clone)]
pub struct WindowTrace {
    encodes: Vec<EncodeTrace>,
    decoded: Vec<DecodedLayer>,
}

impl WindowTrace {
    pub fn output(&self) -> &Map {
        &self.decoded.last().expect("at least one layer").out[0]
    }

    pub fn encodes(&self) -> &[EncodeTrace] {
        &self.encodes
    }

    /// Discrete activation pattern: every ReLU on/off bit and every pooling
    /// switch. Within a region of constant pattern the loss is smooth.
    pub fn pattern(&self) -> Vec<usize> {
        let mut p = Vec::new();
        let bits = |maps: &[Map], p: &mut Vec<usize>| {
            for m in maps {
                p.extend(m.data.iter().map(|&v| usize::from(v > 0.0)));
            }
        };
        for e in &self.encodes {
            for l in &e.layers {
                bits(&l.conv, &mut p);
                for sw in &l.switches {
                    p.extend_from_slice(sw);
                }
            }
        }
        for d in &self.decoded {
            bits(&d.out, &mut p);
        }
        p
    }
}

/// Encodes every frame, runs the GRU, and decodes with the switches of the
/// last frame.
pub fn forward_window(
    frames: &[IlluminationGrid],
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<WindowTrace, PredictorError> {
    if frames.is_empty() {
        return Err(PredictorError::EmptySequence);
    }
    let shapes = check_weights(weights, cfg)?;
    let encodes = frames
        .iter()
        .map(|g| encode_map(grid_map(g, cfg)?, weights, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<Vec<f64>> = encodes.iter().map(|e| e.features.clone()).collect();
    let y = run_gru(&xs, weights)?.1;
    let switches = encodes.last().expect("non-empty").switches();
    let decoded = decode_trace(&y, &switches, weights, &shapes)?;
    Ok(WindowTrace { encodes, decoded })
}

pub fn window_loss(
    frames: &[IlluminationGrid],
    target: &IlluminationGrid,
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<f64, PredictorError> {
    let trace = forward_window(frames, weights, cfg)?;
    let target = grid_map(target, cfg)?;
    Ok(map_loss(&trace.output().data, &target.data, cfg.grid_side))
}

/// Loss and its exact gradient (backpropagation through time) for one
/// window. Pooling switches are treated as constants.
pub fn window_gradient(
    frames: &[IlluminationGrid],
    target: &IlluminationGrid,
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<(f64, PredictorWeights), PredictorError> {
    if frames.is_empty() {
        return Err(PredictorError::EmptySequence);
    }
    let shapes = check_weights(weights, cfg)?;
    let encodes = frames
        .iter()
        .map(|g| encode_map(grid_map(g, cfg)?, weights, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let target = grid_map(target, cfg)?;
    let refs: Vec<&EncodeTrace> = encodes.iter().collect();
    let mut grad = PredictorWeights::zeros(cfg)?;
    let (value, dxs) = head_gradient(&refs, &target, weights, cfg, &shapes, &mut grad)?;
    for (enc, dx) in encodes.iter().zip(&dxs) {
        encoder_backward(enc, dx, weights, &mut grad, &shapes);
    }
    Ok((value, grad))
}

/// Encodes one frame after checking it against the configuration.
pub(crate) fn encode_frame(
    grid: &IlluminationGrid,
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
) -> Result<EncodeTrace, PredictorError> {
    encode_map(grid_map(grid, cfg)?, weights, cfg)
}

pub(crate) fn target_map(grid: &IlluminationGrid, cfg: &PredictorConfig) -> Result<Map, PredictorError> {
    grid_map(grid, cfg)
}

/// Forward and backward through the GRU and decoder on pre-computed
/// encodings. Accumulates GRU, readout and decoder gradients into `grad`
/// and returns the loss with `∂E/∂x_t` for every time step.
pub(crate) fn head_gradient(
    encodes: &[&EncodeTrace],
    target: &Map,
    weights: &PredictorWeights,
    cfg: &PredictorConfig,
    shapes: &[LayerShape],
    grad: &mut PredictorWeights,
) -> Result<(f64, Vec<Vec<f64>>), PredictorError> {
    let xs: Vec<Vec<f64>> = encodes.iter().map(|e| e.features.clone()).collect();
    let (states, y) = run_gru(&xs, weights)?;
    let last = encodes.last().ok_or(PredictorError::EmptySequence)?;
    let decoded = decode_trace(&y, &last.switches(), weights, shapes)?;

    let out = &decoded.last().expect("at least one layer").out[0];
    let value = map_loss(&out.data, &target.data, cfg.grid_side);
    let scale = 1.0 / (cfg.grid_side * cfg.grid_side) as f64;
    let d_out = Map::from_vec(out.side, out.data.iter().zip(&target.data).map(|(p, a)| (p - a) * scale).collect());

    // decoder
    let nl = shapes.len();
    let mut d_maps = vec![d_out];
    for j in (0..nl).rev() {
        let l = nl - 1 - j;
        let dec = &decoded[j];
        let summed = sum_maps(&dec.unpooled);
        let d_unpooled = deconv_backward(&summed, &dec.out, &d_maps, &weights.decoder[j], &mut grad.decoder[j]);
        d_maps = unpool_backward(&d_unpooled, &last.layers[l].switches, shapes[l].pooled_side);
    }
    let dy = flatten(&d_maps);

    // readout and recurrence
    let h_t = &states.last().expect("non-empty").h;
    grad.w_o.outer_acc(&dy, h_t);
    let mut dh = vec![0.0; cfg.hidden];
    weights.w_o.matvec_t_acc(&dy, &mut dh);
    let zero_h = vec![0.0; cfg.hidden];
    let mut dxs = vec![vec![0.0; dy.len()]; states.len()];
    for t in (0..states.len()).rev() {
        let h_prev = if t == 0 { &zero_h } else { &states[t - 1].h };
        dh = gru_step_backward(&xs[t], h_prev, &states[t], &dh, &weights.gru, &mut grad.gru, &mut dxs[t]);
    }
    Ok((value, dxs))
}

/// Backward through the encoder of one frame given `∂E/∂x`; accumulates
/// into `grad.encoder`.
pub(crate) fn encoder_backward(
    enc: &EncodeTrace,
    dx: &[f64],
    w: &PredictorWeights,
    grad: &mut PredictorWeights,
    shapes: &[LayerShape],
) {
    let last = shapes.last().expect("at least one layer");
    let mut d_pooled = unflatten(dx, last.pooled_side);
    for l in (0..shapes.len()).rev() {
        let layer = &enc.layers[l];
        let d_conv = pool_backward(&d_pooled, &layer.switches, shapes[l].conv_side);
        let summed = if l == 0 { enc.input.clone() } else { sum_maps(&enc.layers[l - 1].pooled) };
        let d_in = conv_backward(&summed, &layer.conv, &d_conv, &w.encoder[l], &mut grad.encoder[l], l > 0);
        if let Some(d) = d_in {
            d_pooled = vec![d; shapes[l].in_maps];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::illum::{synth_sequence, SynthConfig};

    fn tiny() -> PredictorConfig {
        PredictorConfig {
            grid_side: 8,
            layers: 1,
            kernel: 3,
            feature_maps: vec![2],
            hidden: 4,
            seq_len: 2,
            init_range: 0.5,
            seed: 3,
            ..Default::default()
        }
    }

    fn frames(side: usize, n: usize, seed: u64) -> Vec<IlluminationGrid> {
        let cfg = SynthConfig { side, frames: n, ..Default::default() };
        synth_sequence(seed, &cfg).unwrap().frames().to_vec()
    }

    #[test]
    fn zero_weights_predict_zero() {
        let cfg = PredictorConfig::default();
        let w = PredictorWeights::zeros(&cfg).unwrap();
        let f = frames(32, 4, 1);
        let p = predict_next(&f, &w, &cfg).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let e = encode(&f[0], &w, &cfg).unwrap();
        assert_eq!(e.features.len(), 200);
        assert!(e.features.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_is_half_mean_square() {
        let a = IlluminationGrid::uniform(4, 1.0, 1.0).unwrap();
        let b = IlluminationGrid::uniform(4, 3.0, 1.0).unwrap();
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
        assert!((loss(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        let c = IlluminationGrid::uniform(5, 3.0, 1.0).unwrap();
        assert!(loss(&a, &c).is_err());
    }

    #[test]
    fn output_geometry_and_nonnegativity() {
        let cfg = PredictorConfig { seed: 9, ..Default::default() };
        let w = PredictorWeights::init(&cfg).unwrap();
        let f = frames(32, 4, 2);
        let p = predict_next(&f, &w, &cfg).unwrap();
        assert_eq!(p.side(), 32);
        assert_eq!(p.cell_size(), f[3].cell_size());
        assert!(p.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let cfg = tiny();
        let w = PredictorWeights::init(&cfg).unwrap();
        assert!(matches!(predict_next(&[], &w, &cfg), Err(PredictorError::EmptySequence)));
        assert!(predict_next(&frames(12, 2, 1), &w, &cfg).is_err());
        let other = PredictorConfig { hidden: 5, ..tiny() };
        assert!(predict_next(&frames(8, 2, 1), &w, &other).is_err());
        assert!(matches!(predict_features(&[], &w), Err(PredictorError::EmptySequence)));
    }

    #[test]
    fn tensor_order_and_count() {
        let cfg = tiny();
        let w = PredictorWeights::zeros(&cfg).unwrap();
        let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.first().unwrap(), "enc0.kernels");
        assert_eq!(names.last().unwrap(), "dec0.biases");
        // conv 2·9+2, GRU 3·(4·18 + 16), readout 18·4, deconv 9+1
        assert_eq!(w.param_count(), 20 + 264 + 72 + 10);
    }

    #[test]
    fn decode_with_explicit_switches() {
        let cfg = tiny();
        let w = PredictorWeights::init(&cfg).unwrap();
        let f = frames(8, 2, 5);
        let trace = forward_window(&f, &w, &cfg).unwrap();
        let sw = trace.encodes().last().unwrap().switches();
        let xs: Vec<Vec<f64>> = trace.encodes().iter().map(|e| e.features.clone()).collect();
        let y = predict_features(&xs, &w).unwrap();
        let g = decode(&y, &sw, &w, &cfg).unwrap();
        assert_eq!(g.values(), &trace.output().data[..]);
        assert!(decode(&y[1..], &sw, &w, &cfg).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = tiny();
        let w = PredictorWeights::init(&cfg).unwrap();
        let f = frames(8, 3, 11);
        let (inputs, target) = (&f[..2], &f[2]);
        let (value, grad) = window_gradient(inputs, target, &w, &cfg).unwrap();
        assert!((value - window_loss(inputs, target, &w, &cfg).unwrap()).abs() < 1e-15);
        let base_pattern = forward_window(inputs, &w, &cfg).unwrap().pattern();
        let analytic: Vec<Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        let h = 1e-6;
        let mut checked = 0;
        for (ti, ga) in analytic.iter().enumerate() {
            for (pi, &a) in ga.iter().enumerate() {
                let mut plus = w.clone();
                plus.tensors_mut()[ti][pi] += h;
                let mut minus = w.clone();
                minus.tensors_mut()[ti][pi] -= h;
                if forward_window(inputs, &plus, &cfg).unwrap().pattern() != base_pattern
                    || forward_window(inputs, &minus, &cfg).unwrap().pattern() != base_pattern
                {
                    continue;
                }
                let num = (window_loss(inputs, target, &plus, &cfg).unwrap()
                    - window_loss(inputs, target, &minus, &cfg).unwrap())
                    / (2.0 * h);
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-10);
                assert!(rel < 1e-4 || (a - num).abs() < 1e-9, "tensor {ti} entry {pi}: {a} vs {num}");
                checked += 1;
            }
        }
        assert!(checked > 300, "only {checked} parameters checked");
    }
}

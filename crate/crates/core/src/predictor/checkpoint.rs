//! Text checkpoint of a trained forecaster.
//!
//! ```text
//! vlcuav-predictor 1
//! grid_side 32
//! layers 2
//! kernel 5
//! feature_maps 4 8
//! pool 2
//! hidden 32
//! learn_rate 1e-3
//! epochs 200
//! seq_len 4
//! seed 0
//! init_range 8e-2
//! tensor enc0.kernels 100
//! <100 values on one line>
//! ...
//! end
//! ```
//!
//! Tensors follow [`PredictorWeights::tensors`]: encoder kernels and biases
//! per layer, the six GRU matrices (`w_r u_r w_z u_z w_h u_h`), the readout
//! `w_o`, then decoder kernels and biases per layer. Matrices are row-major
//! and values use shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::Path;

use super::model::PredictorWeights;
use super::{PredictorConfig, PredictorError};

const MAGIC: &str = "vlcuav-predictor";
const VERSION: u32 = 1;

pub fn write_checkpoint(cfg: &PredictorConfig, weights: &PredictorWeights) -> String {
    let mut s = String::new();
    let maps: Vec<String> = cfg.feature_maps.iter().map(|k| k.to_string()).collect();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "grid_side {}", cfg.grid_side);
    let _ = writeln!(s, "layers {}", cfg.layers);
    let _ = writeln!(s, "kernel {}", cfg.kernel);
    let _ = writeln!(s, "feature_maps {}", maps.join(" "));
    let _ = writeln!(s, "pool {}", cfg.pool);
    let _ = writeln!(s, "hidden {}", cfg.hidden);
    let _ = writeln!(s, "learn_rate {:e}", cfg.learn_rate);
    let _ = writeln!(s, "epochs {}", cfg.epochs);
    let _ = writeln!(s, "seq_len {}", cfg.seq_len);
    let _ = writeln!(s, "seed {}", cfg.seed);
    let _ = writeln!(s, "init_range {:e}", cfg.init_range);
    for (name, data) in weights.tensors() {
        let _ = writeln!(s, "tensor {name} {}", data.len());
        let vals: Vec<String> = data.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s.push_str("end\n");
    s
}

fn err(msg: impl Into<String>) -> PredictorError {
    PredictorError::Checkpoint(msg.into())
}

pub fn parse_checkpoint(text: &str) -> Result<(PredictorConfig, PredictorWeights), PredictorError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| err(format!("unexpected end of file, expected {what}")));

    let (_, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(err("not a predictor checkpoint"));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(err(format!("unsupported checkpoint version {other:?}"))),
    }

    let mut field = |key: &str| -> Result<String, PredictorError> {
        let (n, line) = next(key)?;
        let (k, v) = line.trim().split_once(' ').ok_or_else(|| err(format!("line {}: malformed", n + 1)))?;
        if k != key {
            return Err(err(format!("line {}: expected `{key}`, found `{k}`", n + 1)));
        }
        Ok(v.trim().to_string())
    };
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, PredictorError> {
        v.parse().map_err(|_| err(format!("{key}: cannot parse `{v}`")))
    }

    let grid_side = num("grid_side", &field("grid_side")?)?;
    let layers = num("layers", &field("layers")?)?;
    let kernel = num("kernel", &field("kernel")?)?;
    let feature_maps = field("feature_maps")?
        .split_whitespace()
        .map(|v| num("feature_maps", v))
        .collect::<Result<Vec<usize>, _>>()?;
    let pool = num("pool", &field("pool")?)?;
    let hidden = num("hidden", &field("hidden")?)?;
    let learn_rate = num("learn_rate", &field("learn_rate")?)?;
    let epochs = num("epochs", &field("epochs")?)?;
    let seq_len = num("seq_len", &field("seq_len")?)?;
    let seed = num("seed", &field("seed")?)?;
    let init_range = num("init_range", &field("init_range")?)?;
    drop(field);
    let cfg = PredictorConfig {
        grid_side,
        layers,
        kernel,
        feature_maps,
        pool,
        hidden,
        learn_rate,
        epochs,
        seq_len,
        seed,
        init_range,
    };
    cfg.validate()?;

    let mut weights = PredictorWeights::zeros(&cfg)?;
    let names: Vec<String> = weights.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, dst) in names.iter().zip(weights.tensors_mut()) {
        let (n, line) = next("tensor header")?;
        let head: Vec<&str> = line.split_whitespace().collect();
        if head.len() != 3 || head[0] != "tensor" || head[1] != name {
            return Err(err(format!("line {}: expected tensor `{name}`", n + 1)));
        }
        let len: usize = num("tensor length", head[2])?;
        if len != dst.len() {
            return Err(err(format!("tensor {name}: {len} values but the configuration implies {}", dst.len())));
        }
        let (n, line) = next("tensor values")?;
        let vals = line.split_whitespace().map(|v| num::<f64>(name, v)).collect::<Result<Vec<_>, _>>()?;
        if vals.len() != len {
            return Err(err(format!("line {}: {} values, expected {len}", n + 1, vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err(format!("tensor {name}: non-finite value")));
        }
        dst.copy_from_slice(&vals);
    }
    match next("end") {
        Ok((_, l)) if l.trim() == "end" => {}
        _ => return Err(err("missing `end` marker")),
    }
    if let Some((n, _)) = lines.next() {
        return Err(err(format!("line {}: trailing data after `end`", n + 1)));
    }
    Ok((cfg, weights))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    cfg: &PredictorConfig,
    weights: &PredictorWeights,
) -> Result<(), PredictorError> {
    std::fs::write(path, write_checkpoint(cfg, weights))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PredictorConfig, PredictorWeights), PredictorError> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Loads a checkpoint and rejects it unless its architecture (grid side,
/// layers, kernel, feature maps, pool, hidden width, sequence length)
/// equals `expected`. Training hyper-parameters may differ.
pub fn load_checkpoint_matching(
    path: impl AsRef<Path>,
    expected: &PredictorConfig,
) -> Result<PredictorWeights, PredictorError> {
    let (cfg, weights) = load_checkpoint(path)?;
    let arch = |c: &PredictorConfig| (c.grid_side, c.layers, c.kernel, c.feature_maps.clone(), c.pool, c.hidden, c.seq_len);
    if arch(&cfg) != arch(expected) {
        return Err(err(format!(
            "architecture mismatch: checkpoint has {:?}, configuration wants {:?}",
            arch(&cfg),
            arch(expected)
        )));
    }
    Ok(weights)
}

//! Key-value experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Every key is
//! optional and unknown or repeated keys are rejected. System parameters
//! keep their conventional symbols (`Phi`, `Psi_c`, `eta_r`, `gamma`, ...).
//! [`ExperimentConfig::to_text`] prints the complete key list with the
//! current values, so the defaults are `ExperimentConfig::default().to_text()`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{HarnessError, Variant};
use crate::channel::{los_probability_at_elevation, VlcParams};
use crate::illum::SynthConfig;
use crate::optimizer::OptimizerOptions;
use crate::predictor::PredictorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: VlcParams,
    /// Recompute `params.b_bar` from `X`, `Y` at 90° elevation.
    pub b_bar_auto: bool,
    pub users: usize,
    pub uavs: usize,
    /// Per-user rate demand is drawn uniformly from this range.
    pub rate_range: (f64, f64),
    pub seed: u64,
    /// Independent data/user draws per sweep point.
    pub replicates: usize,
    /// Grid value to illuminance conversion factor.
    pub illum_scale: f64,
    /// Grid-sequence file; synthetic data when `None`.
    pub grid_file: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Synthetic sequences used for training.
    pub train_sequences: usize,
    pub predictor: PredictorConfig,
    /// Trained weights to load instead of training.
    pub checkpoint: Option<PathBuf>,
    pub optimizer: OptimizerOptions,
    pub variants: Vec<Variant>,
    pub oracle_resolution: usize,
    pub output_dir: PathBuf,
    /// Listed in the system parameter table without a definition; kept
    /// only so that configuration files may carry it.
    pub d_q: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let predictor = PredictorConfig::default();
        Self {
            params: VlcParams::default(),
            b_bar_auto: true,
            users: 12,
            uavs: 3,
            rate_range: (0.5, 1.5),
            seed: 1,
            replicates: 1,
            illum_scale: 2e-4,
            grid_file: None,
            synth: SynthConfig { side: predictor.grid_side, ..Default::default() },
            train_sequences: 8,
            predictor,
            checkpoint: None,
            optimizer: OptimizerOptions::default(),
            variants: Variant::ALL.to_vec(),
            oracle_resolution: 15,
            output_dir: PathBuf::from("out"),
            d_q: 16,
        }
    }
}

type Getter = fn(&ExperimentConfig) -> String;
type Setter = fn(&mut ExperimentConfig, &str) -> Result<(), String>;

struct Key {
    name: &'static str,
    help: &'static str,
    get: Getter,
    set: Setter,
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}`"))
}

fn flag(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

fn path(s: &str) -> Option<PathBuf> {
    (!s.is_empty() && s != "none").then(|| PathBuf::from(s))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("none".into(), |p| p.display().to_string())
}

fn list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',').map(|t| num(t.trim())).collect()
}

fn show_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

const KEYS: &[Key] = &[
    // system parameters
    Key { name: "Phi", help: "LED semiangle at half power, degrees", get: |c| c.params.phi_half.to_string(), set: |c, s| Ok(c.params.phi_half = num(s)?) },
    Key { name: "Psi_c", help: "receiver field-of-view semiangle, degrees", get: |c| c.params.psi_c.to_string(), set: |c, s| Ok(c.params.psi_c = num(s)?) },
    Key { name: "rho", help: "detector area, m^2", get: |c| c.params.rho.to_string(), set: |c, s| Ok(c.params.rho = num(s)?) },
    Key { name: "xi", help: "optical-to-electric conversion, A/W", get: |c| c.params.xi.to_string(), set: |c, s| Ok(c.params.xi = num(s)?) },
    Key { name: "n_e", help: "concentrator refractive index", get: |c| c.params.n_e.to_string(), set: |c, s| Ok(c.params.n_e = num(s)?) },
    Key { name: "n_w", help: "noise standard deviation", get: |c| c.params.n_w.to_string(), set: |c, s| Ok(c.params.n_w = num(s)?) },
    Key { name: "X", help: "LoS-probability environment parameter", get: |c| c.params.env_x.to_string(), set: |c, s| Ok(c.params.env_x = num(s)?) },
    Key { name: "Y", help: "LoS-probability environment parameter", get: |c| c.params.env_y.to_string(), set: |c, s| Ok(c.params.env_y = num(s)?) },
    Key { name: "eta_r", help: "illumination demand per user", get: |c| c.params.eta_r.to_string(), set: |c, s| Ok(c.params.eta_r = num(s)?) },
    Key { name: "H", help: "UAV altitude, m", get: |c| c.params.altitude.to_string(), set: |c, s| Ok(c.params.altitude = num(s)?) },
    Key { name: "d_min", help: "minimum squared UAV separation, m^2", get: |c| c.params.d_min.to_string(), set: |c, s| Ok(c.params.d_min = num(s)?) },
    Key {
        name: "B_bar",
        help: "homogeneous LoS probability; auto = value at 90 degrees elevation",
        get: |c| if c.b_bar_auto { "auto".into() } else { c.params.b_bar.to_string() },
        set: |c, s| {
            c.b_bar_auto = s == "auto";
            if !c.b_bar_auto {
                c.params.b_bar = num(s)?;
            }
            Ok(())
        },
    },
    // predictor
    Key { name: "lambda_0", help: "grid side of the forecaster input", get: |c| c.predictor.grid_side.to_string(), set: |c, s| Ok(c.predictor.grid_side = num(s)?) },
    Key { name: "L", help: "conv/deconv layer count", get: |c| c.predictor.layers.to_string(), set: |c, s| Ok(c.predictor.layers = num(s)?) },
    Key { name: "S", help: "kernel side", get: |c| c.predictor.kernel.to_string(), set: |c, s| Ok(c.predictor.kernel = num(s)?) },
    Key { name: "K", help: "feature maps per encoder layer, comma separated", get: |c| show_list(&c.predictor.feature_maps), set: |c, s| Ok(c.predictor.feature_maps = list(s)?) },
    Key { name: "S_m", help: "pooling window side", get: |c| c.predictor.pool.to_string(), set: |c, s| Ok(c.predictor.pool = num(s)?) },
    Key {
        name: "N",
        help: "encoder feature length; derived, auto or the derived value",
        get: |c| c.predictor.feature_len().map_or("auto".into(), |n| n.to_string()),
        // checked against the architecture once all keys are applied
        set: |_, s| if s == "auto" { Ok(()) } else { num::<usize>(s).map(drop) },
    },
    Key { name: "D_h", help: "GRU width", get: |c| c.predictor.hidden.to_string(), set: |c, s| Ok(c.predictor.hidden = num(s)?) },
    Key { name: "D_q", help: "carried for completeness, unused", get: |c| c.d_q.to_string(), set: |c, s| Ok(c.d_q = num(s)?) },
    Key { name: "alpha", help: "gradient-descent step", get: |c| c.predictor.learn_rate.to_string(), set: |c, s| Ok(c.predictor.learn_rate = num(s)?) },
    Key { name: "e", help: "training epochs", get: |c| c.predictor.epochs.to_string(), set: |c, s| Ok(c.predictor.epochs = num(s)?) },
    Key { name: "T", help: "input frames per forecast", get: |c| c.predictor.seq_len.to_string(), set: |c, s| Ok(c.predictor.seq_len = num(s)?) },
    Key { name: "init_range", help: "half-width of the uniform weight initialisation", get: |c| c.predictor.init_range.to_string(), set: |c, s| Ok(c.predictor.init_range = num(s)?) },
    Key { name: "train_sequences", help: "synthetic training sequences", get: |c| c.train_sequences.to_string(), set: |c, s| Ok(c.train_sequences = num(s)?) },
    Key { name: "checkpoint", help: "predictor checkpoint to load, or none to train", get: |c| show_path(&c.checkpoint), set: |c, s| Ok(c.checkpoint = path(s)) },
    // optimizer
    Key { name: "gamma", help: "placement dual step", get: |c| c.optimizer.gamma.to_string(), set: |c, s| Ok(c.optimizer.gamma = num(s)?) },
    Key { name: "delta", help: "association dual step", get: |c| c.optimizer.delta.to_string(), set: |c, s| Ok(c.optimizer.delta = num(s)?) },
    Key { name: "epsilon", help: "dual residual tolerance", get: |c| c.optimizer.epsilon.to_string(), set: |c, s| Ok(c.optimizer.epsilon = num(s)?) },
    Key { name: "max_inner", help: "dual iterations per placement subproblem", get: |c| c.optimizer.max_inner.to_string(), set: |c, s| Ok(c.optimizer.max_inner = num(s)?) },
    Key { name: "max_sca", help: "SCA iterations per placement", get: |c| c.optimizer.max_sca.to_string(), set: |c, s| Ok(c.optimizer.max_sca = num(s)?) },
    Key { name: "max_outer", help: "placement/association alternations", get: |c| c.optimizer.max_outer.to_string(), set: |c, s| Ok(c.optimizer.max_outer = num(s)?) },
    Key { name: "sca_tol", help: "relative SCA stopping tolerance", get: |c| c.optimizer.sca_tol.to_string(), set: |c, s| Ok(c.optimizer.sca_tol = num(s)?) },
    Key { name: "outer_tol", help: "relative alternation stopping tolerance", get: |c| c.optimizer.outer_tol.to_string(), set: |c, s| Ok(c.optimizer.outer_tol = num(s)?) },
    Key { name: "assoc_stable", help: "unchanged association iterations that end the dual loop", get: |c| c.optimizer.assoc_stable.to_string(), set: |c, s| Ok(c.optimizer.assoc_stable = num(s)?) },
    Key { name: "max_assoc", help: "association dual iterations", get: |c| c.optimizer.max_assoc.to_string(), set: |c, s| Ok(c.optimizer.max_assoc = num(s)?) },
    Key { name: "search_nodes", help: "node budget of the exact association search", get: |c| c.optimizer.search_nodes.to_string(), set: |c, s| Ok(c.optimizer.search_nodes = num(s)?) },
    Key { name: "separation", help: "enforce the UAV separation constraint", get: |c| c.optimizer.separation.to_string(), set: |c, s| Ok(c.optimizer.separation = flag(s)?) },
    Key { name: "oracle_resolution", help: "lattice side of the exhaustive variant", get: |c| c.oracle_resolution.to_string(), set: |c, s| Ok(c.oracle_resolution = num(s)?) },
    // scenario
    Key { name: "U", help: "number of users", get: |c| c.users.to_string(), set: |c, s| Ok(c.users = num(s)?) },
    Key { name: "D", help: "number of UAVs", get: |c| c.uavs.to_string(), set: |c, s| Ok(c.uavs = num(s)?) },
    Key { name: "rate_min", help: "lowest user rate demand", get: |c| c.rate_range.0.to_string(), set: |c, s| Ok(c.rate_range.0 = num(s)?) },
    Key { name: "rate_max", help: "highest user rate demand", get: |c| c.rate_range.1.to_string(), set: |c, s| Ok(c.rate_range.1 = num(s)?) },
    Key { name: "seed", help: "master seed", get: |c| c.seed.to_string(), set: |c, s| Ok(c.seed = num(s)?) },
    Key { name: "replicates", help: "seeds per sweep point", get: |c| c.replicates.to_string(), set: |c, s| Ok(c.replicates = num(s)?) },
    Key { name: "illum_scale", help: "illuminance per grid unit", get: |c| c.illum_scale.to_string(), set: |c, s| Ok(c.illum_scale = num(s)?) },
    Key { name: "variants", help: "comma separated variants to run", get: |c| show_list(&c.variants), set: |c, s| Ok(c.variants = list(s)?) },
    Key { name: "output_dir", help: "directory for reports", get: |c| c.output_dir.display().to_string(), set: |c, s| Ok(c.output_dir = PathBuf::from(s)) },
    // data
    Key { name: "grid_file", help: "grid-sequence file, or none for synthetic data", get: |c| show_path(&c.grid_file), set: |c, s| Ok(c.grid_file = path(s)) },
    Key { name: "cell_size", help: "synthetic cell size, m", get: |c| c.synth.cell_size.to_string(), set: |c, s| Ok(c.synth.cell_size = num(s)?) },
    Key { name: "frames", help: "frames per synthetic sequence", get: |c| c.synth.frames.to_string(), set: |c, s| Ok(c.synth.frames = num(s)?) },
    Key { name: "dt", help: "minutes between frames", get: |c| c.synth.dt.to_string(), set: |c, s| Ok(c.synth.dt = num(s)?) },
    Key { name: "background", help: "synthetic background level", get: |c| c.synth.background.to_string(), set: |c, s| Ok(c.synth.background = num(s)?) },
    Key { name: "static_blobs", help: "fixed light sources", get: |c| c.synth.static_blobs.to_string(), set: |c, s| Ok(c.synth.static_blobs = num(s)?) },
    Key { name: "drifting_blobs", help: "moving light sources", get: |c| c.synth.drifting_blobs.to_string(), set: |c, s| Ok(c.synth.drifting_blobs = num(s)?) },
    Key { name: "pulsing_blobs", help: "periodically dimming light sources", get: |c| c.synth.pulsing_blobs.to_string(), set: |c, s| Ok(c.synth.pulsing_blobs = num(s)?) },
    Key { name: "amplitude_min", help: "lowest blob peak", get: |c| c.synth.amplitude.0.to_string(), set: |c, s| Ok(c.synth.amplitude.0 = num(s)?) },
    Key { name: "amplitude_max", help: "highest blob peak", get: |c| c.synth.amplitude.1.to_string(), set: |c, s| Ok(c.synth.amplitude.1 = num(s)?) },
    Key { name: "sigma_min", help: "narrowest blob, cells", get: |c| c.synth.sigma_cells.0.to_string(), set: |c, s| Ok(c.synth.sigma_cells.0 = num(s)?) },
    Key { name: "sigma_max", help: "widest blob, cells", get: |c| c.synth.sigma_cells.1.to_string(), set: |c, s| Ok(c.synth.sigma_cells.1 = num(s)?) },
    Key { name: "speed_min", help: "slowest drift, m/min", get: |c| c.synth.speed.0.to_string(), set: |c, s| Ok(c.synth.speed.0 = num(s)?) },
    Key { name: "speed_max", help: "fastest drift, m/min", get: |c| c.synth.speed.1.to_string(), set: |c, s| Ok(c.synth.speed.1 = num(s)?) },
    Key {
        name: "heading",
        help: "drift heading in degrees, or random",
        get: |c| c.synth.heading.map_or("random".into(), |h| h.to_string()),
        set: |c, s| Ok(c.synth.heading = if s == "random" { None } else { Some(num(s)?) }),
    },
    Key { name: "period_min", help: "shortest pulsation period, min", get: |c| c.synth.period.0.to_string(), set: |c, s| Ok(c.synth.period.0 = num(s)?) },
    Key { name: "period_max", help: "longest pulsation period, min", get: |c| c.synth.period.1.to_string(), set: |c, s| Ok(c.synth.period.1 = num(s)?) },
    Key { name: "depth", help: "relative pulsation depth", get: |c| c.synth.depth.to_string(), set: |c, s| Ok(c.synth.depth = num(s)?) },
];

impl ExperimentConfig {
    /// Names of every accepted key, in documentation order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    /// Complete configuration text; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(out, "# {}\n{} = {}", k.help, k.name, (k.get)(self)).unwrap();
        }
        out
    }

    /// Applies `key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines on top of `self` and validates.
    pub fn apply(&mut self, text: &str) -> Result<(), HarnessError> {
        let mut seen = HashSet::new();
        let mut n = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| HarnessError::Config { line: idx + 1, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let spec = KEYS.iter().find(|k| k.name == key).ok_or_else(|| fail(format!("unknown key `{key}`")))?;
            if !seen.insert(key) {
                return Err(fail(format!("key `{key}` given twice")));
            }
            (spec.set)(self, value).map_err(|m| fail(format!("{key}: {m}")))?;
            if key == "N" && value != "auto" {
                n = value.parse().ok();
            }
        }
        self.finish(n)
    }

    /// Sets one key; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let spec = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown key `{key}`")))?;
        (spec.set)(self, value).map_err(|m| HarnessError::Invalid(format!("{key}: {m}")))?;
        self.finish(if key == "N" { value.parse().ok() } else { None })
    }

    fn finish(&mut self, n: Option<usize>) -> Result<(), HarnessError> {
        if self.b_bar_auto {
            self.params.b_bar = los_probability_at_elevation(90.0, &self.params);
        }
        self.synth.side = self.predictor.grid_side;
        if let Some(n) = n {
            let derived = self.predictor.feature_len().map_err(|e| HarnessError::Invalid(e.to_string()))?;
            if n != derived {
                return Err(HarnessError::Invalid(format!("N = {n} but the architecture gives {derived}")));
            }
        }
        self.validate()
    }

    /// Checks ranges and that referenced files exist.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        self.params.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        self.predictor.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        self.optimizer.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        if self.grid_file.is_none() {
            self.synth.validate().map_err(|e| HarnessError::Invalid(e.to_string()))?;
        }
        if self.users == 0 || self.uavs == 0 {
            return bad(format!("U = {} and D = {} must both be at least 1", self.users, self.uavs));
        }
        let (lo, hi) = self.rate_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad(format!("rate range [{lo}, {hi}] is invalid"));
        }
        if !(self.illum_scale.is_finite() && self.illum_scale >= 0.0) {
            return bad(format!("illum_scale = {} must be >= 0", self.illum_scale));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.variants.is_empty() {
            return bad("no variants selected".into());
        }
        for (name, p) in [("grid_file", &self.grid_file), ("checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{name} {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn table_symbols_are_keys() {
        let keys: Vec<_> = ExperimentConfig::keys().collect();
        for name in [
            "Phi", "Psi_c", "rho", "xi", "n_e", "n_w", "X", "Y", "eta_r", "S", "N", "D_h", "D_q", "L", "gamma", "delta",
            "e", "epsilon",
        ] {
            assert!(keys.contains(&name), "{name}");
        }
        let unique: HashSet<_> = keys.iter().collect();
        assert_eq!(unique.len(), keys.len());
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::parse(
            "gamma = 0.02  # step\nH = 45\nK = 2, 4\nU = 7\nvariants = proposed,center\nheading = 30\nX = 9.6\n",
        )
        .unwrap();
        assert_eq!(cfg.optimizer.gamma, 0.02);
        assert_eq!(cfg.params.altitude, 45.0);
        assert_eq!(cfg.predictor.feature_maps, vec![2, 4]);
        assert_eq!(cfg.users, 7);
        assert_eq!(cfg.variants, vec![Variant::Proposed, Variant::Center]);
        assert_eq!(cfg.synth.heading, Some(30.0));
        let expected = los_probability_at_elevation(90.0, &cfg.params);
        assert_eq!(cfg.params.b_bar, expected);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |t: &str| ExperimentConfig::parse(t).unwrap_err().to_string();
        assert!(err("\n\nbogus = 1").contains("line 3"));
        assert!(err("gamma = 1\ngamma = 2").contains("twice"));
        assert!(err("U = many").contains("line 1"));
        assert!(err("no equals sign").contains("key = value"));
        assert!(err("U = 0").contains("at least 1"));
        assert!(err("N = 7").contains("N = 7"));
        assert!(err("grid_file = /nonexistent/grid.txt").contains("does not exist"));
        assert!(err("variants = proposed,bogus").contains("variants"));
        assert!(ExperimentConfig::parse("N = 200").is_ok());
    }

    #[test]
    fn explicit_b_bar_is_kept() {
        let cfg = ExperimentConfig::parse("B_bar = 0.5").unwrap();
        assert_eq!(cfg.params.b_bar, 0.5);
        assert!(!cfg.b_bar_auto);
    }
}

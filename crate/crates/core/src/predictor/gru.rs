//! Gated recurrent unit over encoded feature vectors.
//!
//! Matrices are stored in multiplication orientation: input weights are
//! `D_h × N`, recurrent weights `D_h × D_h`.

use rand::Rng;

use super::tensor::{sigmoid, Mat};
use super::PredictorError;

#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_r: Mat,
    pub u_r: Mat,
    pub w_z: Mat,
    pub u_z: Mat,
    pub w_h: Mat,
    pub u_h: Mat,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_r: Mat::zeros(hidden, input),
            u_r: Mat::zeros(hidden, hidden),
            w_z: Mat::zeros(hidden, input),
            u_z: Mat::zeros(hidden, hidden),
            w_h: Mat::zeros(hidden, input),
            u_h: Mat::zeros(hidden, hidden),
        }
    }

    pub fn random(input: usize, hidden: usize, range: f64, rng: &mut impl Rng) -> Self {
        Self {
            w_r: Mat::random(hidden, input, range, rng),
            u_r: Mat::random(hidden, hidden, range, rng),
            w_z: Mat::random(hidden, input, range, rng),
            u_z: Mat::random(hidden, hidden, range, rng),
            w_h: Mat::random(hidden, input, range, rng),
            u_h: Mat::random(hidden, hidden, range, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_r.rows
    }

    pub fn input(&self) -> usize {
        self.w_r.cols
    }
}

/// Hidden state after one step, with the gate activations that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

/// One recurrence step:
/// `r = σ(W_r x + U_r h)`, `h̃ = tanh(W_h x + U_h (r ⊙ h))`,
/// `z = σ(W_z x + U_z h)`, `h' = z ⊙ h + (1 - z) ⊙ h̃`.
pub fn gru_step(x: &[f64], h_prev: &[f64], w: &GruWeights) -> Result<GruState, PredictorError> {
    if x.len() != w.input() || h_prev.len() != w.hidden() {
        return Err(PredictorError::Shape {
            what: "gru_step",
            detail: format!(
                "x has {} entries (want {}), h has {} (want {})",
                x.len(),
                w.input(),
                h_prev.len(),
                w.hidden()
            ),
        });
    }
    let add = |a: Vec<f64>, b: Vec<f64>| a.into_iter().zip(b).map(|(p, q)| p + q);
    let r: Vec<f64> = add(w.w_r.matvec(x), w.u_r.matvec(h_prev)).map(sigmoid).collect();
    let z: Vec<f64> = add(w.w_z.matvec(x), w.u_z.matvec(h_prev)).map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let h_tilde: Vec<f64> = add(w.w_h.matvec(x), w.u_h.matvec(&rh)).map(f64::tanh).collect();
    let h = z
        .iter()
        .zip(h_prev)
        .zip(&h_tilde)
        .map(|((&z, &hp), &ht)| z * hp + (1.0 - z) * ht)
        .collect();
    Ok(GruState { h, r, z, h_tilde })
}

/// Backward through one [`gru_step`]. Accumulates parameter gradients into
/// `grad`, adds `∂E/∂x` into `dx`, and returns `∂E/∂h_prev`.
pub(crate) fn gru_step_backward(
    x: &[f64],
    h_prev: &[f64],
    state: &GruState,
    dh: &[f64],
    w: &GruWeights,
    grad: &mut GruWeights,
    dx: &mut [f64],
) -> Vec<f64> {
    let n = dh.len();
    let mut dh_prev: Vec<f64> = (0..n).map(|k| dh[k] * state.z[k]).collect();

    let da_z: Vec<f64> = (0..n)
        .map(|k| dh[k] * (h_prev[k] - state.h_tilde[k]) * state.z[k] * (1.0 - state.z[k]))
        .collect();
    let da_h: Vec<f64> = (0..n)
        .map(|k| dh[k] * (1.0 - state.z[k]) * (1.0 - state.h_tilde[k] * state.h_tilde[k]))
        .collect();
    let rh: Vec<f64> = (0..n).map(|k| state.r[k] * h_prev[k]).collect();

    grad.w_z.outer_acc(&da_z, x);
    grad.u_z.outer_acc(&da_z, h_prev);
    w.w_z.matvec_t_acc(&da_z, dx);
    w.u_z.matvec_t_acc(&da_z, &mut dh_prev);

    grad.w_h.outer_acc(&da_h, x);
    grad.u_h.outer_acc(&da_h, &rh);
    w.w_h.matvec_t_acc(&da_h, dx);
    let mut d_rh = vec![0.0; n];
    w.u_h.matvec_t_acc(&da_h, &mut d_rh);

    let da_r: Vec<f64> = (0..n)
        .map(|k| d_rh[k] * h_prev[k] * state.r[k] * (1.0 - state.r[k]))
        .collect();
    for k in 0..n {
        dh_prev[k] += d_rh[k] * state.r[k];
    }
    grad.w_r.outer_acc(&da_r, x);
    grad.u_r.outer_acc(&da_r, h_prev);
    w.w_r.matvec_t_acc(&da_r, dx);
    w.u_r.matvec_t_acc(&da_r, &mut dh_prev);

    dh_prev
}

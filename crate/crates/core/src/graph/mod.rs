//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward pass over borrowed [`ParameterSet`]
//! values; [`Tape::backward`] returns per-parameter [`Gradients`] that are
//! summed into the set and consumed by [`adam_step`]. Tapes are independent,
//! so separate sequences can be evaluated on separate threads against the
//! same parameters.

mod adam;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, OptimizerState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use gradcheck::{grad_check, EntryReport, GradCheckConfig, GradCheckReport};
pub use matrix::RealMatrix;
pub use params::{uniform_matrix, Gradients, Parameter, ParameterSet};
pub use tape::{
    cosine_similarity, delta_matrix, sigmoid, window_matrix, Activation, Backward, CustomOp, Tape, Var,
};

use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Stabilizer added to the norm product of the cosine loss.
pub const COSINE_EPS: f64 = 1e-8;

/// Names of the weight and bias of a dense layer.
pub fn dense_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.weight"), format!("{prefix}.bias"))
}

/// Insert a `din x dout` dense layer, weights uniform in `±1/sqrt(din)`,
/// zero bias.
pub fn init_dense(params: &mut ParameterSet, prefix: &str, din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let (w, b) = dense_names(prefix);
    let bound = 1.0 / (din.max(1) as f64).sqrt();
    params.insert(w, uniform_matrix(rng, din, dout, bound))?;
    params.insert(b, RealMatrix::zeros(1, dout))
}

/// `act(x W + b)` for a dense layer stored under `prefix`.
pub fn dense_forward<'a>(
    tape: &mut Tape<'a>,
    x: Var,
    params: &'a ParameterSet,
    prefix: &str,
    act: Activation,
    trainable: bool,
) -> Result<Var> {
    let (wn, bn) = dense_names(prefix);
    let (w, b) = if trainable {
        (tape.param(params, &wn)?, tape.param(params, &bn)?)
    } else {
        (tape.frozen(params, &wn)?, tape.frozen(params, &bn)?)
    };
    tape.dense(x, w, b, act)
}

/// Parameter names of one LSTM direction.
pub fn lstm_names(layer: usize, reverse: bool) -> [String; 3] {
    let dir = if reverse { "bwd" } else { "fwd" };
    [
        format!("lstm{layer}.{dir}.wx"),
        format!("lstm{layer}.{dir}.wh"),
        format!("lstm{layer}.{dir}.b"),
    ]
}

/// Insert weights for a stacked bidirectional LSTM, uniform in
/// `±1/sqrt(hidden)`.
pub fn init_bilstm(
    params: &mut ParameterSet,
    input_dim: usize,
    layers: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let bound = 1.0 / (hidden as f64).sqrt();
    for layer in 0..layers {
        let din = if layer == 0 { input_dim } else { 2 * hidden };
        for reverse in [false, true] {
            let [wx, wh, b] = lstm_names(layer, reverse);
            params.insert(wx, uniform_matrix(rng, din, 4 * hidden, bound))?;
            params.insert(wh, uniform_matrix(rng, hidden, 4 * hidden, bound))?;
            params.insert(b, uniform_matrix(rng, 1, 4 * hidden, bound))?;
        }
    }
    Ok(())
}

/// Stacked bidirectional LSTM: each output row concatenates the forward
/// (left-to-right) and backward (right-to-left) hidden states.
pub fn bilstm_forward<'a>(
    tape: &mut Tape<'a>,
    x: Var,
    params: &'a ParameterSet,
    layers: usize,
) -> Result<Var> {
    let mut h = x;
    for layer in 0..layers {
        let mut halves = [h; 2];
        for (slot, reverse) in [false, true].into_iter().enumerate() {
            let [wx, wh, b] = lstm_names(layer, reverse);
            let (wx, wh, b) = (tape.param(params, &wx)?, tape.param(params, &wh)?, tape.param(params, &b)?);
            halves[slot] = tape.lstm(h, wx, wh, b, reverse)?;
        }
        h = tape.concat_cols(&halves)?;
    }
    Ok(h)
}

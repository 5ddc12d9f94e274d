//! LSTM cell and bidirectional sweep.
//!
//! Gates follow the sigmoid form I = σ([h, x]·w_i + b_i) (same for F and
//! O), candidate C̃ = tanh([h, x]·w_c + b_c), with the standard state
//! update c_t = F⊙c_{t-1} + I⊙C̃ and h_t = O⊙tanh(c_t).

use rand::Rng;

use super::matrix::{vec_matmul, Matrix};
use super::NnError;

/// Gate weights are ((hidden + input) × hidden): the concatenated
/// [h_{t-1}, x_t] row vector multiplies them from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    /// 1×hidden each.
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_c: Matrix,
    pub hidden_size: usize,
    pub input_size: usize,
}

impl LstmParams {
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> LstmParams {
        let gate = |rng: &mut _| Matrix::xavier_uniform(hidden_size + input_size, hidden_size, rng);
        LstmParams {
            w_i: gate(rng),
            w_f: gate(rng),
            w_o: gate(rng),
            w_c: gate(rng),
            b_i: Matrix::zeros(1, hidden_size),
            b_f: Matrix::zeros(1, hidden_size),
            b_o: Matrix::zeros(1, hidden_size),
            b_c: Matrix::zeros(1, hidden_size),
            hidden_size,
            input_size,
        }
    }

    pub fn zeroed(input_size: usize, hidden_size: usize) -> LstmParams {
        LstmParams {
            w_i: Matrix::zeros(hidden_size + input_size, hidden_size),
            w_f: Matrix::zeros(hidden_size + input_size, hidden_size),
            w_o: Matrix::zeros(hidden_size + input_size, hidden_size),
            w_c: Matrix::zeros(hidden_size + input_size, hidden_size),
            b_i: Matrix::zeros(1, hidden_size),
            b_f: Matrix::zeros(1, hidden_size),
            b_o: Matrix::zeros(1, hidden_size),
            b_c: Matrix::zeros(1, hidden_size),
            hidden_size,
            input_size,
        }
    }
}

/// Hidden state and memory cell at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> LstmState {
        LstmState {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// All four gate activations plus the new state, kept around so training
/// can run backward through the cell.
#[derive(Debug, Clone)]
pub(crate) struct LstmStepCache {
    pub z: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

pub(crate) fn lstm_cell_step_cached(
    x_t: &[f64],
    state: &LstmState,
    params: &LstmParams,
) -> Result<(LstmState, LstmStepCache), NnError> {
    if x_t.len() != params.input_size {
        return Err(NnError::shape(
            "lstm_cell_step",
            format!("input has {} entries, expected {}", x_t.len(), params.input_size),
        ));
    }
    if state.h.len() != params.hidden_size || state.c.len() != params.hidden_size {
        return Err(NnError::shape(
            "lstm_cell_step",
            format!(
                "state has {}/{} entries, expected {}",
                state.h.len(),
                state.c.len(),
                params.hidden_size
            ),
        ));
    }
    let mut z = Vec::with_capacity(params.hidden_size + params.input_size);
    z.extend_from_slice(&state.h);
    z.extend_from_slice(x_t);

    let gate = |w: &Matrix, b: &Matrix, squash: fn(f64) -> f64| -> Vec<f64> {
        vec_matmul(&z, w)
            .iter()
            .zip(b.data())
            .map(|(v, b)| squash(v + b))
            .collect()
    };
    let i = gate(&params.w_i, &params.b_i, sigmoid);
    let f = gate(&params.w_f, &params.b_f, sigmoid);
    let o = gate(&params.w_o, &params.b_o, sigmoid);
    let g = gate(&params.w_c, &params.b_c, f64::tanh);

    let c: Vec<f64> = (0..params.hidden_size)
        .map(|k| f[k] * state.c[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..params.hidden_size).map(|k| o[k] * tanh_c[k]).collect();
    debug_assert!(h.iter().chain(&c).all(|v| v.is_finite()));

    let next = LstmState { h, c };
    let cache = LstmStepCache {
        z,
        i,
        f,
        o,
        g,
        c_prev: state.c.clone(),
        tanh_c,
    };
    Ok((next, cache))
}

/// Advance one LSTM cell by one timestep.
pub fn lstm_cell_step(
    x_t: &[f64],
    state: &LstmState,
    params: &LstmParams,
) -> Result<LstmState, NnError> {
    lstm_cell_step_cached(x_t, state, params).map(|(next, _)| next)
}

/// Run forward and backward LSTMs over the sequence from zero states and
/// concatenate their per-timestep hidden states: output[t] is
/// [h_fwd[t], h_bwd[t]], of width 2×hidden.
pub fn bilstm_forward(
    sequence: &[Vec<f64>],
    fwd: &LstmParams,
    bwd: &LstmParams,
) -> Result<Vec<Vec<f64>>, NnError> {
    if sequence.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let mut forward_states = Vec::with_capacity(sequence.len());
    let mut state = LstmState::zeros(fwd.hidden_size);
    for x in sequence {
        state = lstm_cell_step(x, &state, fwd)?;
        forward_states.push(state.h.clone());
    }
    let mut backward_states = vec![Vec::new(); sequence.len()];
    let mut state = LstmState::zeros(bwd.hidden_size);
    for (t, x) in sequence.iter().enumerate().rev() {
        state = lstm_cell_step(x, &state, bwd)?;
        backward_states[t] = state.h.clone();
    }
    Ok(forward_states
        .into_iter()
        .zip(backward_states)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect())
}

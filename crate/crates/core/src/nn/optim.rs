//! AdamW: Adam moments with decoupled weight decay,
//! param ← param − lr·(m̂/(√v̂+ε) + weight_decay·param).

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moments and the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl OptimizerState {
    pub fn new(rows: usize, cols: usize, hyper: AdamHyper) -> OptimizerState {
        OptimizerState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            hyper,
        }
    }

    pub fn for_param(param: &Matrix, hyper: AdamHyper) -> OptimizerState {
        OptimizerState::new(param.rows(), param.cols(), hyper)
    }
}

pub fn adamw_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut OptimizerState,
) -> Result<(), NnError> {
    if !param.same_shape(grad) || !param.same_shape(&state.m) {
        return Err(NnError::shape(
            "adamw_step",
            format!(
                "param {}x{}, grad {}x{}, state {}x{}",
                param.rows(),
                param.cols(),
                grad.rows(),
                grad.cols(),
                state.m.rows(),
                state.m.cols()
            ),
        ));
    }
    state.t += 1;
    let h = state.hyper;
    let bias1 = 1.0 - h.beta1.powi(state.t as i32);
    let bias2 = 1.0 - h.beta2.powi(state.t as i32);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (idx, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[idx] = h.beta1 * m[idx] + (1.0 - h.beta1) * g;
        v[idx] = h.beta2 * v[idx] + (1.0 - h.beta2) * g * g;
        let m_hat = m[idx] / bias1;
        let v_hat = v[idx] / bias2;
        *p -= h.lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * *p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, weight_decay: f64) -> AdamHyper {
        AdamHyper {
            lr,
            weight_decay,
            ..AdamHyper::default()
        }
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_param() {
        let mut param = Matrix::vector(vec![1.5, -2.0]);
        let before = param.clone();
        let grad = Matrix::zeros(1, 2);
        let mut state = OptimizerState::for_param(&param, hyper(0.1, 0.0));
        adamw_step(&mut param, &grad, &mut state).unwrap();
        assert_eq!(param, before);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut param = Matrix::vector(vec![0.25, -1.0, 3.5]);
        let before = param.clone();
        let grad = Matrix::vector(vec![1.0, -2.0, 0.5]);
        let mut state = OptimizerState::for_param(&param, hyper(0.0, 0.01));
        for _ in 0..3 {
            adamw_step(&mut param, &grad, &mut state).unwrap();
        }
        assert_eq!(param, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With m̂ = g and v̂ = g², the first update is −lr·g/(|g|+ε).
        for g in [0.5, -3.0, 10.0] {
            let mut param = Matrix::vector(vec![1.0]);
            let grad = Matrix::vector(vec![g]);
            let mut state = OptimizerState::for_param(&param, hyper(0.01, 0.0));
            adamw_step(&mut param, &grad, &mut state).unwrap();
            let delta = param.get(0, 0) - 1.0;
            let expected = -0.01 * g.signum();
            assert!(
                (delta - expected).abs() / expected.abs() < 1e-6,
                "g={g} delta={delta}"
            );
        }
    }

    #[test]
    fn converges_on_quadratic() {
        // 200 steps on f(w) = (w−3)² from w = 0 at lr 0.1.
        let mut w = Matrix::vector(vec![0.0]);
        let mut state = OptimizerState::for_param(&w, hyper(0.1, 0.0));
        for _ in 0..200 {
            let grad = Matrix::vector(vec![2.0 * (w.get(0, 0) - 3.0)]);
            adamw_step(&mut w, &grad, &mut state).unwrap();
        }
        assert!((w.get(0, 0) - 3.0).abs() < 0.05, "w = {}", w.get(0, 0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut param = Matrix::zeros(2, 2);
        let grad = Matrix::zeros(2, 3);
        let mut state = OptimizerState::for_param(&param, AdamHyper::default());
        assert!(adamw_step(&mut param, &grad, &mut state).is_err());
    }
}

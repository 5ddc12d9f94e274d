//! Forward kernels: softmax, scaled dot-product and multi-head attention,
//! the position-wise feed-forward block, sinusoidal positional encoding,
//! layer norm, inverted dropout, and cross-entropy.

use rand::Rng;

use super::matrix::{vec_matmul, Matrix};
use super::NnError;

/// Floor added inside the cross-entropy log so a (numerically) zero
/// probability cannot produce an infinite loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max-subtraction). Output sums to 1 and is
/// invariant under adding a constant to all logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    debug_assert!(out.iter().all(|p| p.is_finite()));
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// softmax(Q Kᵀ / √d_k) V. Each output row is a convex combination of
/// V's rows.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, NnError> {
    if q.cols() != k.cols() {
        return Err(NnError::shape(
            "scaled_dot_attention",
            format!("Q has d_k={}, K has d_k={}", q.cols(), k.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(NnError::shape(
            "scaled_dot_attention",
            format!("K has {} rows, V has {}", k.rows(), v.rows()),
        ));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut scores = q.matmul_transpose_b(k)?;
    scores.scale(scale);
    for r in 0..scores.rows() {
        let softened = softmax(scores.row(r));
        scores.row_mut(r).copy_from_slice(&softened);
    }
    let out = scores.matmul(v)?;
    debug_assert!(out.is_finite_all());
    Ok(out)
}

/// Per-head projection weights plus the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub d_model: usize,
    /// One (d_model × d_k) projection per head.
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    /// (num_heads·d_k × d_model).
    pub w_o: Matrix,
}

impl AttentionParams {
    pub fn new(num_heads: usize, d_model: usize, rng: &mut impl Rng) -> Result<AttentionParams, NnError> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(NnError::Config(format!(
                "d_model {d_model} must be divisible by num_heads {num_heads}"
            )));
        }
        let d_k = d_model / num_heads;
        let proj = |rng: &mut _| Matrix::xavier_uniform(d_model, d_k, rng);
        Ok(AttentionParams {
            num_heads,
            d_model,
            w_q: (0..num_heads).map(|_| proj(rng)).collect(),
            w_k: (0..num_heads).map(|_| proj(rng)).collect(),
            w_v: (0..num_heads).map(|_| proj(rng)).collect(),
            w_o: Matrix::xavier_uniform(d_model, d_model, rng),
        })
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }
}

/// Concat(head_1..head_h) · W_O with head_i = Attention(X·W_Qi, X·W_Ki, X·W_Vi).
pub fn multi_head_attention(x: &Matrix, params: &AttentionParams) -> Result<Matrix, NnError> {
    if x.cols() != params.d_model {
        return Err(NnError::shape(
            "multi_head_attention",
            format!("X has {} cols, d_model is {}", x.cols(), params.d_model),
        ));
    }
    let d_k = params.d_k();
    let mut concat = Matrix::zeros(x.rows(), params.num_heads * d_k);
    for head in 0..params.num_heads {
        let q = x.matmul(&params.w_q[head])?;
        let k = x.matmul(&params.w_k[head])?;
        let v = x.matmul(&params.w_v[head])?;
        let attended = scaled_dot_attention(&q, &k, &v)?;
        for r in 0..x.rows() {
            concat.row_mut(r)[head * d_k..(head + 1) * d_k].copy_from_slice(attended.row(r));
        }
    }
    let out = concat.matmul(&params.w_o)?;
    debug_assert!(out.is_finite_all());
    Ok(out)
}

/// Two affine maps with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    /// (d_model × d_ff)
    pub w1: Matrix,
    /// 1×d_ff
    pub b1: Matrix,
    /// (d_ff × d_model)
    pub w2: Matrix,
    /// 1×d_model
    pub b2: Matrix,
}

impl FfnParams {
    pub fn new(d_model: usize, d_ff: usize, rng: &mut impl Rng) -> FfnParams {
        FfnParams {
            w1: Matrix::xavier_uniform(d_model, d_ff, rng),
            b1: Matrix::zeros(1, d_ff),
            w2: Matrix::xavier_uniform(d_ff, d_model, rng),
            b2: Matrix::zeros(1, d_model),
        }
    }
}

/// max(0, x·W1 + b1)·W2 + b2 for one position vector.
pub fn position_wise_ffn(x: &[f64], params: &FfnParams) -> Result<Vec<f64>, NnError> {
    if x.len() != params.w1.rows() {
        return Err(NnError::shape(
            "position_wise_ffn",
            format!("x has {} entries, W1 expects {}", x.len(), params.w1.rows()),
        ));
    }
    let mut hidden = vec_matmul(x, &params.w1);
    for (h, b) in hidden.iter_mut().zip(params.b1.data()) {
        *h = (*h + b).max(0.0);
    }
    let mut out = vec_matmul(&hidden, &params.w2);
    for (o, b) in out.iter_mut().zip(params.b2.data()) {
        *o += b;
    }
    debug_assert!(out.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Sinusoidal positional encoding: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
/// PE[pos, 2i+1] = cos of the same argument.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Matrix, NnError> {
    if seq_len == 0 {
        return Err(NnError::Config("positional encoding needs seq_len >= 1".into()));
    }
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(NnError::Config(format!(
            "positional encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut pe = Matrix::zeros(seq_len, d_model);
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.set(pos, 2 * i, angle.sin());
            pe.set(pos, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

/// Scale/shift parameters of one layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    /// 1×d, initialized to ones.
    pub gamma: Matrix,
    /// 1×d, initialized to zeros.
    pub beta: Matrix,
}

impl LayerNormParams {
    pub fn new(dim: usize) -> LayerNormParams {
        LayerNormParams {
            gamma: Matrix::vector(vec![1.0; dim]),
            beta: Matrix::zeros(1, dim),
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalize one vector to zero mean / unit variance, then scale and shift.
pub fn layer_norm(x: &[f64], params: &LayerNormParams) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(params.gamma.data())
        .zip(params.beta.data())
        .map(|((v, g), b)| (v - mean) * inv_std * g + b)
        .collect()
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else
/// 1/(1-p), so expectations match evaluation mode.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&p));
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// −log(probs[target] + floor). Zero exactly when the target has all the mass.
pub fn cross_entropy_loss(probs: &[f64], target: usize) -> Result<f64, NnError> {
    if target >= probs.len() {
        return Err(NnError::Index {
            index: target,
            len: probs.len(),
        });
    }
    Ok((-(probs[target] + PROB_FLOOR).ln()).max(0.0))
}

/// Mean of per-sample cross-entropy losses.
pub fn batch_cross_entropy(probs: &[Vec<f64>], targets: &[usize]) -> Result<f64, NnError> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(NnError::shape(
            "batch_cross_entropy",
            format!("{} prob rows vs {} targets", probs.len(), targets.len()),
        ));
    }
    let mut total = 0.0;
    for (p, &t) in probs.iter().zip(targets) {
        total += cross_entropy_loss(p, t)?;
    }
    Ok(total / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let p = softmax(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < TOL && (p[1] - 0.5).abs() < TOL);
        let big = softmax(&[1000.0, 1000.0]);
        assert!((big[0] - 0.5).abs() < TOL);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_against_direct_evaluation() {
        // Direct high-precision evaluation of e^x / sum over [1, 2, 3].
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (got, want) in p.iter().zip(expected) {
            assert!((got - want).abs() < 1e-5);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < TOL);
    }

    #[test]
    fn softmax_preserves_argmax() {
        let logits = [0.3, -1.2, 2.0, 2.0, 0.7];
        assert_eq!(argmax(&softmax(&logits)), argmax(&logits));
        // Ties break toward the lowest index in both.
        assert_eq!(argmax(&logits), 2);
        let tie_2_and_4 = [0.0, -1.0, 3.5, 1.0, 3.5, 2.0];
        assert_eq!(argmax(&tie_2_and_4), 2);
        assert_eq!(argmax(&softmax(&tie_2_and_4)), 2);
        // Scaling all logits by a positive constant keeps the argmax.
        for scale in [0.25, 1.0, 7.5] {
            let scaled: Vec<f64> = logits.iter().map(|x| x * scale).collect();
            assert_eq!(argmax(&softmax(&scaled)), argmax(&logits));
        }
    }

    #[test]
    fn single_row_attention_returns_v() {
        let q = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let k = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let v = Matrix::from_vec(1, 3, vec![5.0, -1.0, 0.25]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn identical_keys_average_v() {
        let q = Matrix::from_vec(2, 2, vec![0.1, 0.2, -0.5, 0.9]).unwrap();
        let k = Matrix::from_vec(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Matrix::from_vec(3, 2, vec![3.0, 0.0, 0.0, 3.0, 3.0, 3.0]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for r in 0..2 {
            assert!((out.get(r, 0) - 2.0).abs() < TOL);
            assert!((out.get(r, 1) - 2.0).abs() < TOL);
        }
    }

    #[test]
    fn attention_matches_straight_line_oracle() {
        let q = Matrix::from_vec(2, 2, vec![0.5, -1.0, 1.5, 0.25]).unwrap();
        let k = Matrix::from_vec(2, 2, vec![0.2, 0.4, -0.6, 1.1]).unwrap();
        let v = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // Straight-line recomputation at 64-bit.
        let dk = 2.0f64;
        let mut expected = [[0.0; 2]; 2];
        for i in 0..2 {
            let mut scores = [0.0; 2];
            for j in 0..2 {
                scores[j] = (q.get(i, 0) * k.get(j, 0) + q.get(i, 1) * k.get(j, 1)) / dk.sqrt();
            }
            let m = scores[0].max(scores[1]);
            let e = [(scores[0] - m).exp(), (scores[1] - m).exp()];
            let s = e[0] + e[1];
            for c in 0..2 {
                expected[i][c] = (e[0] / s) * v.get(0, c) + (e[1] / s) * v.get(1, c);
            }
        }
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            for c in 0..2 {
                assert!((out.get(i, c) - expected[i][c]).abs() < TOL);
            }
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut rng = crate::rng::substream(5, "attn-convex");
        let q = Matrix::xavier_uniform(4, 3, &mut rng);
        let k = Matrix::xavier_uniform(6, 3, &mut rng);
        let v = Matrix::xavier_uniform(6, 2, &mut rng);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        // Row-wise min/max of V bound every output entry.
        for c in 0..v.cols() {
            let lo = (0..v.rows()).map(|r| v.get(r, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..v.rows()).map(|r| v.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..out.rows() {
                assert!(out.get(r, c) >= lo - TOL && out.get(r, c) <= hi + TOL);
            }
        }
    }

    #[test]
    fn single_head_identity_projections_reduce_to_attention() {
        let x = Matrix::from_vec(3, 2, vec![0.5, -0.5, 1.0, 0.0, -1.5, 2.0]).unwrap();
        let eye = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = AttentionParams {
            num_heads: 1,
            d_model: 2,
            w_q: vec![eye.clone()],
            w_k: vec![eye.clone()],
            w_v: vec![eye.clone()],
            w_o: eye,
        };
        let mha = multi_head_attention(&x, &params).unwrap();
        let plain = scaled_dot_attention(&x, &x, &x).unwrap();
        for (a, b) in mha.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < TOL);
        }
    }

    #[test]
    fn multi_head_output_shape() {
        let mut rng = crate::rng::substream(9, "mha-shape");
        let params = AttentionParams::new(2, 4, &mut rng).unwrap();
        let x = Matrix::xavier_uniform(5, 4, &mut rng);
        let out = multi_head_attention(&x, &params).unwrap();
        assert_eq!((out.rows(), out.cols()), (5, 4));
    }

    #[test]
    fn multi_head_matches_head_by_head_composition() {
        let mut rng = crate::rng::substream(10, "mha-oracle");
        let params = AttentionParams::new(1, 2, &mut rng).unwrap();
        let x = Matrix::xavier_uniform(3, 2, &mut rng);
        // Brute-force the single head then the output projection.
        let q = x.matmul(&params.w_q[0]).unwrap();
        let k = x.matmul(&params.w_k[0]).unwrap();
        let v = x.matmul(&params.w_v[0]).unwrap();
        let head = scaled_dot_attention(&q, &k, &v).unwrap();
        let expected = head.matmul(&params.w_o).unwrap();
        let got = multi_head_attention(&x, &params).unwrap();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < TOL);
        }
    }

    #[test]
    fn attention_rejects_mismatched_shapes() {
        let q = Matrix::zeros(2, 3);
        let k = Matrix::zeros(2, 4);
        let v = Matrix::zeros(2, 2);
        assert!(matches!(
            scaled_dot_attention(&q, &k, &v),
            Err(NnError::Shape { .. })
        ));
    }

    #[test]
    fn ffn_identity_behaviour() {
        let eye2 = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = FfnParams {
            w1: eye2.clone(),
            b1: Matrix::zeros(1, 2),
            w2: eye2,
            b2: Matrix::zeros(1, 2),
        };
        let out = position_wise_ffn(&[0.5, 2.0], &params).unwrap();
        assert_eq!(out, vec![0.5, 2.0]);
        let clamped = position_wise_ffn(&[-1.0, 2.0], &params).unwrap();
        assert_eq!(clamped, vec![0.0, 2.0]);
    }

    #[test]
    fn ffn_matches_two_step_manual_evaluation() {
        let mut rng = crate::rng::substream(21, "ffn-oracle");
        let params = FfnParams::new(4, 3, &mut rng);
        let x = [0.25, -1.5, 0.75, 2.0];
        let mut hidden = [0.0; 3];
        for j in 0..3 {
            let mut acc = params.b1.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                acc += xi * params.w1.get(i, j);
            }
            hidden[j] = acc.max(0.0);
        }
        let mut expected = [0.0; 4];
        for j in 0..4 {
            let mut acc = params.b2.get(0, j);
            for (i, h) in hidden.iter().enumerate() {
                acc += h * params.w2.get(i, j);
            }
            expected[j] = acc;
        }
        let got = position_wise_ffn(&x, &params).unwrap();
        for (a, b) in got.iter().zip(expected) {
            assert!((a - b).abs() < TOL);
        }
    }

    #[test]
    fn positional_encoding_row_zero_alternates() {
        let pe = positional_encoding(4, 6).unwrap();
        for i in 0..3 {
            assert_eq!(pe.get(0, 2 * i), 0.0);
            assert_eq!(pe.get(0, 2 * i + 1), 1.0);
        }
    }

    #[test]
    fn positional_encoding_bounded_and_distinct() {
        let pe = positional_encoding(128, 64).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for a in 0..128 {
            for b in a + 1..128 {
                assert!(
                    pe.row(a) != pe.row(b),
                    "rows {a} and {b} should differ"
                );
            }
        }
    }

    #[test]
    fn positional_encoding_rejects_odd_dims() {
        assert!(matches!(positional_encoding(4, 5), Err(NnError::Config(_))));
        assert!(matches!(positional_encoding(0, 4), Err(NnError::Config(_))));
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance() {
        let params = LayerNormParams::new(4);
        let out = layer_norm(&[1.0, 2.0, 3.0, 4.0], &params);
        let mean: f64 = out.iter().sum::<f64>() / 4.0;
        let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_basics() {
        assert_eq!(cross_entropy_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let uniform = vec![1.0 / 6.0; 6];
        let loss = cross_entropy_loss(&uniform, 3).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-5);
        assert!(matches!(
            cross_entropy_loss(&uniform, 6),
            Err(NnError::Index { .. })
        ));
    }

    #[test]
    fn batch_loss_is_mean_of_elements() {
        let probs = vec![
            softmax(&[1.0, 0.0, 0.0]),
            softmax(&[0.0, 2.0, 0.0]),
            softmax(&[0.0, 0.0, 0.5]),
        ];
        let targets = [0usize, 1, 2];
        let batch = batch_cross_entropy(&probs, &targets).unwrap();
        let manual: f64 = probs
            .iter()
            .zip(targets)
            .map(|(p, t)| cross_entropy_loss(p, t).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((batch - manual).abs() < 1e-12);
    }

    #[test]
    fn dropout_mask_scales_kept_entries() {
        let mut rng = crate::rng::substream(77, "dropout-test");
        let mask = dropout_mask(10_000, 0.4, &mut rng);
        let kept = mask.iter().filter(|&&m| m > 0.0).count();
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 1.0 / 0.6).abs() < 1e-12));
        // Keep rate should be near 60%.
        assert!((kept as f64 / 10_000.0 - 0.6).abs() < 0.03);
        assert_eq!(dropout_mask(5, 0.0, &mut rng), vec![1.0; 5]);
    }
}

//! Temporal symptom-aware attention.
//!
//! Each contextual state `h_t` is gated by `sigmoid(theta(h_t) - mu(h_t) * delta_t)`
//! where `theta(h) = w_theta . h + b_theta` and `mu(h) = softplus(w_mu . h + b_mu)`,
//! then scored with `tanh(score(gated))`. Scores are softmax-normalized over
//! real posts and pool the ungated states.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::Attention;
use super::{sigmoid, softmax, softplus, ModelError};

/// Gate value `sigmoid(theta(h) - mu(h) * delta)`.
pub fn gate_value(h: ArrayView1<f64>, delta: f64, attn: &Attention) -> f64 {
    let theta = attn.theta.apply(h)[0];
    let mu = softplus(attn.mu.apply(h)[0]);
    sigmoid(theta - mu * delta)
}

/// The gated state `sigmoid(theta(h) - mu(h) * delta) * h`.
pub fn temporal_gate(h: ArrayView1<f64>, delta: f64, attn: &Attention) -> Array1<f64> {
    let gate = gate_value(h, delta, attn);
    h.mapv(|x| gate * x)
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    gate: Array1<f64>,
    mu_pre: Array1<f64>,
    gated: Array2<f64>,
    scores: Array1<f64>,
    pub(crate) weights: Array1<f64>,
}

/// Pools `hidden` (`n x d`, real posts only). Returns `(g, weights, cache)`.
pub(crate) fn attention_forward(
    hidden: ArrayView2<f64>,
    deltas: &[f64],
    attn: &Attention,
    temporal: bool,
) -> (Array1<f64>, AttentionCache) {
    let n = hidden.nrows();
    let mut gate = Array1::ones(n);
    let mut mu_pre = Array1::zeros(n);
    let gated = if temporal {
        let theta = attn.theta.apply_rows(hidden).column(0).to_owned();
        mu_pre = attn.mu.apply_rows(hidden).column(0).to_owned();
        for t in 0..n {
            gate[t] = sigmoid(theta[t] - softplus(mu_pre[t]) * deltas[t]);
        }
        &hidden * &gate.view().insert_axis(Axis(1))
    } else {
        hidden.to_owned()
    };
    let scores = attn.score.apply_rows(gated.view()).column(0).mapv(f64::tanh);
    let weights = softmax(scores.view());
    let g = weights.dot(&hidden);
    (
        g,
        AttentionCache {
            gate,
            mu_pre,
            gated,
            scores,
            weights,
        },
    )
}

/// Accumulates into `grad` and returns `dL/dhidden`.
pub(crate) fn attention_backward(
    hidden: ArrayView2<f64>,
    deltas: &[f64],
    attn: &Attention,
    temporal: bool,
    cache: &AttentionCache,
    dg: ArrayView1<f64>,
    grad: &mut Attention,
) -> Array2<f64> {
    let n = hidden.nrows();
    let a = &cache.weights;
    // g = sum_t a_t h_t
    let mut dh = a.view().insert_axis(Axis(1)).dot(&dg.insert_axis(Axis(0)));
    let da = hidden.dot(&dg);
    let mean = a.dot(&da);
    let dscore_pre = Array1::from_shape_fn(n, |t| a[t] * (da[t] - mean) * (1.0 - cache.scores[t] * cache.scores[t]));
    // score layer
    let w_f = attn.score.weight.row(0);
    grad.score.weight.row_mut(0).scaled_add(1.0, &dscore_pre.dot(&cache.gated));
    grad.score.bias[0] += dscore_pre.sum();
    let dgated = dscore_pre.view().insert_axis(Axis(1)).dot(&w_f.insert_axis(Axis(0)));
    if !temporal {
        return dh + dgated;
    }
    let mut dtheta = Array1::zeros(n);
    let mut dmu_pre = Array1::zeros(n);
    for t in 0..n {
        let s = cache.gate[t];
        let ds = dgated.row(t).dot(&hidden.row(t));
        let dz = ds * s * (1.0 - s);
        dtheta[t] = dz;
        dmu_pre[t] = -dz * deltas[t] * sigmoid(cache.mu_pre[t]);
    }
    dh += &(&dgated * &cache.gate.view().insert_axis(Axis(1)));
    grad.theta.weight.row_mut(0).scaled_add(1.0, &dtheta.dot(&hidden));
    grad.theta.bias[0] += dtheta.sum();
    grad.mu.weight.row_mut(0).scaled_add(1.0, &dmu_pre.dot(&hidden));
    grad.mu.bias[0] += dmu_pre.sum();
    dh += &dtheta
        .view()
        .insert_axis(Axis(1))
        .dot(&attn.theta.weight.row(0).insert_axis(Axis(0)));
    dh += &dmu_pre
        .view()
        .insert_axis(Axis(1))
        .dot(&attn.mu.weight.row(0).insert_axis(Axis(0)));
    dh
}

/// Attention pooling over the unmasked rows of `hidden`. Returns the pooled
/// representation and one weight per unmasked row. With `temporal == false`
/// the gate is skipped and scoring uses content only.
pub fn attention_pool(
    hidden: ArrayView2<f64>,
    deltas: &[f64],
    mask: &[bool],
    attn: &Attention,
    temporal: bool,
) -> Result<(Array1<f64>, Vec<f64>), ModelError> {
    if mask.len() != hidden.nrows() || deltas.len() != hidden.nrows() {
        return Err(ModelError::Shape("hidden, deltas and mask lengths differ".into()));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if attn.score.in_dim() != hidden.ncols() {
        return Err(ModelError::Shape(format!(
            "attention expects width {}, got {}",
            attn.score.in_dim(),
            hidden.ncols()
        )));
    }
    let real = hidden.select(Axis(0), &rows);
    let real_deltas: Vec<f64> = rows.iter().map(|&i| deltas[i]).collect();
    let (g, cache) = attention_forward(real.view(), &real_deltas, attn, temporal);
    Ok((g, cache.weights.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Linear;
    use ndarray::array;

    fn zero_attention(d: usize) -> Attention {
        Attention {
            theta: Linear::zeros(1, d),
            mu: Linear::zeros(1, d),
            score: Linear::zeros(1, d),
        }
    }

    #[test]
    fn zero_theta_halves_the_state() {
        let attn = zero_attention(3);
        let h = array![2.0, -4.0, 1.0];
        assert_eq!(temporal_gate(h.view(), 0.0, &attn), array![1.0, -2.0, 0.5]);
    }

    #[test]
    fn gate_decays_with_delta() {
        let mut attn = zero_attention(2);
        attn.mu.bias[0] = 0.3;
        let h = array![1.0, 1.0];
        assert!(gate_value(h.view(), 10.0, &attn) < gate_value(h.view(), 1.0, &attn));
    }

    #[test]
    fn theta_one_mu_tenth_delta_ten_is_half() {
        let mut attn = zero_attention(2);
        attn.theta.bias[0] = 1.0;
        // softplus(b) = 0.1  =>  b = ln(e^0.1 - 1)
        attn.mu.bias[0] = (0.1f64.exp() - 1.0).ln();
        let h = array![0.7, -0.2];
        assert!((gate_value(h.view(), 10.0, &attn) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_symmetric_inputs() {
        let mut attn = zero_attention(2);
        attn.score.weight[[0, 0]] = 0.8;
        attn.theta.weight[[0, 1]] = -0.3;
        let (_, w) = attention_pool(array![[0.3, 0.1]].view(), &[0.0], &[true], &attn, true).unwrap();
        assert_eq!(w, vec![1.0]);

        let h = array![[0.3, 0.1], [0.3, 0.1], [0.3, 0.1], [0.0, 0.0]];
        let (_, w) = attention_pool(h.view(), &[2.0, 2.0, 2.0, 0.0], &[true, true, true, false], &attn, true).unwrap();
        assert_eq!(w.len(), 3);
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_is_an_error() {
        let attn = zero_attention(2);
        let h = Array2::zeros((2, 2));
        assert!(matches!(
            attention_pool(h.view(), &[0.0, 0.0], &[false, false], &attn, true),
            Err(ModelError::EmptySequence)
        ));
    }
}

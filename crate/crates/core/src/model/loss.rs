//! Ordinal soft labels, task losses, and uncertainty-weighted combination.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::Ablation;

/// Probabilities are clipped below at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Soft ordinal target `y_i = exp(-alpha |r - i|) / sum_k exp(-alpha |r - k|)`.
pub fn sord_soft_labels(target: usize, alpha: f64, n_levels: usize) -> Vec<f64> {
    assert!(target < n_levels, "target {target} outside 0..{n_levels}");
    // shift by the max logit (0 at i == target) for stability
    let raw: Vec<f64> = (0..n_levels)
        .map(|i| (-alpha * (target as f64 - i as f64).abs()).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// Cross-entropy of one predicted distribution against a soft target.
pub fn cross_entropy(probs: ArrayView1<f64>, target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(p, y)| if *y == 0.0 { 0.0 } else { y * p.max(PROB_FLOOR).ln() })
        .sum::<f64>()
}

/// Gradient of [`cross_entropy`] with respect to the logits behind `probs`.
pub(crate) fn cross_entropy_logit_grad(probs: ArrayView1<f64>, target: &[f64]) -> Array1<f64> {
    let live: f64 = probs
        .iter()
        .zip(target)
        .filter(|(p, _)| **p > PROB_FLOOR)
        .map(|(_, y)| y)
        .sum();
    Array1::from_shape_fn(probs.len(), |j| {
        let own = if probs[j] > PROB_FLOOR { target[j] } else { 0.0 };
        probs[j] * live - own
    })
}

/// Mean soft-label cross-entropy over a batch; row `j` of `probs` is the
/// predicted distribution for sequence `j`.
pub fn loss_fs(probs: ArrayView2<f64>, soft_labels: &[Vec<f64>]) -> f64 {
    let b = probs.nrows();
    assert_eq!(b, soft_labels.len());
    if b == 0 {
        return 0.0;
    }
    probs
        .rows()
        .into_iter()
        .zip(soft_labels)
        .map(|(p, y)| cross_entropy(p, y))
        .sum::<f64>()
        / b as f64
}

/// Binary cross-entropy summed over labels for one post.
pub fn binary_cross_entropy(probs: ArrayView1<f64>, targets: ArrayView1<f64>) -> f64 {
    -probs
        .iter()
        .zip(targets)
        .map(|(p, y)| y * p.max(PROB_FLOOR).ln() + (1.0 - y) * (1.0 - p).max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// Gradient of [`binary_cross_entropy`] w.r.t. the logits behind `probs`.
pub(crate) fn binary_cross_entropy_logit_grad(probs: ArrayView1<f64>, targets: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(probs.len(), |i| {
        let (p, y) = (probs[i], targets[i]);
        let pos = if p > PROB_FLOOR { -y * (1.0 - p) } else { 0.0 };
        let neg = if 1.0 - p > PROB_FLOOR { (1.0 - y) * p } else { 0.0 };
        pos + neg
    })
}

/// Multi-label symptom loss: per-post BCE summed over labels, averaged over
/// unmasked posts. Masked rows contribute nothing.
pub fn loss_bd(probs: ArrayView2<f64>, multi_hot: ArrayView2<f64>, mask: &[bool]) -> f64 {
    assert_eq!(probs.dim(), multi_hot.dim());
    assert_eq!(probs.nrows(), mask.len());
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            total += binary_cross_entropy(probs.row(i), multi_hot.row(i));
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Coefficients of the combined objective: `total = c_fs L_fs + c_bd L_bd + r(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LossWeights {
    pub c_fs: f64,
    pub c_bd: f64,
    pub ds_fs: f64,
    pub ds_bd: f64,
}

pub(crate) fn loss_weights(l_fs: f64, l_bd: f64, log_var_fs: f64, log_var_bd: f64, ablation: &Ablation) -> LossWeights {
    if ablation.single_task {
        return LossWeights { c_fs: 1.0, c_bd: 0.0, ds_fs: 0.0, ds_bd: 0.0 };
    }
    if ablation.no_uncertainty {
        return LossWeights { c_fs: 1.0, c_bd: 1.0, ds_fs: 0.0, ds_bd: 0.0 };
    }
    let c_fs = 0.5 * (-log_var_fs).exp();
    let c_bd = 0.5 * (-log_var_bd).exp();
    LossWeights {
        c_fs,
        c_bd,
        ds_fs: 0.5 - c_fs * l_fs,
        ds_bd: 0.5 - c_bd * l_bd,
    }
}

/// Uncertainty-weighted total with log-variances `s = log sigma^2`:
/// `exp(-s_fs)/2 L_fs + exp(-s_bd)/2 L_bd + (s_fs + s_bd)/2`.
/// `no_uncertainty` gives `L_fs + L_bd`; `single_task` gives `L_fs`.
pub fn total_loss(l_fs: f64, l_bd: f64, log_var_fs: f64, log_var_bd: f64, ablation: &Ablation) -> f64 {
    if ablation.single_task {
        return l_fs;
    }
    if ablation.no_uncertainty {
        return l_fs + l_bd;
    }
    0.5 * (-log_var_fs).exp() * l_fs + 0.5 * (-log_var_bd).exp() * l_bd + 0.5 * (log_var_fs + log_var_bd)
}

/// The same objective written with standard deviations:
/// `L_fs / (2 sigma_fs^2) + L_bd / (2 sigma_bd^2) + log(sigma_fs sigma_bd)`.
pub fn total_loss_sigma(l_fs: f64, l_bd: f64, sigma_fs: f64, sigma_bd: f64) -> f64 {
    l_fs / (2.0 * sigma_fs * sigma_fs) + l_bd / (2.0 * sigma_bd * sigma_bd) + (sigma_fs * sigma_bd).ln()
}

pub(crate) fn stack_rows(rows: &[Array1<f64>], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

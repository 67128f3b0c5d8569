//! Two-layer decoders: `out(ReLU(hidden(x)))`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::MlpHead;

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

/// Row-wise forward over an `n x in` batch; returns `n x out` logits.
pub(crate) fn head_forward(head: &MlpHead, x: ArrayView2<f64>) -> (Array2<f64>, HeadCache) {
    let pre = head.hidden.apply_rows(x);
    let act = pre.mapv(|v| v.max(0.0));
    let logits = head.out.apply_rows(act.view());
    (logits, HeadCache { pre, act })
}

/// Accumulates parameter gradients; returns `dL/dx`.
pub(crate) fn head_backward(
    head: &MlpHead,
    x: ArrayView2<f64>,
    cache: &HeadCache,
    dlogits: ArrayView2<f64>,
    grad: &mut MlpHead,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    grad.out.weight += &dlogits.t().dot(&cache.act);
    grad.out.bias += &dlogits.sum_axis(Axis(0));
    let mut dpre = dlogits.dot(&head.out.weight);
    dpre.zip_mut_with(&cache.pre, |d, p| {
        if *p <= 0.0 {
            *d = 0.0
        }
    });
    grad.hidden.weight += &dpre.t().dot(&x);
    grad.hidden.bias += &dpre.sum_axis(Axis(0));
    need_input_grad.then(|| dpre.dot(&head.hidden.weight))
}

/// Suicidality logits from a pooled sequence representation.
pub fn suicidality_head(g: ArrayView1<f64>, head: &MlpHead) -> Array1<f64> {
    head_forward(head, g.insert_axis(Axis(0))).0.row(0).to_owned()
}

/// Symptom logits from a single post embedding.
pub fn symptom_head(e: ArrayView1<f64>, head: &MlpHead) -> Array1<f64> {
    head_forward(head, e.insert_axis(Axis(0))).0.row(0).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::Linear;
    use ndarray::array;

    fn head(hidden: Linear, out: Linear) -> MlpHead {
        MlpHead { hidden, out }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let h = head(Linear::init(3, 4, &mut rng), Linear::init(4, 3, &mut rng));
        assert!(suicidality_head(Array1::zeros(4).view(), &h).iter().all(|v| *v == 0.0));
        assert_eq!(suicidality_head(Array1::ones(4).view(), &h).len(), 4);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // hidden: [[1, 2], [-1, 0]], bias [0, 0.5]; out: [[1, 1], [2, -1]], bias [0.1, 0]
        let h = head(
            Linear {
                weight: array![[1.0, 2.0], [-1.0, 0.0]],
                bias: array![0.0, 0.5],
            },
            Linear {
                weight: array![[1.0, 1.0], [2.0, -1.0]],
                bias: array![0.1, 0.0],
            },
        );
        // x = [1, 1]: pre = [3, -0.5] -> relu [3, 0] -> [3.1, 6]
        assert_eq!(suicidality_head(array![1.0, 1.0].view(), &h), array![3.1, 6.0]);
        // x = [-1, 0.25]: pre = [-0.5, 1.5] -> relu [0, 1.5] -> [1.6, -1.5]
        assert_eq!(symptom_head(array![-1.0, 0.25].view(), &h), array![1.6, -1.5]);
    }
}

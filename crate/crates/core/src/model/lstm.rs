//! Bidirectional LSTM context encoder with backpropagation through time.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::params::{LstmDirection, LstmLayer};
use super::{sigmoid, ModelError};

/// Activations of one direction, indexed by original time step.
#[derive(Debug, Clone)]
pub(crate) struct DirectionCache {
    /// Post-activation gates `[i, f, g, o]`, `n x 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    pub(crate) hidden: Array2<f64>,
    reverse: bool,
}

pub(crate) fn run_direction(p: &LstmDirection, x: ArrayView2<f64>, reverse: bool) -> DirectionCache {
    let n = x.nrows();
    let h = p.hidden();
    let pre_in = x.dot(&p.w_ih.t()) + &p.bias;
    let mut gates = Array2::zeros((n, 4 * h));
    let mut cells = Array2::zeros((n, h));
    let mut hidden = Array2::zeros((n, h));
    let mut h_prev = Array1::zeros(h);
    let mut c_prev = Array1::zeros(h);
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let pre = &pre_in.row(t) + &p.w_hh.dot(&h_prev);
        let mut g_row = gates.row_mut(t);
        for k in 0..4 * h {
            g_row[k] = if (2 * h..3 * h).contains(&k) {
                pre[k].tanh()
            } else {
                sigmoid(pre[k])
            };
        }
        let (i, f, g, o) = (
            g_row.slice(s![0..h]),
            g_row.slice(s![h..2 * h]),
            g_row.slice(s![2 * h..3 * h]),
            g_row.slice(s![3 * h..4 * h]),
        );
        let c = &f * &c_prev + &i * &g;
        let hh = &o * &c.mapv(f64::tanh);
        cells.row_mut(t).assign(&c);
        hidden.row_mut(t).assign(&hh);
        h_prev = hh;
        c_prev = c;
    }
    DirectionCache {
        gates,
        cells,
        hidden,
        reverse,
    }
}

/// Accumulates parameter gradients into `grad`; returns the input gradient.
pub(crate) fn backprop_direction(
    p: &LstmDirection,
    cache: &DirectionCache,
    x: ArrayView2<f64>,
    dh_out: ArrayView2<f64>,
    grad: &mut LstmDirection,
) -> Array2<f64> {
    let n = x.nrows();
    let h = p.hidden();
    let mut dpre_all = Array2::<f64>::zeros((n, 4 * h));
    let mut h_prev_all = Array2::<f64>::zeros((n, h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    let zeros = Array1::<f64>::zeros(h);
    for step in (0..n).rev() {
        let t = if cache.reverse { n - 1 - step } else { step };
        let prev = (step > 0).then(|| if cache.reverse { t + 1 } else { t - 1 });
        let g_row = cache.gates.row(t);
        let i = g_row.slice(s![0..h]);
        let f = g_row.slice(s![h..2 * h]);
        let g = g_row.slice(s![2 * h..3 * h]);
        let o = g_row.slice(s![3 * h..4 * h]);
        let c_prev = prev.map(|q| cache.cells.row(q)).unwrap_or(zeros.view());
        if let Some(q) = prev {
            h_prev_all.row_mut(t).assign(&cache.hidden.row(q));
        }
        let tanh_c = cache.cells.row(t).mapv(f64::tanh);
        let dh = &dh_out.row(t) + &dh_next;
        let mut dpre = dpre_all.row_mut(t);
        let mut dc = Array1::<f64>::zeros(h);
        for k in 0..h {
            let d_o = dh[k] * tanh_c[k];
            let dck = dc_next[k] + dh[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
            dc[k] = dck;
            dpre[k] = dck * g[k] * i[k] * (1.0 - i[k]);
            dpre[h + k] = dck * c_prev[k] * f[k] * (1.0 - f[k]);
            dpre[2 * h + k] = dck * i[k] * (1.0 - g[k] * g[k]);
            dpre[3 * h + k] = d_o * o[k] * (1.0 - o[k]);
        }
        dc_next = &dc * &f;
        dh_next = p.w_hh.t().dot(&dpre);
    }
    grad.w_ih += &dpre_all.t().dot(&x);
    grad.w_hh += &dpre_all.t().dot(&h_prev_all);
    grad.bias += &dpre_all.sum_axis(Axis(0));
    dpre_all.dot(&p.w_ih)
}

#[derive(Debug, Clone)]
pub(crate) struct BiLstmCache {
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    dirs: Vec<(DirectionCache, DirectionCache)>,
}

/// Runs the stacked BiLSTM over `x` (`n x dim`), returning `n x 2H` states
/// `[forward, backward]` and the cache for backprop.
pub(crate) fn bilstm_forward(layers: &[LstmLayer], x: ArrayView2<f64>) -> (Array2<f64>, BiLstmCache) {
    let mut input = x.to_owned();
    let mut cache = BiLstmCache {
        inputs: Vec::with_capacity(layers.len()),
        dirs: Vec::with_capacity(layers.len()),
    };
    for layer in layers {
        let f = run_direction(&layer.forward, input.view(), false);
        let b = run_direction(&layer.backward, input.view(), true);
        let out = concatenate![Axis(1), f.hidden, b.hidden];
        cache.inputs.push(std::mem::replace(&mut input, out));
        cache.dirs.push((f, b));
    }
    (input, cache)
}

/// Backprop through all layers; gradient w.r.t. the embeddings is not needed.
pub(crate) fn bilstm_backward(layers: &[LstmLayer], cache: &BiLstmCache, d_out: Array2<f64>, grads: &mut [LstmLayer]) {
    let mut d = d_out;
    for l in (0..layers.len()).rev() {
        let h = layers[l].forward.hidden();
        let (fc, bc) = &cache.dirs[l];
        let x = cache.inputs[l].view();
        let dx_f = backprop_direction(&layers[l].forward, fc, x, d.slice(s![.., 0..h]), &mut grads[l].forward);
        let dx_b = backprop_direction(&layers[l].backward, bc, x, d.slice(s![.., h..2 * h]), &mut grads[l].backward);
        if l > 0 {
            d = dx_f + dx_b;
        }
    }
}

/// Contextual states for every row of `embeddings`; masked rows are zero.
/// Unmasked rows are processed as one contiguous sequence in order.
pub fn bilstm_context(layers: &[LstmLayer], embeddings: ArrayView2<f64>, mask: &[bool]) -> Result<Array2<f64>, ModelError> {
    if mask.len() != embeddings.nrows() {
        return Err(ModelError::Shape(format!(
            "mask has {} entries for {} rows",
            mask.len(),
            embeddings.nrows()
        )));
    }
    let Some(first) = layers.first() else {
        return Err(ModelError::Shape("no recurrent layers".into()));
    };
    if first.forward.w_ih.ncols() != embeddings.ncols() {
        return Err(ModelError::Shape(format!(
            "embedding dim {} does not match layer input {}",
            embeddings.ncols(),
            first.forward.w_ih.ncols()
        )));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let real = embeddings.select(Axis(0), &rows);
    let (states, _) = bilstm_forward(layers, real.view());
    let mut out = Array2::zeros((mask.len(), states.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(r).assign(&states.row(k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_input_gives_zero_states() {
        let layers = vec![LstmLayer {
            forward: LstmDirection::zeros(6, 3),
            backward: LstmDirection::zeros(6, 3),
        }];
        let x = Array2::zeros((4, 6));
        let out = bilstm_context(&layers, x.view(), &[true; 4]).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_of_input_equals_backward_of_reversed_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fwd = LstmDirection::init(5, 3, &mut rng);
        let bwd = LstmDirection::init(5, 3, &mut rng);
        let x = Array2::from_shape_fn((6, 5), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let mut x_rev = x.clone();
        x_rev.invert_axis(Axis(0));

        let original = bilstm_forward(
            &[LstmLayer { forward: fwd.clone(), backward: bwd.clone() }],
            x.view(),
        )
        .0;
        let swapped = bilstm_forward(&[LstmLayer { forward: bwd, backward: fwd }], x_rev.view()).0;
        for t in 0..6 {
            let a = original.row(t);
            let b = swapped.row(5 - t);
            for k in 0..3 {
                assert!((a[k] - b[3 + k]).abs() < 1e-14);
                assert!((a[3 + k] - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_post_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![LstmLayer {
            forward: LstmDirection::init(8, 512, &mut rng),
            backward: LstmDirection::init(8, 512, &mut rng),
        }];
        let out = bilstm_context(&layers, Array2::ones((1, 8)).view(), &[true]).unwrap();
        assert_eq!(out.dim(), (1, 1024));
    }

    #[test]
    fn masked_rows_are_zero_and_dimension_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layers = vec![LstmLayer {
            forward: LstmDirection::init(4, 2, &mut rng),
            backward: LstmDirection::init(4, 2, &mut rng),
        }];
        let x = Array2::ones((3, 4));
        let out = bilstm_context(&layers, x.view(), &[true, true, false]).unwrap();
        assert!(out.row(2).iter().all(|v| *v == 0.0));
        assert!(out.row(0).iter().any(|v| *v != 0.0));
        assert!(bilstm_context(&layers, Array2::ones((3, 5)).view(), &[true; 3]).is_err());
    }
}

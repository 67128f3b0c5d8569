use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::ModelConfig;

/// Fully connected layer `y = W x + b`, `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` weights, zero bias.
    pub fn init<R: Rng>(out: usize, inp: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((out, inp), |_| rng.random_range(-bound..bound)),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    /// Row-wise application to an `n x in` matrix.
    pub fn apply_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// One direction of an LSTM layer. Gate blocks are ordered input, forget,
/// cell, output (each `hidden` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmDirection {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bi = 1.0 / (input as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Array2::from_shape_fn((4 * hidden, input), |_| rng.random_range(-bi..bi)),
            w_hh: Array2::from_shape_fn((4 * hidden, hidden), |_| rng.random_range(-bh..bh)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

/// Scalar maps `theta(h)`, `mu(h)` and the scoring layer of the temporal attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub theta: Linear,
    pub mu: Linear,
    pub score: Linear,
}

/// `out(ReLU(hidden(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Empty when the recurrent context is ablated.
    pub lstm: Vec<LstmLayer>,
    /// Linear stand-in for the recurrent context (`2H x dim`).
    pub projection: Option<Linear>,
    pub attention: Attention,
    pub fs_head: MlpHead,
    pub bd_head: MlpHead,
    /// `log sigma_fs^2`
    pub log_var_fs: f64,
    /// `log sigma_bd^2`
    pub log_var_bd: f64,
}

impl ModelParameters {
    fn build(config: &ModelConfig, mut linear: impl FnMut(usize, usize) -> Linear, mut lstm: impl FnMut(usize, usize) -> LstmDirection) -> Self {
        let h = config.hidden_size;
        let d = 2 * h;
        let (layers, projection) = if config.ablation.no_bilstm {
            (Vec::new(), Some(linear(d, config.embedding_dim)))
        } else {
            let layers = (0..config.lstm_layers)
                .map(|l| {
                    let input = if l == 0 { config.embedding_dim } else { d };
                    LstmLayer {
                        forward: lstm(input, h),
                        backward: lstm(input, h),
                    }
                })
                .collect();
            (layers, None)
        };
        Self {
            lstm: layers,
            projection,
            attention: Attention {
                theta: linear(1, d),
                mu: linear(1, d),
                score: linear(1, d),
            },
            fs_head: MlpHead {
                hidden: linear(h, d),
                out: linear(config.n_levels, h),
            },
            bd_head: MlpHead {
                hidden: linear(h, config.embedding_dim),
                out: linear(config.n_symptoms(), h),
            },
            log_var_fs: 0.0,
            log_var_bd: 0.0,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, Linear::zeros, LstmDirection::zeros)
    }

    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let cell = std::cell::RefCell::new(rng);
        Self::build(
            config,
            |o, i| Linear::init(o, i, *cell.borrow_mut()),
            |i, h| LstmDirection::init(i, h, *cell.borrow_mut()),
        )
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a [f64])>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.weight"), l.weight.as_slice().expect("standard layout")));
            out.push((format!("{name}.bias"), l.bias.as_slice().expect("standard layout")));
        }
        for (i, layer) in self.lstm.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                out.push((format!("lstm.{i}.{dir}.w_ih"), p.w_ih.as_slice().expect("standard layout")));
                out.push((format!("lstm.{i}.{dir}.w_hh"), p.w_hh.as_slice().expect("standard layout")));
                out.push((format!("lstm.{i}.{dir}.bias"), p.bias.as_slice().expect("standard layout")));
            }
        }
        if let Some(p) = &self.projection {
            lin(&mut out, "projection", p);
        }
        lin(&mut out, "attention.theta", &self.attention.theta);
        lin(&mut out, "attention.mu", &self.attention.mu);
        lin(&mut out, "attention.score", &self.attention.score);
        lin(&mut out, "fs_head.hidden", &self.fs_head.hidden);
        lin(&mut out, "fs_head.out", &self.fs_head.out);
        lin(&mut out, "bd_head.hidden", &self.bd_head.hidden);
        lin(&mut out, "bd_head.out", &self.bd_head.out);
        out.push(("log_var_fs".into(), std::slice::from_ref(&self.log_var_fs)));
        out.push(("log_var_bd".into(), std::slice::from_ref(&self.log_var_bd)));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: &str, l: &'a mut Linear) {
            out.push((format!("{name}.weight"), l.weight.as_slice_mut().expect("standard layout")));
            out.push((format!("{name}.bias"), l.bias.as_slice_mut().expect("standard layout")));
        }
        for (i, layer) in self.lstm.iter_mut().enumerate() {
            for (dir, p) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                out.push((format!("lstm.{i}.{dir}.w_ih"), p.w_ih.as_slice_mut().expect("standard layout")));
                out.push((format!("lstm.{i}.{dir}.w_hh"), p.w_hh.as_slice_mut().expect("standard layout")));
                out.push((format!("lstm.{i}.{dir}.bias"), p.bias.as_slice_mut().expect("standard layout")));
            }
        }
        if let Some(p) = &mut self.projection {
            lin(&mut out, "projection", p);
        }
        lin(&mut out, "attention.theta", &mut self.attention.theta);
        lin(&mut out, "attention.mu", &mut self.attention.mu);
        lin(&mut out, "attention.score", &mut self.attention.score);
        lin(&mut out, "fs_head.hidden", &mut self.fs_head.hidden);
        lin(&mut out, "fs_head.out", &mut self.fs_head.out);
        lin(&mut out, "bd_head.hidden", &mut self.bd_head.hidden);
        lin(&mut out, "bd_head.out", &mut self.bd_head.out);
        out.push(("log_var_fs".into(), std::slice::from_mut(&mut self.log_var_fs)));
        out.push(("log_var_bd".into(), std::slice::from_mut(&mut self.log_var_bd)));
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

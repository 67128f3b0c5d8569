//! Multi-task network: BiLSTM context, temporal symptom-aware attention,
//! ordinal suicidality head, post-level symptom head, and the
//! uncertainty-weighted joint objective. Gradients are computed by hand and
//! verified against finite differences in the test suite.

mod attention;
pub mod checkpoint;
mod heads;
mod loss;
mod lstm;
mod params;

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncodedSequence;
use crate::timeline::Scheme;

pub use attention::{attention_pool, gate_value, temporal_gate};
pub use heads::{suicidality_head, symptom_head};
pub use loss::{
    binary_cross_entropy, cross_entropy, loss_bd, loss_fs, sord_soft_labels, total_loss, total_loss_sigma,
    PROB_FLOOR,
};
pub use lstm::bilstm_context;
pub use params::{Attention, Linear, LstmDirection, LstmLayer, MlpHead, ModelParameters};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence has no unmasked posts")]
    EmptySequence,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let e = x.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Score `h_t` directly instead of the time-gated state.
    pub no_temporal_attention: bool,
    /// Replace the BiLSTM by a learned linear projection to `2H`.
    pub no_bilstm: bool,
    /// Plain sum of task losses.
    pub no_uncertainty: bool,
    /// Symptom targets restricted to the six moods.
    pub no_somatic: bool,
    /// Symptom targets restricted to Somatic and Psychosis.
    pub no_mood: bool,
    /// Train the suicidality task alone.
    pub single_task: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    /// Ordinal soft-label penalty.
    pub alpha: f64,
    pub n_levels: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 1024,
            hidden_size: 512,
            lstm_layers: 2,
            dropout: 0.1,
            alpha: 1.8,
            n_levels: 4,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.embedding_dim == 0 || self.hidden_size == 0 {
            return bad("embedding_dim and hidden_size must be positive");
        }
        if self.lstm_layers == 0 && !self.ablation.no_bilstm {
            return bad("lstm_layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a nonnegative number");
        }
        if !(2..=4).contains(&self.n_levels) {
            return bad("n_levels must be 2, 3 or 4");
        }
        if self.ablation.no_mood && self.ablation.no_somatic {
            return bad("no_mood and no_somatic leave no symptom targets");
        }
        Ok(())
    }

    /// Columns of the 8-way multi-hot symptom target used by this model.
    pub fn symptom_columns(&self) -> Range<usize> {
        if self.ablation.no_somatic {
            0..6
        } else if self.ablation.no_mood {
            6..8
        } else {
            0..8
        }
    }

    pub fn n_symptoms(&self) -> usize {
        self.symptom_columns().len()
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::from_levels(self.n_levels).expect("validated n_levels")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub suicidality_logits: Vec<f64>,
    pub suicidality_probs: Vec<f64>,
    /// One row per unmasked post.
    pub symptom_logits: Array2<f64>,
    pub symptom_probs: Array2<f64>,
    /// One weight per unmasked post.
    pub attention: Vec<f64>,
    /// Pooled representation `g` (length `2H`).
    pub representation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub fs: f64,
    pub bd: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.fs.is_finite() && self.bd.is_finite()
    }
}

struct SeqForward {
    x0: Array2<f64>,
    lstm: Option<lstm::BiLstmCache>,
    hidden: Array2<f64>,
    deltas: Vec<f64>,
    att: attention::AttentionCache,
    g: Array1<f64>,
    g_keep: Option<Array1<f64>>,
    g_in: Array2<f64>,
    fs_cache: heads::HeadCache,
    fs_logits: Array1<f64>,
    fs_probs: Array1<f64>,
    bd_cache: heads::HeadCache,
    bd_logits: Array2<f64>,
    bd_probs: Array2<f64>,
    bd_targets: Array2<f64>,
}

fn dropout_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let keep = 1.0 - p;
    Array1::from_shape_fn(len, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParameters::init(&config, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_parameters(config: ModelConfig, params: ModelParameters) -> Result<Self, ModelError> {
        config.validate()?;
        let reference = ModelParameters::zeros(&config);
        let want = reference.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        for ((wn, wt), (gn, gt)) in want.iter().zip(&got) {
            if wn != gn || wt.len() != gt.len() {
                return Err(ModelError::Shape(format!("tensor {gn} does not match {wn}")));
            }
        }
        Ok(Self { config, params })
    }

    fn target_level(&self, seq: &EncodedSequence) -> usize {
        self.config.scheme().merge_code(seq.future_label.code() as usize)
    }

    fn check_input(&self, seq: &EncodedSequence) -> Result<Vec<usize>, ModelError> {
        let rows = seq.embeddings.nrows();
        if seq.mask.len() != rows || seq.deltas.len() != rows || seq.symptom_targets.nrows() != rows {
            return Err(ModelError::Shape("embeddings, deltas, mask and targets disagree in length".into()));
        }
        if seq.embeddings.ncols() != self.config.embedding_dim {
            return Err(ModelError::Shape(format!(
                "embedding dim {} but model expects {}",
                seq.embeddings.ncols(),
                self.config.embedding_dim
            )));
        }
        if seq.symptom_targets.ncols() < self.config.symptom_columns().end {
            return Err(ModelError::Shape("symptom targets too narrow".into()));
        }
        let real = seq.real_rows();
        if real.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        Ok(real)
    }

    fn forward_cached(&self, seq: &EncodedSequence, mut rng: Option<&mut ChaCha8Rng>) -> Result<SeqForward, ModelError> {
        let real = self.check_input(seq)?;
        let cfg = &self.config;
        let p = &self.params;
        let mut x0 = seq.embeddings.select(Axis(0), &real);
        let deltas: Vec<f64> = real.iter().map(|&i| seq.deltas[i]).collect();
        if deltas.iter().any(|d| *d < 0.0 || !d.is_finite()) {
            return Err(ModelError::Shape("deltas must be finite and nonnegative".into()));
        }
        let p_drop = cfg.dropout;
        if let (Some(r), true) = (rng.as_deref_mut(), p_drop > 0.0) {
            let m = dropout_mask(x0.len(), p_drop, r);
            x0.iter_mut().zip(m.iter()).for_each(|(x, k)| *x *= k);
        }

        let (hidden, lstm_cache) = if cfg.ablation.no_bilstm {
            let proj = p
                .projection
                .as_ref()
                .ok_or_else(|| ModelError::Shape("missing projection".into()))?;
            (proj.apply_rows(x0.view()), None)
        } else {
            let (h, c) = lstm::bilstm_forward(&p.lstm, x0.view());
            (h, Some(c))
        };

        let temporal = !cfg.ablation.no_temporal_attention;
        let (g, att) = attention::attention_forward(hidden.view(), &deltas, &p.attention, temporal);

        let mut g_in = g.clone();
        let mut g_keep = None;
        if let (Some(r), true) = (rng.as_deref_mut(), p_drop > 0.0) {
            let m = dropout_mask(g.len(), p_drop, r);
            g_in = &g_in * &m;
            g_keep = Some(m);
        }
        let g_in = g_in.insert_axis(Axis(0));
        let (fs_logits, fs_cache) = heads::head_forward(&p.fs_head, g_in.view());
        let fs_logits = fs_logits.row(0).to_owned();
        let fs_probs = softmax(fs_logits.view());

        let (bd_logits, bd_cache) = heads::head_forward(&p.bd_head, x0.view());
        let bd_probs = bd_logits.mapv(sigmoid);
        let cols = cfg.symptom_columns();
        let bd_targets = seq
            .symptom_targets
            .select(Axis(0), &real)
            .slice(ndarray::s![.., cols])
            .to_owned();

        Ok(SeqForward {
            x0,
            lstm: lstm_cache,
            hidden,
            deltas,
            att,
            g,
            g_keep,
            g_in,
            fs_cache,
            fs_logits,
            fs_probs,
            bd_cache,
            bd_logits,
            bd_probs,
            bd_targets,
        })
    }

    /// Evaluation-mode forward pass (no dropout, deterministic).
    pub fn forward(&self, seq: &EncodedSequence) -> Result<ModelOutput, ModelError> {
        self.forward_with(seq, None)
    }

    /// Forward pass; dropout is active iff `rng` is given.
    pub fn forward_with(&self, seq: &EncodedSequence, rng: Option<&mut ChaCha8Rng>) -> Result<ModelOutput, ModelError> {
        let f = self.forward_cached(seq, rng)?;
        Ok(ModelOutput {
            suicidality_logits: f.fs_logits.to_vec(),
            suicidality_probs: f.fs_probs.to_vec(),
            symptom_logits: f.bd_logits,
            symptom_probs: f.bd_probs,
            attention: f.att.weights.to_vec(),
            representation: f.g.to_vec(),
        })
    }

    fn losses(&self, fwd: &[SeqForward], batch: &[&EncodedSequence]) -> (f64, f64, Vec<Vec<f64>>, usize) {
        let soft: Vec<Vec<f64>> = batch
            .iter()
            .map(|s| sord_soft_labels(self.target_level(s), self.config.alpha, self.config.n_levels))
            .collect();
        let b = fwd.len() as f64;
        let l_fs = fwd
            .iter()
            .zip(&soft)
            .map(|(f, y)| cross_entropy(f.fs_probs.view(), y))
            .sum::<f64>()
            / b;
        let n_posts: usize = fwd.iter().map(|f| f.x0.nrows()).sum();
        let l_bd = fwd
            .iter()
            .map(|f| {
                f.bd_probs
                    .rows()
                    .into_iter()
                    .zip(f.bd_targets.rows())
                    .map(|(p, y)| binary_cross_entropy(p, y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n_posts as f64;
        (l_fs, l_bd, soft, n_posts)
    }

    /// Batch objective in evaluation mode.
    pub fn batch_loss(&self, batch: &[&EncodedSequence]) -> Result<LossBreakdown, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Shape("empty batch".into()));
        }
        let fwd = batch
            .iter()
            .map(|s| self.forward_cached(s, None))
            .collect::<Result<Vec<_>, _>>()?;
        let (fs, bd, _, _) = self.losses(&fwd, batch);
        let p = &self.params;
        Ok(LossBreakdown {
            total: total_loss(fs, bd, p.log_var_fs, p.log_var_bd, &self.config.ablation),
            fs,
            bd,
        })
    }

    /// Batch objective and its gradient w.r.t. every parameter. Dropout is
    /// applied iff `rng` is given.
    pub fn loss_and_grad(
        &self,
        batch: &[&EncodedSequence],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossBreakdown, ModelParameters), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Shape("empty batch".into()));
        }
        let fwd = batch
            .iter()
            .map(|s| self.forward_cached(s, rng.as_deref_mut()))
            .collect::<Result<Vec<_>, _>>()?;
        let (l_fs, l_bd, soft, n_posts) = self.losses(&fwd, batch);
        let p = &self.params;
        let ablation = &self.config.ablation;
        let total = total_loss(l_fs, l_bd, p.log_var_fs, p.log_var_bd, ablation);
        let w = loss::loss_weights(l_fs, l_bd, p.log_var_fs, p.log_var_bd, ablation);

        let mut grad = ModelParameters::zeros(&self.config);
        grad.log_var_fs = w.ds_fs;
        grad.log_var_bd = w.ds_bd;
        let scale_fs = w.c_fs / batch.len() as f64;
        let scale_bd = w.c_bd / n_posts as f64;
        let temporal = !ablation.no_temporal_attention;

        for (f, y) in fwd.iter().zip(&soft) {
            let dlogits = loss::cross_entropy_logit_grad(f.fs_probs.view(), y) * scale_fs;
            let dlogits = dlogits.insert_axis(Axis(0));
            let dg_in = heads::head_backward(&p.fs_head, f.g_in.view(), &f.fs_cache, dlogits.view(), &mut grad.fs_head, true)
                .expect("input grad requested");
            let mut dg = dg_in.row(0).to_owned();
            if let Some(keep) = &f.g_keep {
                dg = &dg * keep;
            }
            let dhidden = attention::attention_backward(
                f.hidden.view(),
                &f.deltas,
                &p.attention,
                temporal,
                &f.att,
                dg.view(),
                &mut grad.attention,
            );
            match (&f.lstm, &mut grad.projection) {
                (Some(cache), _) => lstm::bilstm_backward(&p.lstm, cache, dhidden, &mut grad.lstm),
                (None, Some(gp)) => {
                    gp.weight += &dhidden.t().dot(&f.x0);
                    gp.bias += &dhidden.sum_axis(Axis(0));
                }
                (None, None) => unreachable!("validated parameter layout"),
            }

            if w.c_bd != 0.0 {
                let mut dbd = Array2::zeros(f.bd_probs.dim());
                for (i, (pr, tg)) in f.bd_probs.rows().into_iter().zip(f.bd_targets.rows()).enumerate() {
                    dbd.row_mut(i)
                        .assign(&(loss::binary_cross_entropy_logit_grad(pr, tg) * scale_bd));
                }
                heads::head_backward(&p.bd_head, f.x0.view(), &f.bd_cache, dbd.view(), &mut grad.bd_head, false);
            }
        }
        Ok((LossBreakdown { total, fs: l_fs, bd: l_bd }, grad))
    }

    /// Suicidality distribution for many sequences (evaluation mode).
    pub fn predict_probs(&self, seqs: &[EncodedSequence]) -> Result<Array2<f64>, ModelError> {
        let rows = seqs
            .iter()
            .map(|s| self.forward(s).map(|o| Array1::from(o.suicidality_probs)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(loss::stack_rows(&rows, self.config.n_levels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SuicidalityLevel;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            hidden_size: 4,
            lstm_layers: 2,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    fn sequence(n_real: usize, max_len: usize, dim: usize, seed: u64) -> EncodedSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = Array2::zeros((max_len, dim));
        let mut targets = Array2::zeros((max_len, 8));
        let mut deltas = vec![0.0; max_len];
        for i in 0..n_real {
            for j in 0..dim {
                embeddings[[i, j]] = rng.random_range(-1.0..1.0);
            }
            targets[[i, rng.random_range(0..6)]] = 1.0;
            deltas[i] = ((n_real - 1 - i) * 7) as f64;
        }
        EncodedSequence {
            id: format!("s{seed}"),
            embeddings,
            deltas,
            mask: (0..max_len).map(|i| i < n_real).collect(),
            symptom_targets: targets,
            future_label: SuicidalityLevel::Behavior,
        }
    }

    #[test]
    fn outputs_are_normalized() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let out = m.forward(&sequence(3, 5, 8, 2)).unwrap();
        assert!((out.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((out.suicidality_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.symptom_probs.dim(), (3, 8));
        assert!(out.symptom_probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(out.representation.len(), 8);
    }

    #[test]
    fn padding_does_not_change_outputs() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let short = sequence(3, 3, 8, 2);
        let long = sequence(3, 9, 8, 2);
        assert_eq!(m.forward(&short).unwrap(), m.forward(&long).unwrap());
    }

    #[test]
    fn eval_is_deterministic_and_training_uses_dropout() {
        let m = Model::new(tiny_config(), 1).unwrap();
        let s = sequence(4, 4, 8, 3);
        assert_eq!(m.forward(&s).unwrap(), m.forward(&s).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = m.forward_with(&s, Some(&mut rng)).unwrap();
        assert_ne!(train.suicidality_logits, m.forward(&s).unwrap().suicidality_logits);
    }

    #[test]
    fn ablated_layouts() {
        let mut cfg = tiny_config();
        cfg.ablation.no_mood = true;
        cfg.ablation.no_bilstm = true;
        let m = Model::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.params.bd_head.out.out_dim(), 2);
        assert!(m.params.lstm.is_empty());
        assert!(m.forward(&sequence(2, 2, 8, 1)).is_ok());
        cfg.ablation.no_somatic = true;
        assert!(Model::new(cfg, 0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = Model::new(tiny_config(), 1).unwrap();
        assert!(matches!(m.forward(&sequence(2, 2, 5, 1)), Err(ModelError::Shape(_))));
        assert!(matches!(m.forward(&sequence(0, 2, 8, 1)), Err(ModelError::EmptySequence)));
    }
}

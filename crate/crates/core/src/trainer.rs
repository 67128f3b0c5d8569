//! Optimization, early stopping, metrics, cross-validation, ablations and
//! the observation/forecast period sweep.

use std::collections::HashMap;
use std::io::Write;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::{encode_timelines, EncodeError, EncodedSequence, PostEmbedder};
use crate::model::{Model, ModelConfig, ModelError, ModelParameters};
use crate::timeline::{build_timelines, oversample_by, split_user_disjoint_folds, FoldSplit, Scheme, Timeline, TimelineError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("invalid metric input: {0}")]
    Metrics(String),
    #[error("model has {model} levels but scheme has {scheme}")]
    SchemeMismatch { model: usize, scheme: usize },
    #[error("unknown variant {name:?}; valid variants: {valid}")]
    UnknownVariant { name: String, valid: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Per-epoch factor `gamma^(1 / max_epochs)`: the rate falls by `gamma`
    /// over the full run.
    #[default]
    SpreadOverRun,
    /// Per-epoch factor `gamma`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_gamma: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Record training-set F1 after every epoch.
    pub track_train_f1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            lr_gamma: 0.001,
            schedule: LrSchedule::SpreadOverRun,
            seed: 0,
            track_train_f1: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return bad("lr_gamma must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn epoch_decay(&self) -> f64 {
        match self.schedule {
            LrSchedule::SpreadOverRun => self.lr_gamma.powf(1.0 / self.max_epochs as f64),
            LrSchedule::Literal => self.lr_gamma,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: ModelParameters,
    v: ModelParameters,
    t: i32,
}

impl AdamW {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelParameters::zeros(config),
            v: ModelParameters::zeros(config),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let g = grads.tensors();
        for ((((_, p), (_, m)), (_, v)), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(g)
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] *= 1.0 - lr * cfg.weight_decay;
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch objectives.
    pub loss: f64,
    pub loss_fs: f64,
    pub loss_bd: f64,
    pub val_f1: f64,
    pub train_f1: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

/// Trains a fresh model. `train` should already be oversampled; `validation`
/// drives early stopping on main-task weighted F1 (the training set is used
/// when it is empty).
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train: &[EncodedSequence],
    validation: &[EncodedSequence],
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let scheme = model_config.scheme();
    let mut model = Model::new(model_config.clone(), config.seed)?;
    let mut opt = AdamW::new(model_config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let monitor = if validation.is_empty() { train } else { validation };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = config.learning_rate;
    let decay = config.epoch_decay();
    let mut best: Option<(usize, f64, ModelParameters)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_fs, mut sum_bd) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.loss_and_grad(&batch, Some(&mut rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            opt.step(&mut model.params, &grads, lr, config);
            let w = batch.len() as f64;
            sum += loss.total * w;
            sum_fs += loss.fs * w;
            sum_bd += loss.bd * w;
        }
        if !model.params.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size) - 1,
            });
        }
        let n = train.len() as f64;
        let score = evaluate_main(&model, monitor, scheme)?.f1;
        let train_f1 = if config.track_train_f1 {
            Some(evaluate_main(&model, train, scheme)?.f1)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            loss: sum / n,
            loss_fs: sum_fs / n,
            loss_bd: sum_bd / n,
            val_f1: score,
            train_f1,
            learning_rate: lr,
        });
        lr *= decay;

        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_score, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: Model::from_parameters(model_config.clone(), params)?,
        best_epoch,
        best_score,
        history,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Support-weighted precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][pred]`; empty for multi-label metrics.
    pub confusion: Vec<Vec<usize>>,
    pub n_samples: usize,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn weighted(per_class: &[ClassMetrics]) -> (f64, f64, f64) {
    let total: usize = per_class.iter().map(|c| c.support).sum();
    if total == 0 {
        return (0.0, 0.0, 0.0);
    }
    let avg = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
    };
    (avg(|c| c.precision), avg(|c| c.recall), avg(|c| c.f1))
}

/// Multiclass metrics over classes `0..n_classes`. Classes never predicted
/// have precision 0; classes absent from `y_true` carry zero weight.
pub fn weighted_prf(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Metrics, TrainError> {
    if y_true.len() != y_pred.len() {
        return Err(TrainError::Metrics(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(TrainError::Metrics("no samples".into()));
    }
    if let Some(bad) = y_true.iter().chain(y_pred).find(|&&c| c >= n_classes) {
        return Err(TrainError::Metrics(format!("label {bad} outside 0..{n_classes}")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let (precision, recall, f1) = prf(tp, predicted - tp, support - tp);
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let (precision, recall, f1) = weighted(&per_class);
    Ok(Metrics {
        precision,
        recall,
        f1,
        per_class,
        confusion,
        n_samples: y_true.len(),
    })
}

/// Multi-label metrics: one binary problem per label, weighted by the
/// number of positive instances of each label.
pub fn weighted_prf_multilabel(y_true: &[Vec<bool>], y_pred: &[Vec<bool>]) -> Result<Metrics, TrainError> {
    if y_true.len() != y_pred.len() {
        return Err(TrainError::Metrics("label and prediction counts differ".into()));
    }
    let Some(width) = y_true.first().map(Vec::len) else {
        return Err(TrainError::Metrics("no samples".into()));
    };
    if y_true.iter().chain(y_pred).any(|r| r.len() != width) {
        return Err(TrainError::Metrics("ragged label rows".into()));
    }
    let per_class = (0..width)
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (t, p) in y_true.iter().zip(y_pred) {
                match (t[c], p[c]) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let (precision, recall, f1) = prf(tp, fp, fn_);
            ClassMetrics {
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect::<Vec<_>>();
    let (precision, recall, f1) = weighted(&per_class);
    Ok(Metrics {
        precision,
        recall,
        f1,
        per_class,
        confusion: Vec::new(),
        n_samples: y_true.len(),
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_scheme(model: &Model, scheme: Scheme) -> Result<(), TrainError> {
    if model.config.n_levels != scheme.n_levels() {
        return Err(TrainError::SchemeMismatch {
            model: model.config.n_levels,
            scheme: scheme.n_levels(),
        });
    }
    Ok(())
}

/// Main-task predictions as `(true, predicted)` merged level pairs.
pub fn predict_levels(model: &Model, seqs: &[EncodedSequence], scheme: Scheme) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    check_scheme(model, scheme)?;
    let mut truth = Vec::with_capacity(seqs.len());
    let mut pred = Vec::with_capacity(seqs.len());
    for s in seqs {
        let out = model.forward(s)?;
        truth.push(scheme.merge_code(s.future_label.code() as usize));
        pred.push(argmax(&out.suicidality_probs));
    }
    Ok((truth, pred))
}

fn evaluate_main(model: &Model, seqs: &[EncodedSequence], scheme: Scheme) -> Result<Metrics, TrainError> {
    let (t, p) = predict_levels(model, seqs, scheme)?;
    weighted_prf(&t, &p, scheme.n_levels())
}

/// Post-level symptom labels and thresholded predictions.
pub fn predict_symptoms(model: &Model, seqs: &[EncodedSequence]) -> Result<(Vec<Vec<bool>>, Vec<Vec<bool>>), TrainError> {
    let cols = model.config.symptom_columns();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for s in seqs {
        let out = model.forward(s)?;
        for (k, row) in s.real_rows().into_iter().enumerate() {
            truth.push(cols.clone().map(|c| s.symptom_targets[[row, c]] >= 0.5).collect());
            pred.push(out.symptom_probs.index_axis(Axis(0), k).iter().map(|p| *p >= 0.5).collect());
        }
    }
    Ok((truth, pred))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub scheme: usize,
    pub suicidality: Metrics,
    pub symptom: Metrics,
}

/// Both tasks' weighted metrics. The model must have been trained with the
/// same number of levels as `scheme`.
pub fn evaluate(model: &Model, seqs: &[EncodedSequence], scheme: Scheme) -> Result<Evaluation, TrainError> {
    let suicidality = evaluate_main(model, seqs, scheme)?;
    let (t, p) = predict_symptoms(model, seqs)?;
    Ok(Evaluation {
        scheme: scheme.n_levels(),
        suicidality,
        symptom: weighted_prf_multilabel(&t, &p)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-fold metrics.
    #[default]
    FoldMean,
    /// Metrics over the pooled test predictions of all folds.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub max_len: usize,
    pub l_months: u32,
    pub m_months: u32,
    pub min_posts: usize,
    pub aggregation: Aggregation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            folds: 5,
            max_len: crate::encoder::DEFAULT_MAX_LEN,
            l_months: 6,
            m_months: 1,
            min_posts: 3,
            aggregation: Aggregation::FoldMean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub evaluation: Evaluation,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub model: Model,
    test_main: (Vec<usize>, Vec<usize>),
    test_symptom: (Vec<Vec<bool>>, Vec<Vec<bool>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&Metrics> for Prf {
    fn from(m: &Metrics) -> Self {
        Self {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub scheme: usize,
    pub aggregation: Aggregation,
    pub suicidality: Prf,
    pub symptom: Prf,
    pub per_fold: Vec<Evaluation>,
}

/// Encoded timelines keyed by timeline id.
pub struct EncodedSet {
    by_id: HashMap<String, EncodedSequence>,
}

impl EncodedSet {
    pub fn new<E: PostEmbedder + ?Sized>(embedder: &E, timelines: &[Timeline], max_len: usize) -> Result<Self, TrainError> {
        let seqs = encode_timelines(embedder, timelines, max_len)?;
        Ok(Self {
            by_id: seqs.into_iter().map(|s| (s.id.clone(), s)).collect(),
        })
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<EncodedSequence>, TrainError> {
        ids.iter()
            .map(|id| {
                self.by_id
                    .get(id)
                    .cloned()
                    .ok_or_else(|| TrainError::Config(format!("timeline {id} missing from encoded set")))
            })
            .collect()
    }
}

/// Trains and tests one fold. Oversampling touches the training split only;
/// the test split is used for nothing but the final evaluation.
pub fn run_fold(data: &EncodedSet, split: &FoldSplit, fold: usize, config: &ExperimentConfig) -> Result<FoldResult, TrainError> {
    let f = split
        .folds
        .get(fold)
        .ok_or_else(|| TrainError::Config(format!("fold {fold} out of range")))?;
    let scheme = config.model.scheme();
    let train_raw = data.select(&f.train)?;
    let train_seqs = oversample_by(
        &train_raw,
        |s| scheme.merge_code(s.future_label.code() as usize),
        config.train.seed.wrapping_add(fold as u64),
    );
    let validation = data.select(&f.validation)?;
    let test = data.select(&f.test)?;
    let outcome = train(&config.model, &config.train, &train_seqs, &validation)?;
    let evaluation = evaluate(&outcome.model, &test, scheme)?;
    Ok(FoldResult {
        fold,
        evaluation,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        test_main: predict_levels(&outcome.model, &test, scheme)?,
        test_symptom: predict_symptoms(&outcome.model, &test)?,
        model: outcome.model,
    })
}

fn mean_prf(items: impl Iterator<Item = Prf>) -> Prf {
    let v: Vec<Prf> = items.collect();
    let n = v.len().max(1) as f64;
    Prf {
        precision: v.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: v.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: v.iter().map(|p| p.f1).sum::<f64>() / n,
    }
}

pub fn summarize(results: &[FoldResult], scheme: Scheme, aggregation: Aggregation) -> Result<CvSummary, TrainError> {
    if results.is_empty() {
        return Err(TrainError::Metrics("no fold results".into()));
    }
    let (suicidality, symptom) = match aggregation {
        Aggregation::FoldMean => (
            mean_prf(results.iter().map(|r| Prf::from(&r.evaluation.suicidality))),
            mean_prf(results.iter().map(|r| Prf::from(&r.evaluation.symptom))),
        ),
        Aggregation::Pooled => {
            let (mut t, mut p, mut st, mut sp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for r in results {
                t.extend_from_slice(&r.test_main.0);
                p.extend_from_slice(&r.test_main.1);
                st.extend_from_slice(&r.test_symptom.0);
                sp.extend_from_slice(&r.test_symptom.1);
            }
            (
                Prf::from(&weighted_prf(&t, &p, scheme.n_levels())?),
                Prf::from(&weighted_prf_multilabel(&st, &sp)?),
            )
        }
    };
    Ok(CvSummary {
        scheme: scheme.n_levels(),
        aggregation,
        suicidality,
        symptom,
        per_fold: results.iter().map(|r| r.evaluation.clone()).collect(),
    })
}

/// Sequential k-fold cross-validation over `timelines`.
pub fn cross_validate<E: PostEmbedder + ?Sized>(
    timelines: &[Timeline],
    embedder: &E,
    config: &ExperimentConfig,
) -> Result<(CvSummary, Vec<FoldResult>), TrainError> {
    let split = split_user_disjoint_folds(timelines, config.folds, config.train.seed)?;
    let data = EncodedSet::new(embedder, timelines, config.max_len)?;
    let results = (0..split.k)
        .map(|f| run_fold(&data, &split, f, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((summarize(&results, config.model.scheme(), config.aggregation)?, results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    MtlAll,
    NoUncertainty,
    NoTemporalAttention,
    NoBiLstm,
    NoSomatic,
    NoMoods,
    Stl,
}

impl Variant {
    /// The six multi-task ablation rows.
    pub const ABLATIONS: [Variant; 6] = [
        Variant::MtlAll,
        Variant::NoUncertainty,
        Variant::NoTemporalAttention,
        Variant::NoBiLstm,
        Variant::NoSomatic,
        Variant::NoMoods,
    ];
    pub const ALL: [Variant; 7] = [
        Variant::MtlAll,
        Variant::NoUncertainty,
        Variant::NoTemporalAttention,
        Variant::NoBiLstm,
        Variant::NoSomatic,
        Variant::NoMoods,
        Variant::Stl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MtlAll => "MTL All",
            Variant::NoUncertainty => "w/o Uncertainty Loss",
            Variant::NoTemporalAttention => "w/o Temp SA Att",
            Variant::NoBiLstm => "w/o Bi-LSTM",
            Variant::NoSomatic => "w/o Somatic",
            Variant::NoMoods => "w/o Moods",
            Variant::Stl => "STL",
        }
    }

    pub fn parse(name: &str) -> Result<Self, TrainError> {
        let key = |s: &str| s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        let wanted = key(name);
        Self::ALL.into_iter().find(|v| key(v.name()) == wanted).ok_or_else(|| TrainError::UnknownVariant {
            name: name.into(),
            valid: Self::ALL.map(|v| format!("{:?}", v.name())).join(", "),
        })
    }

    pub fn apply(self, config: &ModelConfig) -> ModelConfig {
        let mut c = config.clone();
        let a = &mut c.ablation;
        match self {
            Variant::MtlAll => {}
            Variant::NoUncertainty => a.no_uncertainty = true,
            Variant::NoTemporalAttention => a.no_temporal_attention = true,
            Variant::NoBiLstm => a.no_bilstm = true,
            Variant::NoSomatic => a.no_somatic = true,
            Variant::NoMoods => a.no_mood = true,
            Variant::Stl => a.single_task = true,
        }
        c
    }
}

/// Cross-validated metrics with the variant's flag set.
pub fn run_ablation<E: PostEmbedder + ?Sized>(
    variant: Variant,
    timelines: &[Timeline],
    embedder: &E,
    config: &ExperimentConfig,
) -> Result<CvSummary, TrainError> {
    let cfg = ExperimentConfig {
        model: variant.apply(&config.model),
        ..config.clone()
    };
    Ok(cross_validate(timelines, embedder, &cfg)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub l_months: u32,
    pub m_months: u32,
    pub n_timelines: usize,
    /// `None` when the cell could not be evaluated.
    pub summary: Option<CvSummary>,
    pub note: Option<String>,
}

/// Rebuilds timelines per `(l, m)` and cross-validates each cell. Cells with
/// no timelines or too few users are recorded as empty.
pub fn sweep_cell<E: PostEmbedder + ?Sized>(
    corpus: &Corpus,
    l: u32,
    m: u32,
    embedder: &E,
    config: &ExperimentConfig,
) -> Result<SweepCell, TrainError> {
    let timelines = build_timelines(corpus, l, m, config.min_posts);
    let mut cell = SweepCell {
        l_months: l,
        m_months: m,
        n_timelines: timelines.len(),
        summary: None,
        note: None,
    };
    if timelines.is_empty() {
        cell.note = Some("no timelines".into());
        return Ok(cell);
    }
    let cfg = ExperimentConfig {
        l_months: l,
        m_months: m,
        ..config.clone()
    };
    match cross_validate(&timelines, embedder, &cfg) {
        Ok((summary, _)) => cell.summary = Some(summary),
        Err(TrainError::Timeline(e @ TimelineError::TooFewUsers { .. })) => cell.note = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(cell)
}

pub fn sweep_periods<E: PostEmbedder + ?Sized>(
    corpus: &Corpus,
    ls: &[u32],
    ms: &[u32],
    embedder: &E,
    config: &ExperimentConfig,
) -> Result<Vec<SweepCell>, TrainError> {
    let mut out = Vec::with_capacity(ls.len() * ms.len());
    for &l in ls {
        for &m in ms {
            out.push(sweep_cell(corpus, l, m, embedder, config)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub task: String,
    pub scheme: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl CvSummary {
    pub fn rows(&self, run_id: &str) -> Vec<MetricsRow> {
        [("suicidality", self.suicidality), ("symptom", self.symptom)]
            .into_iter()
            .map(|(task, m)| MetricsRow {
                run_id: run_id.into(),
                task: task.into(),
                scheme: self.scheme,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
            .collect()
    }
}

impl Evaluation {
    pub fn rows(&self, run_id: &str) -> Vec<MetricsRow> {
        [("suicidality", &self.suicidality), ("symptom", &self.symptom)]
            .into_iter()
            .map(|(task, m)| MetricsRow {
                run_id: run_id.into(),
                task: task.into(),
                scheme: self.scheme,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
            .collect()
    }
}

/// CSV with header `run_id,task,scheme,precision,recall,f1`.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["run_id", "task", "scheme", "precision", "recall", "f1"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

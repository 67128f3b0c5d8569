//! Cohort statistics and interpretability.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{Post, SuicidalityLevel, UserRecord, N_SYMPTOMS, SECONDS_PER_DAY, SYMPTOM_NAMES};
use crate::encoder::{tokenize, EncodedSequence};
use crate::model::{Model, ModelError};
use crate::timeline::Timeline;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sample too small: {0}")]
    TooSmall(String),
    #[error("zero variance in both samples")]
    DegenerateVariance,
    #[error("chance agreement is 1; kappa is undefined")]
    UndefinedKappa,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Survival

/// Kaplan-Meier step function. `times[i]` are the distinct event times
/// and `survival[i]` is `S` just after `times[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub group: String,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub n_subjects: usize,
}

impl SurvivalCurve {
    /// `S(t)`; equals 1 before the first event.
    pub fn at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }
}

/// One subject: follow-up time and whether the event was observed
/// (`false` = censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub time: f64,
    pub event: bool,
}

/// Product-limit estimate `S(t) = prod_{t_i <= t} (1 - d_i / n_i)`.
/// Censored subjects leave the risk set after events at the same time.
pub fn product_limit(subjects: &[Subject], group: &str) -> SurvivalCurve {
    let mut sorted: Vec<Subject> = subjects.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut curve = SurvivalCurve {
        group: group.into(),
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        n_subjects: subjects.len(),
    };
    let mut s = 1.0;
    let mut n = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let j = sorted[i..].iter().position(|x| x.time != t).map_or(sorted.len(), |k| i + k);
        let d = sorted[i..j].iter().filter(|x| x.event).count();
        if d > 0 {
            s *= 1.0 - d as f64 / n as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(n);
            curve.events.push(d);
        }
        n -= j - i;
        i = j;
    }
    curve
}

/// Follow-up for one user, anchored at the first post. The event is the
/// first gap of more than `window_days` without a post; its time is the
/// moment the gap is confirmed. Users still inside a window at `study_end`
/// are censored there.
pub fn inactivity_subject(user: &UserRecord, window_days: f64, study_end: i64) -> Option<Subject> {
    let first = user.posts.first()?.timestamp;
    let window = window_days * SECONDS_PER_DAY as f64;
    let days = |t: f64| (t - first as f64) / SECONDS_PER_DAY as f64;
    for pair in user.posts.windows(2) {
        let gap = (pair[1].timestamp - pair[0].timestamp) as f64;
        if gap > window {
            return Some(Subject {
                time: days(pair[0].timestamp as f64 + window),
                event: true,
            });
        }
    }
    let last = user.posts.last()?.timestamp as f64;
    if last + window <= study_end as f64 {
        Some(Subject {
            time: days(last + window),
            event: true,
        })
    } else {
        Some(Subject {
            time: days(study_end as f64).max(days(last)),
            event: false,
        })
    }
}

/// Survival curves per BD type. `study_end` defaults to the latest post in
/// `users`. Groups without users are omitted.
pub fn kaplan_meier(users: &[UserRecord], window_days: f64, study_end: Option<i64>) -> BTreeMap<String, SurvivalCurve> {
    let end = study_end.or_else(|| users.iter().filter_map(|u| u.posts.last()).map(|p| p.timestamp).max());
    let mut groups: BTreeMap<String, Vec<Subject>> = BTreeMap::new();
    if let Some(end) = end {
        for u in users {
            if let Some(s) = inactivity_subject(u, window_days, end) {
                groups.entry(u.bd_type.as_str().to_string()).or_default().push(s);
            }
        }
    }
    groups.into_iter().map(|(g, s)| (g.clone(), product_limit(&s, &g))).collect()
}

/// CSV with columns `group,time_days,at_risk,events,survival`; every group
/// starts with a row at time 0.
pub fn write_survival_csv<W: Write>(curves: &BTreeMap<String, SurvivalCurve>, writer: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "time_days", "at_risk", "events", "survival"])?;
    for c in curves.values() {
        w.write_record([c.group.as_str(), "0", &c.n_subjects.to_string(), "0", "1"])?;
        for i in 0..c.times.len() {
            w.write_record([
                c.group.clone(),
                c.times[i].to_string(),
                c.at_risk[i].to_string(),
                c.events[i].to_string(),
                c.survival[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Group comparison

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::TooSmall(format!("sizes {} and {}; need at least 2 each", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(AnalysisError::Invalid("non-finite observation".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(AnalysisError::DegenerateVariance);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, df, p })
}

/// Per-timeline numeric features for group comparisons.
pub trait TimelineFeatures {
    fn names(&self) -> Vec<String>;
    fn extract(&self, timeline: &Timeline) -> Vec<f64>;
}

/// Fraction of the timeline's posts carrying each symptom label.
pub struct SymptomFrequency;

impl TimelineFeatures for SymptomFrequency {
    fn names(&self) -> Vec<String> {
        SYMPTOM_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn extract(&self, timeline: &Timeline) -> Vec<f64> {
        let mut acc = [0.0; N_SYMPTOMS];
        for p in &timeline.posts {
            for (a, v) in acc.iter_mut().zip(p.symptom.multi_hot()) {
                *a += v;
            }
        }
        let n = timeline.posts.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

/// Fraction of the timeline's posts at each past suicidality level.
pub struct PastSuicidality;

impl TimelineFeatures for PastSuicidality {
    fn names(&self) -> Vec<String> {
        SuicidalityLevel::ALL.iter().map(|l| format!("past {}", l.as_str())).collect()
    }

    fn extract(&self, timeline: &Timeline) -> Vec<f64> {
        let mut acc = [0.0; 4];
        for p in &timeline.posts {
            acc[p.suicidality.code() as usize] += 1.0;
        }
        let n = timeline.posts.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

/// Mean per-post lexicon category proportion over the timeline.
pub struct LexiconFeatures<'a>(pub &'a Lexicon);

impl TimelineFeatures for LexiconFeatures<'_> {
    fn names(&self) -> Vec<String> {
        self.0.categories.keys().cloned().collect()
    }

    fn extract(&self, timeline: &Timeline) -> Vec<f64> {
        let mut acc = vec![0.0; self.0.categories.len()];
        for p in &timeline.posts {
            for (a, v) in acc.iter_mut().zip(self.0.proportions(&p.text).values()) {
                *a += v;
            }
        }
        let n = timeline.posts.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub feature: String,
    pub mean_severe: f64,
    pub mean_low: f64,
    pub n_severe: usize,
    pub n_low: usize,
    /// `None` when both groups have zero variance.
    pub t: Option<f64>,
    pub p: Option<f64>,
}

/// Welch t-tests between severe-risk timelines (future label ID or above)
/// and low-risk timelines (IN), one row per feature; `t > 0` means the
/// feature is higher in the severe group.
pub fn group_compare(timelines: &[Timeline], extractors: &[&dyn TimelineFeatures]) -> Result<Vec<GroupComparison>, AnalysisError> {
    let mut rows = Vec::new();
    for ex in extractors {
        let names = ex.names();
        let mut severe: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut low: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for t in timelines {
            let values = ex.extract(t);
            let target = if t.future_label >= SuicidalityLevel::Ideation { &mut severe } else { &mut low };
            for (col, v) in target.iter_mut().zip(values) {
                col.push(v);
            }
        }
        for (k, name) in names.into_iter().enumerate() {
            let (s, l) = (&severe[k], &low[k]);
            let mean = |x: &[f64]| if x.is_empty() { f64::NAN } else { x.iter().sum::<f64>() / x.len() as f64 };
            let (t, p) = match welch_t_test(s, l) {
                Ok(r) => (Some(r.t), Some(r.p)),
                Err(AnalysisError::DegenerateVariance) => (None, None),
                Err(e) => return Err(e),
            };
            rows.push(GroupComparison {
                feature: name,
                mean_severe: mean(s),
                mean_low: mean(l),
                n_severe: s.len(),
                n_low: l.len(),
                t,
                p,
            });
        }
    }
    Ok(rows)
}

pub fn write_group_csv<W: Write>(rows: &[GroupComparison], writer: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "mean_severe", "mean_low", "n_severe", "n_low", "t", "p"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.feature.clone(),
            r.mean_severe.to_string(),
            r.mean_low.to_string(),
            r.n_severe.to_string(),
            r.n_low.to_string(),
            opt(r.t),
            opt(r.p),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Lexicon

/// Category word lists. A trailing `*` matches any token with that prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon {
    pub categories: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn from_json_str(s: &str) -> Result<Self, AnalysisError> {
        let lex: Lexicon = serde_json::from_str(s).map_err(|e| AnalysisError::Lexicon(e.to_string()))?;
        for (cat, words) in &lex.categories {
            if words.iter().any(|w| w.trim_end_matches('*').is_empty()) {
                return Err(AnalysisError::Lexicon(format!("empty pattern in category {cat:?}")));
            }
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)
            .map_err(|e| AnalysisError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&s)
    }

    fn matches(pattern: &str, token: &str) -> bool {
        match pattern.strip_suffix('*') {
            Some(prefix) => token.starts_with(&prefix.to_lowercase()),
            None => token == pattern.to_lowercase(),
        }
    }

    /// Share of tokens in `text` matching each category; zeros for text
    /// without tokens.
    pub fn proportions(&self, text: &str) -> BTreeMap<String, f64> {
        let tokens: Vec<String> = tokenize(text).collect();
        self.categories
            .iter()
            .map(|(cat, words)| {
                let hits = tokens.iter().filter(|t| words.iter().any(|w| Self::matches(w, t))).count();
                let share = if tokens.is_empty() { 0.0 } else { hits as f64 / tokens.len() as f64 };
                (cat.clone(), share)
            })
            .collect()
    }
}

/// Per-post category proportions.
pub fn lexicon_counts(posts: &[Post], lexicon: &Lexicon) -> Vec<BTreeMap<String, f64>> {
    posts.iter().map(|p| lexicon.proportions(&p.text)).collect()
}

// ---------------------------------------------------------------------------
// Agreement

/// Cohen's kappa for two raters.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Invalid("rater vectors differ in length".into()));
    }
    if a.is_empty() {
        return Err(AnalysisError::TooSmall("no ratings".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ca: HashMap<&T, f64> = HashMap::new();
    let mut cb: HashMap<&T, f64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let p_o = agree / n;
    let p_e: f64 = ca.iter().map(|(k, v)| v * cb.get(k).copied().unwrap_or(0.0)).sum::<f64>() / (n * n);
    if p_e >= 1.0 {
        return Err(AnalysisError::UndefinedKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Krippendorff's alpha with the nominal metric. `ratings[u][c]` is coder
/// `c`'s value for unit `u`; `None` marks a missing rating. Units with fewer
/// than two ratings are ignored.
pub fn krippendorff_alpha<T: Ord + Clone>(ratings: &[Vec<Option<T>>]) -> Result<f64, AnalysisError> {
    let values: BTreeSet<T> = ratings.iter().flatten().flatten().cloned().collect();
    let index: BTreeMap<T, usize> = values.into_iter().enumerate().map(|(i, v)| (v, i)).collect();
    let k = index.len();
    let mut o = vec![vec![0.0; k]; k];
    for unit in ratings {
        let vals: Vec<usize> = unit.iter().flatten().map(|v| index[v]).collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    o[vals[i]][vals[j]] += 1.0 / (m as f64 - 1.0);
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    if n < 2.0 {
        return Err(AnalysisError::TooSmall("fewer than 2 pairable ratings".into()));
    }
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..k {
        for j in 0..k {
            if c != j {
                d_o += o[c][j];
                d_e += n_c[c] * n_c[j];
            }
        }
    }
    if d_e == 0.0 {
        return Err(AnalysisError::Invalid("all pairable ratings share one value".into()));
    }
    Ok(1.0 - (n - 1.0) * d_o / d_e)
}

// ---------------------------------------------------------------------------
// Attention

/// Mean attention weight per (symptom, future level) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub symptoms: Vec<String>,
    pub levels: Vec<String>,
    /// `mean[symptom][level]`; `None` for cells without posts.
    pub mean: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

/// Averages each real post's attention weight into every cell given by one
/// of its symptom labels and its timeline's future level.
pub fn aggregate_attention(model: &Model, seqs: &[EncodedSequence]) -> Result<AttentionProfile, AnalysisError> {
    let mut sum = vec![vec![0.0; 4]; N_SYMPTOMS];
    let mut counts = vec![vec![0usize; 4]; N_SYMPTOMS];
    for s in seqs {
        let out = model.forward(s)?;
        let level = s.future_label.code() as usize;
        for (k, row) in s.real_rows().into_iter().enumerate() {
            for sym in 0..N_SYMPTOMS {
                if s.symptom_targets[[row, sym]] >= 0.5 {
                    sum[sym][level] += out.attention[k];
                    counts[sym][level] += 1;
                }
            }
        }
    }
    let mean = sum
        .iter()
        .zip(&counts)
        .map(|(s, c)| s.iter().zip(c).map(|(v, n)| (*n > 0).then(|| v / *n as f64)).collect())
        .collect();
    Ok(AttentionProfile {
        symptoms: SYMPTOM_NAMES.iter().map(|s| s.to_string()).collect(),
        levels: SuicidalityLevel::ALL.iter().map(|l| l.as_str().to_string()).collect(),
        mean,
        counts,
    })
}

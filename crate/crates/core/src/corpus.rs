//! Annotated corpus data model, JSON-lines reader/writer, and a seeded
//! synthetic corpus generator.
//!
//! A corpus file holds one JSON object per post:
//!
//! ```text
//! {"user_id": "u1", "bd_type": "BD-II", "post_id": "p1", "timestamp": "2019-03-01T12:00:00Z",
//!  "text": "...", "mood": "Depressed", "somatic": ["Psychosis"], "suicidality": "ID"}
//! ```
//!
//! Posts are grouped per user and sorted by `(timestamp, post_id)`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Earliest accepted timestamp (1970-01-01T00:00:00Z).
pub const EPOCH_MIN: i64 = 0;
/// Latest accepted timestamp (2100-01-01T00:00:00Z).
pub const EPOCH_MAX: i64 = 4_102_444_800;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid value {value:?} for field `{field}`")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: duplicate post_id {post_id:?}")]
    DuplicatePost { line: usize, post_id: String },
    #[error("line {line}: user {user_id:?} has conflicting bd_type")]
    ConflictingBdType { line: usize, user_id: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Ordinal suicidality level. `Indicator < Ideation < Behavior < Attempt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SuicidalityLevel {
    Indicator = 0,
    Ideation = 1,
    Behavior = 2,
    Attempt = 3,
}

impl SuicidalityLevel {
    pub const ALL: [SuicidalityLevel; 4] = [
        SuicidalityLevel::Indicator,
        SuicidalityLevel::Ideation,
        SuicidalityLevel::Behavior,
        SuicidalityLevel::Attempt,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Indicator => "IN",
            Self::Ideation => "ID",
            Self::Behavior => "BR",
            Self::Attempt => "AT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "IN" => Some(Self::Indicator),
            "ID" => Some(Self::Ideation),
            "BR" => Some(Self::Behavior),
            "AT" => Some(Self::Attempt),
            _ => None,
        }
    }
}

impl fmt::Display for SuicidalityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mood {
    Depressed,
    Manic,
    Anxiety,
    Irritability,
    Remission,
    Other,
}

impl Mood {
    pub const ALL: [Mood; 6] = [
        Mood::Depressed,
        Mood::Manic,
        Mood::Anxiety,
        Mood::Irritability,
        Mood::Remission,
        Mood::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mood::Depressed => "Depressed",
            Mood::Manic => "Manic",
            Mood::Anxiety => "Anxiety",
            Mood::Irritability => "Irritability",
            Mood::Remission => "Remission",
            Mood::Other => "Other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.as_str() == s)
    }
}

/// Somatic-related symptoms present in a post (zero, one, or both).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SomaticSet {
    pub somatic: bool,
    pub psychosis: bool,
}

impl SomaticSet {
    pub fn len(self) -> usize {
        self.somatic as usize + self.psychosis as usize
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    fn names(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.somatic {
            out.push("Somatic");
        }
        if self.psychosis {
            out.push("Psychosis");
        }
        out
    }
}

/// Number of symptom targets: six moods followed by Somatic and Psychosis.
pub const N_SYMPTOMS: usize = 8;

pub const SYMPTOM_NAMES: [&str; N_SYMPTOMS] = [
    "Depressed",
    "Manic",
    "Anxiety",
    "Irritability",
    "Remission",
    "Other",
    "Somatic",
    "Psychosis",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymptomLabel {
    pub mood: Mood,
    pub somatic: SomaticSet,
}

impl SymptomLabel {
    /// Multi-hot target over [`SYMPTOM_NAMES`].
    pub fn multi_hot(&self) -> [f64; N_SYMPTOMS] {
        let mut v = [0.0; N_SYMPTOMS];
        v[self.mood.index()] = 1.0;
        if self.somatic.somatic {
            v[6] = 1.0;
        }
        if self.somatic.psychosis {
            v[7] = 1.0;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BdType {
    BdI,
    BdII,
    Nos,
}

impl BdType {
    pub const ALL: [BdType; 3] = [BdType::BdI, BdType::BdII, BdType::Nos];

    pub fn as_str(self) -> &'static str {
        match self {
            BdType::BdI => "BD-I",
            BdType::BdII => "BD-II",
            BdType::Nos => "NOS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|b| b.as_str() == s)
    }
}

impl fmt::Display for BdType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    pub post_id: String,
    pub user_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub text: String,
    pub symptom: SymptomLabel,
    pub suicidality: SuicidalityLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub bd_type: BdType,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sorted by `user_id`.
    pub users: Vec<UserRecord>,
    pub metadata: String,
}

impl Corpus {
    pub fn n_posts(&self) -> usize {
        self.users.iter().map(|u| u.posts.len()).sum()
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.users.iter().flat_map(|u| u.posts.iter())
    }

    pub fn latest_timestamp(&self) -> Option<i64> {
        self.posts().map(|p| p.timestamp).max()
    }

    /// Serializes to the JSON-lines file format, users in order, posts in time order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for user in &self.users {
            for post in &user.posts {
                let record = RecordOut {
                    user_id: &user.user_id,
                    bd_type: user.bd_type.as_str(),
                    post_id: &post.post_id,
                    timestamp: format_timestamp(post.timestamp),
                    text: &post.text,
                    mood: post.symptom.mood.as_str(),
                    somatic: post.symptom.somatic.names(),
                    suicidality: post.suicidality.as_str(),
                };
                out.push_str(&serde_json::to_string(&record).expect("record serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Outcome counters collected while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub lines: usize,
    pub unknown_fields: usize,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    user_id: &'a str,
    bd_type: &'a str,
    post_id: &'a str,
    timestamp: String,
    text: &'a str,
    mood: &'a str,
    somatic: Vec<&'static str>,
    suicidality: &'a str,
}

const KNOWN_FIELDS: [&str; 8] = [
    "user_id",
    "bd_type",
    "post_id",
    "timestamp",
    "text",
    "mood",
    "somatic",
    "suicidality",
];

#[derive(Deserialize)]
struct RecordIn {
    user_id: String,
    bd_type: String,
    post_id: String,
    timestamp: String,
    text: String,
    mood: String,
    #[serde(default)]
    somatic: Vec<String>,
    suicidality: String,
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::<Utc>::from_timestamp(secs, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| secs.to_string())
}

/// Accepts RFC 3339 timestamps and bare `YYYY-MM-DD[THH:MM:SS]` (read as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt.and_utc().timestamp());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<(Corpus, ParseReport), CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_corpus_str(&text, &format!("file:{}", path.display()))
}

pub fn parse_corpus_str(input: &str, metadata: &str) -> Result<(Corpus, ParseReport), CorpusError> {
    let mut report = ParseReport::default();
    let mut users: BTreeMap<String, UserRecord> = BTreeMap::new();
    let mut seen_posts: HashSet<String> = HashSet::new();

    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
                line,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
            line,
            message: "expected a JSON object".into(),
        })?;
        report.unknown_fields += obj
            .keys()
            .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
            .count();
        let rec: RecordIn = serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;

        let invalid = |field: &'static str, value: &str| CorpusError::InvalidField {
            line,
            field,
            value: value.to_string(),
        };
        let bd_type = BdType::parse(&rec.bd_type).ok_or_else(|| invalid("bd_type", &rec.bd_type))?;
        let mood = Mood::parse(&rec.mood).ok_or_else(|| invalid("mood", &rec.mood))?;
        let mut somatic = SomaticSet::default();
        for s in &rec.somatic {
            match s.as_str() {
                "Somatic" => somatic.somatic = true,
                "Psychosis" => somatic.psychosis = true,
                "Both" => {
                    somatic.somatic = true;
                    somatic.psychosis = true;
                }
                _ => return Err(invalid("somatic", s)),
            }
        }
        let suicidality = SuicidalityLevel::parse(&rec.suicidality)
            .ok_or_else(|| invalid("suicidality", &rec.suicidality))?;
        let timestamp = parse_timestamp(&rec.timestamp)
            .filter(|t| (EPOCH_MIN..=EPOCH_MAX).contains(t))
            .ok_or_else(|| invalid("timestamp", &rec.timestamp))?;
        if rec.text.trim().is_empty() {
            return Err(invalid("text", &rec.text));
        }
        if rec.user_id.is_empty() {
            return Err(invalid("user_id", &rec.user_id));
        }
        if !seen_posts.insert(rec.post_id.clone()) {
            return Err(CorpusError::DuplicatePost {
                line,
                post_id: rec.post_id,
            });
        }

        let user = users
            .entry(rec.user_id.clone())
            .or_insert_with(|| UserRecord {
                user_id: rec.user_id.clone(),
                bd_type,
                posts: Vec::new(),
            });
        if user.bd_type != bd_type {
            return Err(CorpusError::ConflictingBdType {
                line,
                user_id: rec.user_id,
            });
        }
        user.posts.push(Post {
            post_id: rec.post_id,
            user_id: rec.user_id,
            timestamp,
            text: rec.text,
            symptom: SymptomLabel { mood, somatic },
            suicidality,
        });
    }

    let mut users: Vec<UserRecord> = users.into_values().collect();
    for user in &mut users {
        sort_posts(&mut user.posts);
    }
    Ok((
        Corpus {
            users,
            metadata: metadata.to_string(),
        },
        report,
    ))
}

pub(crate) fn sort_posts(posts: &mut [Post]) {
    posts.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.post_id.cmp(&b.post_id))
    });
}

/// Optional text normalization: lowercase, non-alphanumerics to spaces,
/// whitespace collapsed.
pub fn normalize_text(text: &str) -> String {
    let lowered: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '\'' {
                c.to_lowercase().next().unwrap_or(c)
            } else {
                ' '
            }
        })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Parameters of the synthetic corpus. Defaults follow the published label
/// marginals of the annotated bipolar-disorder corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_users: usize,
    /// Inclusive range of posts per user.
    pub min_posts: usize,
    pub max_posts: usize,
    /// `YYYY-MM-DD`, inclusive start.
    pub start_date: String,
    /// `YYYY-MM-DD`, exclusive end.
    pub end_date: String,
    /// Mean gap between consecutive posts of a user, in days (exponential).
    pub mean_gap_days: f64,
    /// Probability that a post repeats the user's baseline suicidality
    /// level instead of drawing a fresh one.
    pub severity_persistence: f64,
    /// Probability that a post at ID or above is forced to a Depressed mood.
    pub mood_risk_coupling: f64,
    /// Relative weights for IN/ID/BR/AT.
    pub level_weights: [f64; 4],
    /// Relative weights over [`Mood::ALL`].
    pub mood_weights: [f64; 6],
    /// Relative weights over [`BdType::ALL`].
    pub bd_weights: [f64; 3],
    /// Fraction of posts carrying any somatic label.
    pub somatic_rate: f64,
    /// Weights for Somatic only / Psychosis only / both, given any.
    pub somatic_weights: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_users: 818,
            min_posts: 3,
            max_posts: 16,
            start_date: "2008-01-01".into(),
            end_date: "2021-10-01".into(),
            mean_gap_days: 20.0,
            severity_persistence: 0.7,
            mood_risk_coupling: 0.2,
            level_weights: [6302.0, 918.0, 266.0, 106.0],
            mood_weights: [3628.0, 981.0, 859.0, 508.0, 523.0, 1093.0],
            bd_weights: [224.0, 501.0, 93.0],
            somatic_rate: 1747.0 / 7592.0,
            somatic_weights: [1293.0, 429.0, 25.0],
        }
    }
}

const MOOD_VOCAB: [&[&str]; 6] = [
    &["hopeless", "empty", "numb", "exhausted", "worthless", "crying", "heavy", "bed", "dark", "sleepless"],
    &["racing", "euphoric", "invincible", "spending", "energized", "grandiose", "unstoppable", "talkative", "buzzing", "restless"],
    &["worried", "panic", "nervous", "dread", "tense", "shaking", "overthinking", "fearful", "jittery", "uneasy"],
    &["angry", "snapped", "furious", "annoyed", "yelling", "frustrated", "agitated", "irritable", "resentful", "hostile"],
    &["stable", "balanced", "calm", "recovered", "steady", "grateful", "routine", "better", "hopeful", "rested"],
    &["medication", "doctor", "question", "appointment", "insurance", "pharmacy", "advice", "dosage", "forum", "update"],
];

const SOMATIC_VOCAB: &[&str] = &["headache", "nausea", "fatigue", "aches", "dizzy", "stomach"];
const PSYCHOSIS_VOCAB: &[&str] = &["voices", "paranoid", "hallucinating", "delusion", "visions", "watched"];

const RISK_VOCAB: [&[&str]; 4] = [
    &["today", "week", "thinking", "life", "feel"],
    &["disappear", "ending", "goodbye", "pointless", "burden"],
    &["plan", "pills", "rope", "bridge", "wrote"],
    &["overdosed", "hospitalized", "attempted", "survived", "er"],
];

const FILLER: &[&str] = &["i", "and", "the", "it", "so", "just", "my", "really", "been", "this"];

fn weighted_pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn synth_text<R: Rng>(rng: &mut R, symptom: &SymptomLabel, level: SuicidalityLevel) -> String {
    let mut tokens: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(4..=7) {
        tokens.push(pick(rng, MOOD_VOCAB[symptom.mood.index()]));
    }
    if symptom.somatic.somatic {
        tokens.push(pick(rng, SOMATIC_VOCAB));
        tokens.push(pick(rng, SOMATIC_VOCAB));
    }
    if symptom.somatic.psychosis {
        tokens.push(pick(rng, PSYCHOSIS_VOCAB));
        tokens.push(pick(rng, PSYCHOSIS_VOCAB));
    }
    for _ in 0..rng.random_range(2..=3) {
        tokens.push(pick(rng, RISK_VOCAB[level.code() as usize]));
    }
    for _ in 0..rng.random_range(2..=5) {
        tokens.push(pick(rng, FILLER));
    }
    // Fisher-Yates with the seeded rng keeps output deterministic.
    for i in (1..tokens.len()).rev() {
        let j = rng.random_range(0..=i);
        tokens.swap(i, j);
    }
    tokens.join(" ")
}

fn validate_weights(name: &str, w: &[f64]) -> Result<(), CorpusError> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::InvalidSpec(format!(
            "{name} must be nonnegative with positive sum"
        )));
    }
    Ok(())
}

pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus, CorpusError> {
    if spec.n_users == 0 {
        return Err(CorpusError::InvalidSpec("n_users must be at least 1".into()));
    }
    if spec.min_posts == 0 || spec.min_posts > spec.max_posts {
        return Err(CorpusError::InvalidSpec("need 1 <= min_posts <= max_posts".into()));
    }
    let start = parse_timestamp(&spec.start_date)
        .ok_or_else(|| CorpusError::InvalidSpec(format!("bad start_date {:?}", spec.start_date)))?;
    let end = parse_timestamp(&spec.end_date)
        .ok_or_else(|| CorpusError::InvalidSpec(format!("bad end_date {:?}", spec.end_date)))?;
    if end <= start {
        return Err(CorpusError::InvalidSpec("empty date range".into()));
    }
    if !(spec.mean_gap_days.is_finite() && spec.mean_gap_days > 0.0) {
        return Err(CorpusError::InvalidSpec("mean_gap_days must be positive".into()));
    }
    for (name, p) in [
        ("severity_persistence", spec.severity_persistence),
        ("mood_risk_coupling", spec.mood_risk_coupling),
        ("somatic_rate", spec.somatic_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(CorpusError::InvalidSpec(format!("{name} must lie in [0, 1]")));
        }
    }
    validate_weights("level_weights", &spec.level_weights)?;
    validate_weights("mood_weights", &spec.mood_weights)?;
    validate_weights("bd_weights", &spec.bd_weights)?;
    validate_weights("somatic_weights", &spec.somatic_weights)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.n_users.to_string().len().max(4);
    let mut users = Vec::with_capacity(spec.n_users);
    let mut post_counter = 0usize;

    for u in 0..spec.n_users {
        let user_id = format!("u{:0width$}", u + 1, width = width);
        let bd_type = BdType::ALL[weighted_pick(&mut rng, &spec.bd_weights)];
        let baseline = SuicidalityLevel::ALL[weighted_pick(&mut rng, &spec.level_weights)];
        let n_posts = rng.random_range(spec.min_posts..=spec.max_posts);

        // Gaps first, so the whole activity span fits inside the date range.
        let gaps: Vec<i64> = (1..n_posts)
            .map(|_| {
                let e: f64 = -(1.0 - rng.random::<f64>()).ln();
                ((e * spec.mean_gap_days * SECONDS_PER_DAY as f64) as i64).max(60)
            })
            .collect();
        let span: i64 = gaps.iter().sum::<i64>().min(end - start - 1);
        let first = start + rng.random_range(0..(end - start - span).max(1));
        let mut t = first;
        let mut posts = Vec::with_capacity(n_posts);
        for i in 0..n_posts {
            if i > 0 {
                t = (t + gaps[i - 1]).min(end - 1);
            }
            let level = if rng.random::<f64>() < spec.severity_persistence {
                baseline
            } else {
                SuicidalityLevel::ALL[weighted_pick(&mut rng, &spec.level_weights)]
            };
            let mut mood = Mood::ALL[weighted_pick(&mut rng, &spec.mood_weights)];
            if level >= SuicidalityLevel::Ideation && rng.random::<f64>() < spec.mood_risk_coupling {
                mood = Mood::Depressed;
            }
            let somatic = if rng.random::<f64>() < spec.somatic_rate {
                match weighted_pick(&mut rng, &spec.somatic_weights) {
                    0 => SomaticSet { somatic: true, psychosis: false },
                    1 => SomaticSet { somatic: false, psychosis: true },
                    _ => SomaticSet { somatic: true, psychosis: true },
                }
            } else {
                SomaticSet::default()
            };
            let symptom = SymptomLabel { mood, somatic };
            post_counter += 1;
            posts.push(Post {
                post_id: format!("p{post_counter:06}"),
                user_id: user_id.clone(),
                timestamp: t,
                text: synth_text(&mut rng, &symptom, level),
                symptom,
                suicidality: level,
            });
        }
        sort_posts(&mut posts);
        users.push(UserRecord {
            user_id,
            bd_type,
            posts,
        });
    }

    Ok(Corpus {
        users,
        metadata: format!("synthetic seed={seed}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"user_id":"u1","bd_type":"BD-I","post_id":"p1","timestamp":"2020-01-01T00:00:00Z","text":"feeling low","mood":"Depressed","somatic":[],"suicidality":"IN"}"#;

    #[test]
    fn empty_input_yields_empty_corpus() {
        let (c, r) = parse_corpus_str("", "t").unwrap();
        assert!(c.users.is_empty());
        assert_eq!(r.lines, 0);
    }

    #[test]
    fn single_line_yields_single_post() {
        let (c, _) = parse_corpus_str(LINE, "t").unwrap();
        assert_eq!(c.users.len(), 1);
        assert_eq!(c.users[0].posts.len(), 1);
        assert_eq!(c.users[0].posts[0].timestamp, 1_577_836_800);
    }

    #[test]
    fn unknown_mood_names_the_field() {
        let bad = LINE.replace("Depressed", "Euphoric");
        let err = parse_corpus_str(&bad, "t").unwrap_err();
        match &err {
            CorpusError::InvalidField { field, line, .. } => {
                assert_eq!(*field, "mood");
                assert_eq!(*line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("mood"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{LINE}\n{{not json");
        match parse_corpus_str(&input, "t").unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_post_id_rejected() {
        let input = format!("{LINE}\n{LINE}");
        assert!(matches!(
            parse_corpus_str(&input, "t"),
            Err(CorpusError::DuplicatePost { line: 2, .. })
        ));
    }

    #[test]
    fn both_is_normalized_and_unknown_fields_counted() {
        let line = LINE
            .replace(r#""somatic":[]"#, r#""somatic":["Both"],"subreddit":"bipolar""#);
        let (c, r) = parse_corpus_str(&line, "t").unwrap();
        let s = c.users[0].posts[0].symptom.somatic;
        assert!(s.somatic && s.psychosis);
        assert_eq!(r.unknown_fields, 1);
        assert!(c.to_jsonl().contains(r#"["Somatic","Psychosis"]"#));
    }

    #[test]
    fn posts_sorted_by_time_then_id() {
        let a = LINE.replace("\"p1\"", "\"pb\"");
        let b = LINE.replace("\"p1\"", "\"pa\"");
        let c2 = LINE
            .replace("\"p1\"", "\"p0\"")
            .replace("2020-01-01", "2021-01-01");
        let input = [c2, a, b].join("\n");
        let (c, _) = parse_corpus_str(&input, "t").unwrap();
        let ids: Vec<_> = c.users[0].posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["pa", "pb", "p0"]);
    }

    #[test]
    fn blank_text_and_out_of_range_timestamp_rejected() {
        let blank = LINE.replace("feeling low", "   ");
        assert!(matches!(
            parse_corpus_str(&blank, "t"),
            Err(CorpusError::InvalidField { field: "text", .. })
        ));
        let future = LINE.replace("2020-01-01", "2200-01-01");
        assert!(matches!(
            parse_corpus_str(&future, "t"),
            Err(CorpusError::InvalidField { field: "timestamp", .. })
        ));
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SynthSpec {
            n_users: 20,
            ..SynthSpec::default()
        };
        let a = generate_synthetic_corpus(&spec, 7).unwrap().to_jsonl();
        let b = generate_synthetic_corpus(&spec, 7).unwrap().to_jsonl();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&spec, 8).unwrap().to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn default_spec_matches_depressed_marginal() {
        let corpus = generate_synthetic_corpus(&SynthSpec::default(), 11).unwrap();
        let n = corpus.n_posts() as f64;
        let depressed = corpus
            .posts()
            .filter(|p| p.symptom.mood == Mood::Depressed)
            .count() as f64;
        assert!((depressed / n - 0.477).abs() < 0.05, "{}", depressed / n);
        let attempt = corpus
            .posts()
            .filter(|p| p.suicidality == SuicidalityLevel::Attempt)
            .count() as f64;
        assert!((attempt / n - 0.013).abs() < 0.02);
    }

    #[test]
    fn empty_date_range_is_rejected() {
        let spec = SynthSpec {
            start_date: "2020-01-01".into(),
            end_date: "2020-01-01".into(),
            ..SynthSpec::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&spec, 1),
            Err(CorpusError::InvalidSpec(_))
        ));
    }

    #[test]
    fn normalization_lowercases_and_strips() {
        assert_eq!(normalize_text("  I'm SO tired!!  ok"), "i'm so tired ok");
    }
}

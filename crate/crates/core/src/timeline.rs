//! Sliding observation/forecast windows, user-disjoint stratified folds,
//! random oversampling, and 4/3/2-level label schemes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Post, SuicidalityLevel, SECONDS_PER_DAY};

/// One "month" of window arithmetic.
pub const DAYS_PER_MONTH: i64 = 30;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("need at least {k} distinct users for {k}-fold splitting, found {found}")]
    TooFewUsers { k: usize, found: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("unknown scheme {0}; expected 4, 3, or 2")]
    InvalidScheme(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub user_id: String,
    /// Post id of the anchor post.
    pub anchor_post_id: String,
    /// UTC epoch seconds.
    pub anchor_time: i64,
    /// Observation posts in time order, within `(anchor - l*30d, anchor]`.
    pub posts: Vec<Post>,
    /// Days between each post and the most recent one.
    pub deltas: Vec<f64>,
    pub future_label: SuicidalityLevel,
    pub l_months: u32,
    pub m_months: u32,
}

impl Timeline {
    pub fn id(&self) -> String {
        format!("{}#{}", self.user_id, self.anchor_post_id)
    }
}

fn window_secs(months: u32) -> i64 {
    months as i64 * DAYS_PER_MONTH * SECONDS_PER_DAY
}

pub(crate) fn deltas_in_days(posts: &[Post]) -> Vec<f64> {
    let Some(last) = posts.last() else {
        return Vec::new();
    };
    posts
        .iter()
        .map(|p| (last.timestamp - p.timestamp) as f64 / SECONDS_PER_DAY as f64)
        .collect()
}

/// One candidate window per post; a window is kept iff it has at least
/// `min_posts` observation posts and a non-empty forecast window. The label
/// is the maximum suicidality level in the forecast window.
pub fn build_timelines(corpus: &Corpus, l_months: u32, m_months: u32, min_posts: usize) -> Vec<Timeline> {
    let obs = window_secs(l_months);
    let fut = window_secs(m_months);
    let mut out = Vec::new();
    for user in &corpus.users {
        let posts = &user.posts;
        // posts are sorted by timestamp, so window bounds are monotone in the anchor
        let mut lo = 0; // first index with ts > anchor - obs
        let mut hi = 0; // first index with ts > anchor
        let mut fhi = 0; // first index with ts > anchor + fut
        for anchor in posts {
            let t = anchor.timestamp;
            while lo < posts.len() && posts[lo].timestamp <= t - obs {
                lo += 1;
            }
            while hi < posts.len() && posts[hi].timestamp <= t {
                hi += 1;
            }
            fhi = fhi.max(hi);
            while fhi < posts.len() && posts[fhi].timestamp <= t + fut {
                fhi += 1;
            }
            if hi - lo < min_posts || fhi == hi {
                continue;
            }
            let future_label = posts[hi..fhi]
                .iter()
                .map(|p| p.suicidality)
                .max()
                .expect("non-empty forecast");
            let window = posts[lo..hi].to_vec();
            out.push(Timeline {
                user_id: user.user_id.clone(),
                anchor_post_id: anchor.post_id.clone(),
                anchor_time: t,
                deltas: deltas_in_days(&window),
                posts: window,
                future_label,
                l_months,
                m_months,
            });
        }
    }
    out
}

/// Evaluation label scheme: number of merged suicidality levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Four,
    Three,
    Two,
}

impl Scheme {
    pub fn from_levels(n: usize) -> Result<Self, TimelineError> {
        match n {
            4 => Ok(Scheme::Four),
            3 => Ok(Scheme::Three),
            2 => Ok(Scheme::Two),
            other => Err(TimelineError::InvalidScheme(other)),
        }
    }

    pub fn n_levels(self) -> usize {
        match self {
            Scheme::Four => 4,
            Scheme::Three => 3,
            Scheme::Two => 2,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Scheme::Four => &["IN", "ID", "BR", "AT"],
            Scheme::Three => &["IN", "ID", "BR+AT"],
            Scheme::Two => &["IN", "ID+BR+AT"],
        }
    }

    /// Merges a raw ordinal code (0..4) into this scheme.
    pub fn merge_code(self, code: usize) -> usize {
        match self {
            Scheme::Four => code,
            Scheme::Three => code.min(2),
            Scheme::Two => code.min(1),
        }
    }
}

pub fn merge_levels(level: SuicidalityLevel, scheme: Scheme) -> usize {
    scheme.merge_code(level.code() as usize)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Timeline ids per role for each of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub folds: Vec<Fold>,
}

impl FoldSplit {
    /// CSV with columns `timeline_id,fold,role`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TimelineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timeline_id", "fold", "role"])?;
        for fold in &self.folds {
            let idx = fold.index.to_string();
            for (role, ids) in [
                ("train", &fold.train),
                ("validation", &fold.validation),
                ("test", &fold.test),
            ] {
                for id in ids {
                    w.write_record([id.as_str(), idx.as_str(), role])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Spread of per-class fold shares; lower is better balanced.
fn stratification_cost(fold_counts: &[[f64; 4]], totals: &[f64; 4]) -> f64 {
    let k = fold_counts.len() as f64;
    let mut cost = 0.0;
    for c in 0..4 {
        if totals[c] == 0.0 {
            continue;
        }
        let shares: Vec<f64> = fold_counts.iter().map(|f| f[c] / totals[c]).collect();
        let mean = shares.iter().sum::<f64>() / k;
        cost += shares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / k;
    }
    cost
}

/// User-grouped stratified k-fold split. Users are stratified by the
/// maximum future label over their timelines and greedily placed in the
/// fold that keeps per-class shares most even. Within each fold roughly 10%
/// of the training timelines (whole users) are held out for validation.
pub fn split_user_disjoint_folds(timelines: &[Timeline], k: usize, seed: u64) -> Result<FoldSplit, TimelineError> {
    if k < 2 {
        return Err(TimelineError::InvalidK(k));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in timelines.iter().enumerate() {
        by_user.entry(t.user_id.as_str()).or_default().push(i);
    }
    if by_user.len() < k {
        return Err(TimelineError::TooFewUsers {
            k,
            found: by_user.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Group<'a> {
        user: &'a str,
        counts: [f64; 4],
        size: usize,
        key: u8,
        tiebreak: u64,
    }
    let mut groups: Vec<Group> = by_user
        .iter()
        .map(|(user, idx)| {
            let mut counts = [0.0; 4];
            for &i in idx {
                counts[timelines[i].future_label.code() as usize] += 1.0;
            }
            let key = idx
                .iter()
                .map(|&i| timelines[i].future_label.code())
                .max()
                .unwrap_or(0);
            Group {
                user,
                counts,
                size: idx.len(),
                key,
                tiebreak: rng.random(),
            }
        })
        .collect();
    // rarest stratum first, larger users first, random order otherwise
    groups.sort_by(|a, b| {
        b.key
            .cmp(&a.key)
            .then(b.size.cmp(&a.size))
            .then(a.tiebreak.cmp(&b.tiebreak))
    });

    let mut totals = [0.0; 4];
    for g in &groups {
        for c in 0..4 {
            totals[c] += g.counts[c];
        }
    }
    let mut fold_counts = vec![[0.0; 4]; k];
    let mut fold_sizes = vec![0usize; k];
    let mut fold_users: Vec<Vec<&str>> = vec![Vec::new(); k];
    for (gi, g) in groups.iter().enumerate() {
        let remaining = groups.len() - gi;
        let empty: Vec<usize> = (0..k).filter(|&f| fold_users[f].is_empty()).collect();
        let candidates: Vec<usize> = if !empty.is_empty() && remaining <= empty.len() {
            empty
        } else {
            (0..k).collect()
        };
        let mut best = candidates[0];
        let mut best_key = (f64::INFINITY, usize::MAX);
        for &f in &candidates {
            for c in 0..4 {
                fold_counts[f][c] += g.counts[c];
            }
            let cost = stratification_cost(&fold_counts, &totals);
            for c in 0..4 {
                fold_counts[f][c] -= g.counts[c];
            }
            let key = (cost, fold_sizes[f]);
            if key.0 < best_key.0 - 1e-12 || ((key.0 - best_key.0).abs() <= 1e-12 && key.1 < best_key.1) {
                best = f;
                best_key = key;
            }
        }
        for c in 0..4 {
            fold_counts[best][c] += g.counts[c];
        }
        fold_sizes[best] += g.size;
        fold_users[best].push(g.user);
    }

    let ids = |users: &[&str]| -> Vec<String> {
        let mut idx: Vec<usize> = users.iter().flat_map(|u| by_user[u].iter().copied()).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| timelines[i].id()).collect()
    };

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut train_users: Vec<&str> = (0..k)
            .filter(|&g| g != f)
            .flat_map(|g| fold_users[g].iter().copied())
            .collect();
        train_users.sort_unstable();
        train_users.shuffle(&mut rng);
        let train_total: usize = train_users.iter().map(|u| by_user[u].len()).sum();
        let target = (train_total as f64 * 0.1).round() as usize;
        let mut val_users = Vec::new();
        let mut val_count = 0;
        while val_count < target && train_users.len() > 1 {
            let u = train_users.pop().expect("non-empty");
            val_count += by_user[u].len();
            val_users.push(u);
        }
        folds.push(Fold {
            index: f,
            train: ids(&train_users),
            validation: ids(&val_users),
            test: ids(&fold_users[f]),
        });
    }
    Ok(FoldSplit { k, folds })
}

/// Random oversampling: every class is topped up with draws (with
/// replacement) from its own members until it matches the majority count.
/// Originals come first, in input order.
pub fn oversample_by<T: Clone, K: Ord + Copy>(items: &[T], key: impl Fn(&T) -> K, seed: u64) -> Vec<T> {
    let mut classes: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        classes.entry(key(item)).or_default().push(i);
    }
    let target = classes.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<T> = items.to_vec();
    for members in classes.values() {
        for _ in members.len()..target {
            let pick = members[rng.random_range(0..members.len())];
            out.push(items[pick].clone());
        }
    }
    out
}

pub fn oversample(train: &[Timeline], seed: u64) -> Vec<Timeline> {
    oversample_by(train, |t| t.future_label, seed)
}

pub fn label_counts(timelines: &[Timeline]) -> [usize; 4] {
    let mut counts = [0; 4];
    for t in timelines {
        counts[t.future_label.code() as usize] += 1;
    }
    counts
}

/// Index timelines by id for resolving fold assignments.
pub fn index_by_id(timelines: &[Timeline]) -> HashMap<String, &Timeline> {
    timelines.iter().map(|t| (t.id(), t)).collect()
}

pub fn distinct_users(timelines: &[Timeline]) -> BTreeSet<&str> {
    timelines.iter().map(|t| t.user_id.as_str()).collect()
}

#[derive(Serialize)]
struct TimelineRecord<'a> {
    timeline_id: String,
    user_id: &'a str,
    anchor_post_id: &'a str,
    anchor_time: String,
    l_months: u32,
    m_months: u32,
    future_label: &'static str,
    post_ids: Vec<&'a str>,
    deltas: &'a [f64],
}

/// JSON-lines cache format: one object per timeline with post references.
pub fn write_timelines_jsonl<W: Write>(timelines: &[Timeline], mut writer: W) -> Result<(), TimelineError> {
    for t in timelines {
        let rec = TimelineRecord {
            timeline_id: t.id(),
            user_id: &t.user_id,
            anchor_post_id: &t.anchor_post_id,
            anchor_time: crate::corpus::format_timestamp(t.anchor_time),
            l_months: t.l_months,
            m_months: t.m_months,
            future_label: t.future_label.as_str(),
            post_ids: t.posts.iter().map(|p| p.post_id.as_str()).collect(),
            deltas: &t.deltas,
        };
        serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BdType, Mood, SomaticSet, SymptomLabel, UserRecord};

    fn post(user: &str, id: &str, day: i64, level: SuicidalityLevel) -> Post {
        Post {
            post_id: id.into(),
            user_id: user.into(),
            timestamp: 1_500_000_000 + day * SECONDS_PER_DAY,
            text: "text".into(),
            symptom: SymptomLabel {
                mood: Mood::Other,
                somatic: SomaticSet::default(),
            },
            suicidality: level,
        }
    }

    fn corpus_of(users: Vec<Vec<Post>>) -> Corpus {
        Corpus {
            users: users
                .into_iter()
                .map(|posts| UserRecord {
                    user_id: posts[0].user_id.clone(),
                    bd_type: BdType::BdI,
                    posts,
                })
                .collect(),
            metadata: String::new(),
        }
    }

    #[test]
    fn worked_example_anchor_day_20() {
        use SuicidalityLevel::*;
        let c = corpus_of(vec![vec![
            post("u", "a", 0, Indicator),
            post("u", "b", 10, Indicator),
            post("u", "c", 20, Indicator),
            post("u", "d", 35, Ideation),
        ]]);
        let tl = build_timelines(&c, 6, 1, 3);
        assert_eq!(tl.len(), 1);
        assert_eq!(tl[0].anchor_post_id, "c");
        assert_eq!(tl[0].posts.len(), 3);
        assert_eq!(tl[0].future_label, Ideation);
        assert_eq!(tl[0].deltas, vec![20.0, 10.0, 0.0]);
    }

    #[test]
    fn two_posts_give_no_timelines() {
        let c = corpus_of(vec![vec![
            post("u", "a", 0, SuicidalityLevel::Indicator),
            post("u", "b", 3, SuicidalityLevel::Attempt),
        ]]);
        assert!(build_timelines(&c, 6, 1, 3).is_empty());
    }

    #[test]
    fn observation_window_is_left_open() {
        use SuicidalityLevel::*;
        // day 0 sits exactly l*30 days before the anchor at day 30 and is excluded
        let c = corpus_of(vec![vec![
            post("u", "a", 0, Indicator),
            post("u", "b", 10, Indicator),
            post("u", "c", 20, Indicator),
            post("u", "d", 30, Indicator),
            post("u", "e", 60, Behavior),
        ]]);
        let tl = build_timelines(&c, 1, 1, 3);
        let at_d = tl.iter().find(|t| t.anchor_post_id == "d").unwrap();
        assert_eq!(at_d.posts.len(), 3);
        assert_eq!(at_d.future_label, Behavior);
    }

    #[test]
    fn merge_levels_table() {
        use SuicidalityLevel::*;
        assert_eq!(merge_levels(Attempt, Scheme::Three), 2);
        assert_eq!(merge_levels(Indicator, Scheme::Two), 0);
        assert_eq!(merge_levels(Ideation, Scheme::Two), 1);
        assert_eq!(merge_levels(Behavior, Scheme::Four), 2);
        assert!(Scheme::from_levels(5).is_err());
    }

    #[test]
    fn oversample_counts() {
        let items: Vec<(u8, usize)> = (0..10).map(|i| (0, i)).chain((0..2).map(|i| (1, i))).collect();
        let out = oversample_by(&items, |x| x.0, 3);
        assert_eq!(out.iter().filter(|x| x.0 == 0).count(), 10);
        assert_eq!(out.iter().filter(|x| x.0 == 1).count(), 10);
        assert_eq!(&out[..12], &items[..]);

        let single: Vec<(u8, usize)> = (0..4).map(|i| (2, i)).collect();
        assert_eq!(oversample_by(&single, |x| x.0, 3), single);

        let mixed: Vec<(u8, usize)> = [(0, 5), (1, 3), (2, 1), (3, 1)]
            .iter()
            .flat_map(|&(c, n)| (0..n).map(move |i| (c, i)))
            .collect();
        let out = oversample_by(&mixed, |x| x.0, 9);
        assert_eq!(out.len(), 20);
        for c in 0..4u8 {
            assert_eq!(out.iter().filter(|x| x.0 == c).count(), 5);
        }
    }

    #[test]
    fn five_users_five_folds() {
        use SuicidalityLevel::*;
        let users: Vec<Vec<Post>> = (0..5)
            .map(|u| {
                let name = format!("u{u}");
                (0..5)
                    .map(|i| post(&name, &format!("{name}p{i}"), i * 5, if i == 4 { Ideation } else { Indicator }))
                    .collect()
            })
            .collect();
        let tl = build_timelines(&corpus_of(users), 6, 1, 3);
        let split = split_user_disjoint_folds(&tl, 5, 1).unwrap();
        let by_id = index_by_id(&tl);
        for fold in &split.folds {
            let users: BTreeSet<&str> = fold.test.iter().map(|id| by_id[id].user_id.as_str()).collect();
            assert_eq!(users.len(), 1);
        }
        assert!(matches!(
            split_user_disjoint_folds(&tl, 6, 1),
            Err(TimelineError::TooFewUsers { k: 6, found: 5 })
        ));
    }

    #[test]
    fn fold_csv_has_header_and_rows() {
        let split = FoldSplit {
            k: 2,
            folds: vec![Fold {
                index: 0,
                train: vec!["a#1".into()],
                validation: vec![],
                test: vec!["b#2".into()],
            }],
        };
        let mut buf = Vec::new();
        split.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "timeline_id,fold,role\na#1,0,train\nb#2,0,test\n");
    }
}

#![allow(dead_code)]

use bdrisk_core::corpus::SuicidalityLevel;
use bdrisk_core::encoder::EncodedSequence;
use bdrisk_core::model::ModelConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        hidden_size: 4,
        lstm_layers: 2,
        dropout: 0.1,
        ..ModelConfig::default()
    }
}

/// Random sequence with `n_real` posts padded to `max_len`; consecutive
/// posts are at most `max_gap` days apart.
pub fn random_sequence<R: Rng>(rng: &mut R, n_real: usize, max_len: usize, dim: usize, max_gap: f64) -> EncodedSequence {
    let mut embeddings = Array2::zeros((max_len, dim));
    let mut targets = Array2::zeros((max_len, 8));
    let mut deltas = vec![0.0; max_len];
    let mut t = 0.0;
    for i in (0..n_real).rev() {
        for j in 0..dim {
            embeddings[[i, j]] = rng.random_range(-1.0..1.0);
        }
        targets[[i, rng.random_range(0..6)]] = 1.0;
        for s in 6..8 {
            if rng.random_bool(0.3) {
                targets[[i, s]] = 1.0;
            }
        }
        deltas[i] = t;
        t += rng.random_range(0.0..max_gap);
    }
    EncodedSequence {
        id: format!("seq{}", rng.random::<u32>()),
        embeddings,
        deltas,
        mask: (0..max_len).map(|i| i < n_real).collect(),
        symptom_targets: targets,
        future_label: SuicidalityLevel::from_code(rng.random_range(0..4)).unwrap(),
    }
}

/// Per-tensor relative error `|a - n| / (|a| + |n|)` between the analytic
/// gradient and central finite differences of the eval-mode batch loss.
pub fn gradient_errors(model: &bdrisk_core::model::Model, batch: &[&EncodedSequence], step: f64) -> Vec<(String, f64, f64)> {
    let (_, grads) = model.loss_and_grad(batch, None).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (k, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for i in 0..a.len() {
            let orig = probe.params.tensors_mut()[k].1[i];
            probe.params.tensors_mut()[k].1[i] = orig + step;
            let up = probe.batch_loss(batch).unwrap().total;
            probe.params.tensors_mut()[k].1[i] = orig - step;
            let down = probe.batch_loss(batch).unwrap().total;
            probe.params.tensors_mut()[k].1[i] = orig;
            numeric[i] = (up - down) / (2.0 * step);
        }
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if na + nn == 0.0 { 0.0 } else { diff / (na + nn) };
        out.push((name.clone(), rel, na));
    }
    out
}

/// Gradient check on two 3-post sequences at a random O(1) parameter point,
/// which keeps every gradient path well above the finite-difference noise
/// floor. Returns `(tensor, relative error, analytic norm)`.
pub fn gradient_case(config: ModelConfig, seed: u64) -> Vec<(String, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = bdrisk_core::model::Model::new(config, seed).unwrap();
    model.params.log_var_fs = 0.3;
    model.params.log_var_bd = -0.2;
    for (name, t) in model.params.tensors_mut() {
        let scale = match name.split('.').next().unwrap() {
            "fs_head" => 3.0,
            "attention" => 1.5,
            _ => 1.0,
        };
        if !name.starts_with("log_var") {
            t.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }
    let mut a = random_sequence(&mut rng, 3, 5, 8, 1.0);
    a.future_label = SuicidalityLevel::Ideation;
    let mut b = random_sequence(&mut rng, 3, 3, 8, 1.0);
    b.future_label = SuicidalityLevel::Attempt;
    gradient_errors(&model, &[&a, &b], 1e-6)
}

use bdrisk_core::corpus::{BdType, Corpus, Mood, Post, SomaticSet, SymptomLabel, UserRecord};

/// Corpus with day-granular timestamps, so equal timestamps are common.
/// `users[u]` lists `(day, level code)` per post.
pub fn day_corpus(users: &[Vec<(i64, u8)>]) -> Corpus {
    let mut counter = 0;
    let users = users
        .iter()
        .enumerate()
        .map(|(u, posts)| {
            let user_id = format!("u{u:03}");
            let mut posts: Vec<Post> = posts
                .iter()
                .map(|&(day, level)| {
                    counter += 1;
                    Post {
                        post_id: format!("p{counter:05}"),
                        user_id: user_id.clone(),
                        timestamp: 1_300_000_000 + day * 86_400,
                        text: format!("post {counter}"),
                        symptom: SymptomLabel { mood: Mood::ALL[counter % 6], somatic: SomaticSet::default() },
                        suicidality: SuicidalityLevel::from_code(level).unwrap(),
                    }
                })
                .collect();
            posts.sort_by(|a, b| (a.timestamp, &a.post_id).cmp(&(b.timestamp, &b.post_id)));
            UserRecord { user_id, bd_type: BdType::ALL[u % 3], posts }
        })
        .collect();
    Corpus { users, metadata: "test".into() }
}

/// Literal window enumeration: every (user, anchor post) pair, with the
/// observation and forecast predicates applied to every post of the user.
pub fn brute_force_timelines(corpus: &Corpus, l: u32, m: u32, min_posts: usize) -> Vec<(String, String, u8, usize)> {
    let month = 30 * 86_400i64;
    let mut out = Vec::new();
    for user in &corpus.users {
        for anchor in &user.posts {
            let ta = anchor.timestamp;
            let obs: Vec<&Post> = user
                .posts
                .iter()
                .filter(|p| p.timestamp > ta - l as i64 * month && p.timestamp <= ta)
                .collect();
            let fut: Vec<&Post> = user
                .posts
                .iter()
                .filter(|p| p.timestamp > ta && p.timestamp <= ta + m as i64 * month)
                .collect();
            if obs.len() >= min_posts && !fut.is_empty() {
                let label = fut.iter().map(|p| p.suicidality.code()).max().unwrap();
                out.push((user.user_id.clone(), anchor.post_id.clone(), label, obs.len()));
            }
        }
    }
    out.sort();
    out
}

/// Weighted P/R/F1 by counting every (true, pred) pair per class.
pub fn brute_force_prf(t: &[usize], p: &[usize], k: usize) -> (f64, f64, f64) {
    let n = t.len();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..n {
            if t[i] == c && p[i] == c {
                tp += 1;
            } else if t[i] != c && p[i] == c {
                fp += 1;
            } else if t[i] == c && p[i] != c {
                fn_ += 1;
            }
        }
        let support = tp + fn_;
        let prec = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let rec = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        wp += support as f64 * prec;
        wr += support as f64 * rec;
        wf += support as f64 * f1;
    }
    (wp / n as f64, wr / n as f64, wf / n as f64)
}

/// Nominal alpha from pair enumeration: observed disagreement within units
/// against expected disagreement over all pairs of pairable values.
pub fn brute_force_alpha(ratings: &[Vec<Option<u8>>]) -> f64 {
    let units: Vec<Vec<u8>> = ratings
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let pooled: Vec<u8> = units.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mut d_o = 0.0;
    for u in &units {
        let m = u.len() as f64;
        let mut dis = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j && u[i] != u[j] {
                    dis += 1.0;
                }
            }
        }
        d_o += dis / (m - 1.0);
    }
    d_o /= n;
    let mut d_e = 0.0;
    for i in 0..pooled.len() {
        for j in 0..pooled.len() {
            if i != j && pooled[i] != pooled[j] {
                d_e += 1.0;
            }
        }
    }
    d_e /= n * (n - 1.0);
    1.0 - d_o / d_e
}

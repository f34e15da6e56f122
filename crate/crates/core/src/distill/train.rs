//! Gradient-descent training of the linear student from teacher
//! permutations.
//!
//! Features are standardized internally (bias excluded) so one learning
//! rate suits features of very different scale; the learned weights are
//! mapped back to raw feature space before they are returned, so the
//! student scores raw features directly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, FeatureVector, BIAS, FEATURE_NAMES, NUM_FEATURES};
use super::loss::{loss_and_grad, LambdaConfig, LossKind};
use super::DistillError;
use crate::retrieval::{Bm25Params, Index};
use crate::textio::TeacherRecord;
use crate::types::{CandidateList, Ranking};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStudent {
    pub weights: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl LinearStudent {
    pub fn new(weights: [f64; NUM_FEATURES]) -> Result<Self, DistillError> {
        let s = Self {
            weights: weights.to_vec(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros() -> Self {
        Self::new([0.0; NUM_FEATURES]).expect("zero weights are valid")
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.feature_names != FEATURE_NAMES {
            return Err(DistillError::Student(format!(
                "feature names {:?} do not match {:?}",
                self.feature_names, FEATURE_NAMES
            )));
        }
        if self.weights.len() != NUM_FEATURES || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(DistillError::Student(format!(
                "expected {NUM_FEATURES} finite weights, got {:?}",
                self.weights
            )));
        }
        Ok(())
    }

    pub fn score(&self, f: &FeatureVector) -> f64 {
        self.weights.iter().zip(f.values()).map(|(w, x)| w * x).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("student serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, DistillError> {
        let s: Self = serde_json::from_str(json).map_err(|e| DistillError::Student(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
    pub lambda: LambdaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            seed: 0,
            l2: 1e-4,
            lambda: LambdaConfig::default(),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DistillError::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(DistillError::Config(format!("l2 {} must be finite and non-negative", self.l2)));
        }
        Ok(())
    }
}

/// One query's candidates as features, with teacher ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingQuery {
    pub query_id: String,
    pub features: Vec<FeatureVector>,
    pub ranks: Vec<usize>,
}

/// Resolves every teacher record against the index and extracts features.
pub fn prepare_dataset(
    records: &[TeacherRecord],
    index: &Index,
    params: &Bm25Params,
) -> Result<Vec<TrainingQuery>, DistillError> {
    records
        .iter()
        .map(|rec| {
            let teacher = rec.to_permutation()?;
            let features = rec
                .docids
                .iter()
                .map(|d| {
                    let passage = index.passage(d).ok_or_else(|| DistillError::UnknownDocid {
                        query_id: rec.query_id.clone(),
                        docid: d.clone(),
                    })?;
                    Ok(extract_features(&rec.query_text, passage, index, params)?)
                })
                .collect::<Result<Vec<_>, DistillError>>()?;
            Ok(TrainingQuery {
                query_id: rec.query_id.clone(),
                features,
                ranks: teacher.ranks().to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    /// Mean per-query loss before any update.
    pub initial_loss: f64,
    /// Mean per-query loss at the end of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Per-feature mean and spread over all training rows.
struct Standardizer {
    mean: [f64; NUM_FEATURES],
    scale: [f64; NUM_FEATURES],
}

impl Standardizer {
    fn fit(queries: &[TrainingQuery]) -> Self {
        let rows: Vec<&FeatureVector> = queries.iter().flat_map(|q| &q.features).collect();
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; NUM_FEATURES];
        let mut scale = [1.0; NUM_FEATURES];
        for f in 0..NUM_FEATURES {
            if f == BIAS {
                continue;
            }
            let mu = rows.iter().map(|r| r.0[f]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.0[f] - mu).powi(2)).sum::<f64>() / n;
            mean[f] = mu;
            scale[f] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    fn apply(&self, f: &FeatureVector) -> [f64; NUM_FEATURES] {
        let mut z = f.0;
        for i in 0..NUM_FEATURES {
            if i != BIAS {
                z[i] = (z[i] - self.mean[i]) / self.scale[i];
            }
        }
        z
    }

    fn to_raw(&self, v: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut w = [0.0; NUM_FEATURES];
        let mut bias = v[BIAS];
        for i in 0..NUM_FEATURES {
            if i != BIAS {
                w[i] = v[i] / self.scale[i];
                bias -= v[i] * self.mean[i] / self.scale[i];
            }
        }
        w[BIAS] = bias;
        w
    }
}

/// Loss normalizer: pairs for pairwise losses, candidates for BCE.
fn normalizer(kind: LossKind, m: usize) -> f64 {
    match kind {
        LossKind::RankNet | LossKind::LambdaLoss => (m * (m - 1) / 2).max(1) as f64,
        LossKind::PointwiseBCE => m as f64,
        LossKind::ListwiseCE => 1.0,
    }
}

fn dot(a: &[f64; NUM_FEATURES], b: &[f64; NUM_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full-batch descent per query, queries shuffled each epoch.
pub fn train_on_features(
    queries: &[TrainingQuery],
    kind: LossKind,
    config: &TrainConfig,
) -> Result<(LinearStudent, TrainLog), DistillError> {
    config.validate()?;
    if queries.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let std = Standardizer::fit(queries);
    let z: Vec<Vec<[f64; NUM_FEATURES]>> = queries
        .iter()
        .map(|q| q.features.iter().map(|f| std.apply(f)).collect())
        .collect();
    let mut v = [0.0; NUM_FEATURES];

    let loss_at = |qi: usize, v: &[f64; NUM_FEATURES]| -> Result<(f64, Vec<f64>), DistillError> {
        let q = &queries[qi];
        let scores: Vec<f64> = z[qi].iter().map(|x| dot(v, x)).collect();
        let lg = loss_and_grad(kind, &scores, &q.ranks, None, &config.lambda).map_err(|source| {
            DistillError::Loss {
                query_id: q.query_id.clone(),
                source,
            }
        })?;
        let norm = normalizer(kind, scores.len());
        Ok((lg.loss / norm, lg.grad.into_iter().map(|g| g / norm).collect()))
    };
    let mean_loss = |v: &[f64; NUM_FEATURES]| -> Result<f64, DistillError> {
        let mut total = 0.0;
        for qi in 0..queries.len() {
            total += loss_at(qi, v)?.0;
        }
        Ok(total / queries.len() as f64)
    };

    let initial_loss = mean_loss(&v)?;
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &qi in &order {
            let (_, grad_s) = loss_at(qi, &v)?;
            let mut grad_v = [0.0; NUM_FEATURES];
            for (g, x) in grad_s.iter().zip(&z[qi]) {
                for f in 0..NUM_FEATURES {
                    grad_v[f] += g * x[f];
                }
            }
            for f in 0..NUM_FEATURES {
                if f != BIAS {
                    grad_v[f] += config.l2 * v[f];
                }
                v[f] -= config.learning_rate * grad_v[f];
            }
        }
        epoch_loss.push(mean_loss(&v)?);
    }
    let student = LinearStudent::new(std.to_raw(&v))?;
    Ok((student, TrainLog { initial_loss, epoch_loss }))
}

pub fn train(
    records: &[TeacherRecord],
    index: &Index,
    params: &Bm25Params,
    kind: LossKind,
    config: &TrainConfig,
) -> Result<(LinearStudent, TrainLog), DistillError> {
    if records.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let data = prepare_dataset(records, index, params)?;
    train_on_features(&data, kind, config)
}

/// Scores every candidate and sorts descending; ties keep initial rank.
pub fn rank_with_student(
    student: &LinearStudent,
    list: &CandidateList,
    index: &Index,
    params: &Bm25Params,
) -> Result<Ranking, DistillError> {
    let mut scored = Vec::with_capacity(list.len());
    for c in list.candidates() {
        let f = extract_features(list.query().text(), &c.passage, index, params)?;
        scored.push((c.passage.docid().to_string(), student.score(&f)));
    }
    Ok(Ranking::from_scores(list.query().id(), scored)?)
}

/// Fraction of teacher-ordered pairs the scores put in the same order;
/// tied scores count as disagreement.
pub fn pairwise_agreement(scores: &[f64], ranks: &[usize]) -> (usize, usize) {
    let mut agree = 0;
    let mut total = 0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ranks[i] < ranks[j] {
                total += 1;
                agree += (scores[i] > scores[j]) as usize;
            }
        }
    }
    (agree, total)
}

/// Graded judgments from teacher ranks: positions 1-2 grade 3, 3-5 grade 2,
/// 6-10 grade 1, deeper 0.
pub fn teacher_grade(rank: usize) -> u32 {
    match rank {
        1..=2 => 3,
        3..=5 => 2,
        6..=10 => 1,
        _ => 0,
    }
}

/// Student scores for every candidate of a prepared query.
pub fn score_query(student: &LinearStudent, query: &TrainingQuery) -> Vec<f64> {
    query.features.iter().map(|f| student.score(f)).collect()
}

/// Held-out summary used by tests and the CLI.
pub fn agreement_over(student: &LinearStudent, queries: &[TrainingQuery]) -> f64 {
    let (mut a, mut t) = (0, 0);
    for q in queries {
        let (qa, qt) = pairwise_agreement(&score_query(student, q), &q.ranks);
        a += qa;
        t += qt;
    }
    if t == 0 {
        1.0
    } else {
        a as f64 / t as f64
    }
}

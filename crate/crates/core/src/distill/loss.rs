//! Ranking losses over a score vector with analytic gradients.
//!
//! Teacher ranks are 1-based, `r_i = 1` is the teacher's top passage. All
//! pairwise terms use the orientation where a lower loss means the
//! teacher-preferred passage scores higher.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{is_permutation_of_1_to_n, TeacherPermutation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{kind} needs at least 2 candidates, got {m}")]
    TooFew { kind: &'static str, m: usize },
    #[error("{0} needs a candidate with teacher rank 1")]
    NoTop(&'static str),
    #[error("ranks are not a permutation of 1..={0}")]
    NotPermutation(usize),
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("score at position {0} is not finite")]
    NonFinite(usize),
    #[error("epsilon {0} must be in (0, 1e-3]")]
    Epsilon(f64),
    #[error("unknown loss `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    RankNet,
    ListwiseCE,
    LambdaLoss,
    PointwiseBCE,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::RankNet,
        LossKind::ListwiseCE,
        LossKind::LambdaLoss,
        LossKind::PointwiseBCE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::RankNet => "ranknet",
            LossKind::ListwiseCE => "listwise-ce",
            LossKind::LambdaLoss => "lambda",
            LossKind::PointwiseBCE => "bce",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, LossError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| LossError::UnknownKind(name.to_string()))
    }

    pub fn is_pairwise(self) -> bool {
        matches!(self, LossKind::RankNet | LossKind::LambdaLoss)
    }
}

/// Gain applied to the pseudo-label `l_i = M - r_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Gain {
    #[default]
    Linear,
    /// `2^l - 1`; grows quickly, use with short lists.
    Exponential,
}

/// Discount over 1-based student positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Discount {
    #[default]
    Log2,
    /// `D(π) = π`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LambdaConfig {
    pub gain: Gain,
    pub discount: Discount,
}

impl LambdaConfig {
    pub fn gain(&self, m: usize, rank: usize) -> f64 {
        let label = (m - rank) as f64;
        match self.gain {
            Gain::Linear => label,
            Gain::Exponential => label.exp2() - 1.0,
        }
    }

    pub fn discount(&self, position: usize) -> f64 {
        match self.discount {
            Discount::Log2 => (1.0 + position as f64).log2(),
            Discount::Linear => position as f64,
        }
    }

    /// `|G_i - G_j| * |1/D(π_i) - 1/D(π_j)|`
    pub fn delta_ndcg(&self, m: usize, r_i: usize, r_j: usize, pi_i: usize, pi_j: usize) -> f64 {
        (self.gain(m, r_i) - self.gain(m, r_j)).abs()
            * (1.0 / self.discount(pi_i) - 1.0 / self.discount(pi_j)).abs()
    }
}

/// Index pair `(winner, loser)` with the winner ranked higher by the teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub winner: usize,
    pub loser: usize,
}

/// Every pair with `r_winner < r_loser`, 0-based, in teacher order.
pub fn extract_pairs(teacher: &TeacherPermutation) -> Vec<Pair> {
    let order = teacher.order();
    let mut pairs = Vec::with_capacity(order.len() * order.len().saturating_sub(1) / 2);
    for (a, &w) in order.iter().enumerate() {
        for &l in &order[a + 1..] {
            pairs.push(Pair { winner: w - 1, loser: l - 1 });
        }
    }
    pairs
}

/// Student positions: 1-based ranks from sorting scores descending, ties by
/// index.
pub fn student_ranks(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, i) in idx.into_iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    total: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.total + x;
        if self.total.abs() >= x.abs() {
            self.comp += (self.total - t) + x;
        } else {
            self.comp += (x - t) + self.total;
        }
        self.total = t;
    }

    fn value(self) -> f64 {
        self.total + self.comp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// d loss / d s_i
    pub grad: Vec<f64>,
}

fn check_inputs(scores: &[f64], ranks: &[usize]) -> Result<(), LossError> {
    if ranks.len() != scores.len() {
        return Err(LossError::Length {
            what: "ranks",
            got: ranks.len(),
            expected: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    if !is_permutation_of_1_to_n(ranks) {
        return Err(LossError::NotPermutation(ranks.len()));
    }
    Ok(())
}

/// Loss and exact gradient with respect to the scores. `student` gives the
/// positions used by LambdaLoss; when absent they come from the scores.
/// The lambda weights are constants of the step, not differentiated.
pub fn loss_and_grad(
    kind: LossKind,
    scores: &[f64],
    ranks: &[usize],
    student: Option<&[usize]>,
    lambda: &LambdaConfig,
) -> Result<LossGrad, LossError> {
    check_inputs(scores, ranks)?;
    let m = scores.len();
    if kind.is_pairwise() && m < 2 {
        return Err(LossError::TooFew { kind: kind.name(), m });
    }
    let top = ranks.iter().position(|&r| r == 1);
    let mut loss = Sum::default();
    let mut grad = vec![Sum::default(); m];

    match kind {
        LossKind::RankNet | LossKind::LambdaLoss => {
            let computed;
            let pi = match (kind, student) {
                (LossKind::RankNet, _) => None,
                (_, Some(pi)) => {
                    if pi.len() != m {
                        return Err(LossError::Length { what: "student ranks", got: pi.len(), expected: m });
                    }
                    if !is_permutation_of_1_to_n(pi) {
                        return Err(LossError::NotPermutation(m));
                    }
                    Some(pi)
                }
                (_, None) => {
                    computed = student_ranks(scores);
                    Some(computed.as_slice())
                }
            };
            for i in 0..m {
                for j in 0..m {
                    if ranks[i] >= ranks[j] {
                        continue;
                    }
                    let weight = match pi {
                        None => 1.0,
                        Some(pi) => {
                            lambda.delta_ndcg(m, ranks[i], ranks[j], pi[i], pi[j]) / std::f64::consts::LN_2
                        }
                    };
                    if weight == 0.0 {
                        continue;
                    }
                    let diff = scores[i] - scores[j];
                    loss.add(weight * softplus(-diff));
                    let g = weight * sigmoid(-diff);
                    grad[i].add(-g);
                    grad[j].add(g);
                }
            }
        }
        LossKind::ListwiseCE => {
            let top = top.ok_or(LossError::NoTop(kind.name()))?;
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = Sum::default();
            for &s in scores {
                z.add((s - max).exp());
            }
            let z = z.value();
            loss.add(max + z.ln() - scores[top]);
            for (g, &s) in grad.iter_mut().zip(scores) {
                g.add((s - max).exp() / z);
            }
            grad[top].add(-1.0);
        }
        LossKind::PointwiseBCE => {
            let top = top.ok_or(LossError::NoTop(kind.name()))?;
            for (i, &s) in scores.iter().enumerate() {
                if i == top {
                    loss.add(softplus(-s));
                    grad[i].add(-sigmoid(-s));
                } else {
                    loss.add(softplus(s));
                    grad[i].add(sigmoid(s));
                }
            }
        }
    }
    Ok(LossGrad {
        loss: loss.value(),
        grad: grad.into_iter().map(Sum::value).collect(),
    })
}

/// A score vector with teacher ranks, for gradient checking.
#[derive(Debug, Clone, PartialEq)]
pub struct GradInstance {
    pub scores: Vec<f64>,
    pub ranks: Vec<usize>,
}

impl GradInstance {
    /// Standard-normal-ish scores (sum of uniforms) and a random permutation.
    pub fn random<R: Rng>(m: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let scores = (0..m)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).sum::<f64>() * 1.5 - 3.0)
            .collect();
        let mut ranks: Vec<usize> = (1..=m).collect();
        ranks.shuffle(rng);
        Self { scores, ranks }
    }
}

/// Largest per-coordinate relative error between the analytic gradient and
/// a fourth-order central difference with step `epsilon`. LambdaLoss
/// positions are frozen at the unperturbed scores.
pub fn grad_check(
    kind: LossKind,
    instance: &GradInstance,
    epsilon: f64,
    lambda: &LambdaConfig,
) -> Result<f64, LossError> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(LossError::Epsilon(epsilon));
    }
    let pi = student_ranks(&instance.scores);
    let pi = (kind == LossKind::LambdaLoss).then_some(pi.as_slice());
    let analytic = loss_and_grad(kind, &instance.scores, &instance.ranks, pi, lambda)?.grad;
    let mut shifted = instance.scores.clone();
    let mut f = |k: usize, h: f64| -> Result<f64, LossError> {
        shifted[k] = instance.scores[k] + h;
        let v = loss_and_grad(kind, &shifted, &instance.ranks, pi, lambda)?.loss;
        shifted[k] = instance.scores[k];
        Ok(v)
    };
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let e = epsilon;
        let numeric = (8.0 * (f(k, e)? - f(k, -e)?) - (f(k, 2.0 * e)? - f(k, -2.0 * e)?)) / (12.0 * e);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

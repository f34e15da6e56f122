use std::collections::HashMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use permurank_core::distill::{
    loss_and_grad, student_ranks, train_on_features, FeatureVector, LambdaConfig, LossKind, TrainConfig,
    TrainingQuery,
};
use permurank_core::gateway::mock::MockOracle;
use permurank_core::gateway::Gateway;
use permurank_core::prompting::InstructionKind;
use permurank_core::rerank::{hybrid_topk_rerank, sliding_rerank, RerankOptions};
use permurank_core::{CandidateList, InitialOrder, Passage, Query, WindowConfig};

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..15).prop_flat_map(|m| {
        (
            prop::collection::vec(-5.0f64..5.0, m),
            Just((1..=m).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

fn oracle_list(truth: &[f64]) -> (CandidateList, Gateway) {
    let q = Query::new("q", "query").unwrap();
    let list = CandidateList::from_ranked(
        q,
        (0..truth.len()).map(|i| (Passage::new(format!("p{i}"), format!("passage {i}"), None).unwrap(), 0.0)),
    )
    .unwrap();
    let scores: HashMap<String, f64> = truth.iter().enumerate().map(|(i, &s)| (format!("p{i}"), s)).collect();
    (list, Gateway::new(Box::new(MockOracle::from_scores(scores)), 1))
}

fn distinct_truth(m: usize, seed: u64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|i| i as f64).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairwise_and_listwise_losses_ignore_score_shifts((scores, ranks) in instance(), shift in -50.0f64..50.0) {
        let cfg = LambdaConfig::default();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        for kind in [LossKind::RankNet, LossKind::ListwiseCE, LossKind::LambdaLoss] {
            let pi = student_ranks(&scores);
            let a = loss_and_grad(kind, &scores, &ranks, Some(&pi), &cfg).unwrap();
            let b = loss_and_grad(kind, &shifted, &ranks, Some(&pi), &cfg).unwrap();
            prop_assert!((a.loss - b.loss).abs() <= 1e-9 * (1.0 + a.loss.abs()));
            for (x, y) in a.grad.iter().zip(&b.grad) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn losses_are_non_negative((scores, ranks) in instance()) {
        for kind in LossKind::ALL {
            let r = loss_and_grad(kind, &scores, &ranks, None, &LambdaConfig::default()).unwrap();
            prop_assert!(r.loss >= 0.0 && r.loss.is_finite());
        }
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries: Vec<TrainingQuery> = (0..6)
            .map(|q| {
                let feats: Vec<FeatureVector> = (0..5)
                    .map(|_| {
                        let mut v = [1.0; 6];
                        for x in &mut v[..5] {
                            *x = rand::Rng::random_range(&mut rng, 0.0..3.0);
                        }
                        FeatureVector(v)
                    })
                    .collect();
                let mut ranks: Vec<usize> = (1..=5).collect();
                ranks.shuffle(&mut rng);
                TrainingQuery { query_id: format!("q{q}"), features: feats, ranks }
            })
            .collect();
        let config = TrainConfig { epochs: 3, seed, ..TrainConfig::default() };
        for kind in LossKind::ALL {
            let (a, la) = train_on_features(&queries, kind, &config).unwrap();
            let (b, lb) = train_on_features(&queries, kind, &config).unwrap();
            prop_assert_eq!(&a.weights, &b.weights);
            prop_assert_eq!(la.epoch_loss, lb.epoch_loss);
        }
    }

    #[test]
    fn perfect_oracle_sorts_in_m_passes(m in 2usize..25, w in 2usize..12, s_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let w = w.min(m);
        // s in 1..w
        let step = 1 + ((w - 2) as f64 * s_frac) as usize;
        let truth = distinct_truth(m, seed);
        let (list, gw) = oracle_list(&truth);
        let cfg = WindowConfig::new(w, step, m, InitialOrder::Random(seed)).unwrap();
        let out = sliding_rerank(&list, &cfg, InstructionKind::PermutationChat, &gw, &RerankOptions::default()).unwrap();
        let mut sorted: Vec<usize> = (0..m).collect();
        sorted.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]));
        let want: Vec<String> = sorted.iter().map(|i| format!("p{i}")).collect();
        prop_assert_eq!(out.order, want);
        prop_assert!(out.anomalies.iter().all(|a| a.is_clean()));
    }

    #[test]
    fn hybrid_keeps_the_tail(m in 3usize..30, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 1 + ((m - 1) as f64 * k_frac) as usize;
        let (list, gw) = oracle_list(&distinct_truth(m, seed));
        let cfg = WindowConfig::new(4, 2, 1, InitialOrder::AsRetrieved).unwrap();
        let out = hybrid_topk_rerank(&list, k, &cfg, InstructionKind::PermutationChat, &gw, &RerankOptions::default()).unwrap();
        let original: Vec<&str> = list.docids();
        prop_assert_eq!(&out.order[k..], &original[k..]);
        let mut head: Vec<&str> = out.order[..k].iter().map(String::as_str).collect();
        let mut orig_head = original[..k].to_vec();
        head.sort();
        orig_head.sort();
        prop_assert_eq!(head, orig_head);
    }
}

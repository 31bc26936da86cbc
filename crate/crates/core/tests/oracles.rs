mod common;

use landmark_retrieval::feature_ops::{arcface_loss_grad, ArcfaceConfig};
use landmark_retrieval::rerank::{k_reciprocal_rerank, k_reciprocal_state, KReciprocalParams};
use landmark_retrieval::retrieval::{search_topk, DEFAULT_MEMORY_BUDGET};
use landmark_retrieval::rng::DetRng;

use common::*;

#[test]
fn search_matches_full_sort() {
    for seed in 0..3 {
        let mut rng = DetRng::new(seed);
        let q = random_unit(50, 16, "q", &mut rng);
        let idx = random_unit(500, 16, "i", &mut rng);
        let got = search_topk(&q, &idx, 20).unwrap();
        for (qi, list) in got.iter().enumerate() {
            let want = naive_topk(q.row(qi), &idx, 20);
            let got: Vec<(String, f64)> = list.entries.iter().map(|e| (e.id.clone(), e.sim)).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn k_reciprocal_matches_set_oracle() {
    for seed in 0..5 {
        let mut rng = DetRng::new(100 + seed);
        let q = random_unit(3, 6, "q", &mut rng);
        let g = random_unit(10, 6, "g", &mut rng);
        let params = KReciprocalParams { k1: 4, k2: 2, lambda: 0.3 };
        let st = k_reciprocal_state(&q, &g, params, DEFAULT_MEMORY_BUDGET).unwrap();
        let oracle = naive_k_reciprocal(&q, &g, 4, 2, 0.3);
        for i in 0..13 {
            assert_eq!(st.reciprocal[i], oracle.reciprocal[i].iter().copied().collect::<Vec<_>>());
            assert_eq!(st.expanded[i], oracle.expanded[i].iter().copied().collect::<Vec<_>>());
        }
        for qi in 0..3 {
            for gi in 0..10 {
                assert!((st.final_dist[qi * 10 + gi] - oracle.final_dist[qi][gi]).abs() < 1e-12);
            }
        }
        let lists = k_reciprocal_rerank(&q, &g, params, DEFAULT_MEMORY_BUDGET).unwrap();
        for (l, want) in lists.iter().zip(&oracle.order) {
            assert_eq!(&l.ids().map(str::to_string).collect::<Vec<_>>(), want);
        }
    }
}

#[test]
fn k_reciprocal_no_expansion_path() {
    let mut rng = DetRng::new(7);
    let q = random_unit(4, 5, "q", &mut rng);
    let g = random_unit(12, 5, "g", &mut rng);
    let st = k_reciprocal_state(&q, &g, KReciprocalParams { k1: 5, k2: 1, lambda: 0.0 }, DEFAULT_MEMORY_BUDGET).unwrap();
    let oracle = naive_k_reciprocal(&q, &g, 5, 1, 0.0);
    for qi in 0..4 {
        for gi in 0..12 {
            assert!((st.final_dist[qi * 12 + gi] - oracle.final_dist[qi][gi]).abs() < 1e-12);
        }
    }
}

#[test]
fn arcface_gradient_matches_finite_differences() {
    let cfg = ArcfaceConfig::default();
    for seed in 0..20 {
        let mut rng = DetRng::new(seed);
        let x = random_unit_f64(8, &mut rng);
        let w: Vec<Vec<f64>> = (0..5).map(|_| random_unit_f64(8, &mut rng)).collect();
        let target = rng.below(5);
        let lg = arcface_loss_grad(&x, &w, target, cfg).unwrap();
        let loss_ref = arcface_loss_via_acos(&x, &w, target, cfg.scale, cfg.margin);
        assert!((lg.loss - loss_ref).abs() < 1e-9 * loss_ref.abs().max(1.0));
        let fd = arcface_fd_grad(&x, &w, target, cfg.scale, cfg.margin, 1e-6);
        assert!(rel_err(&lg.grad_x, &fd) <= 1e-4, "seed {seed}");
    }
}

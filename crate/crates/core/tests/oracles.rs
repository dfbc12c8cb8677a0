//! Library results against dense brute-force references on random instances.

mod support;

use offeval_core::dataset::{remove_item_view, ItemId, ProfileView, UserId};
use offeval_core::debias::{
    item_distribution, kl_divergence, kl_gradient, kl_gradient_dense, pair_distribution,
    ActiveSet, WeightVector,
};
use offeval_core::protocol::evaluate_exhaustive;
use offeval_core::recommend::{
    constant_recommender, cosine_cf_scores, cosine_cf_scores_with, naive_cf_scores, CosineCf,
    CosineVariant, NaiveCf, Recommender,
};
use proptest::prelude::*;
use support::oracle::{self, rel_err, Instance};

const REL: f64 = 1e-12;

fn weights(inst: &Instance) -> WeightVector {
    WeightVector::from_vec(inst.weights.clone()).unwrap()
}

fn target(inst: &Instance) -> offeval_core::ItemDistribution {
    offeval_core::ItemDistribution::from_vec(inst.target.clone())
}

fn all_items(n: usize) -> ActiveSet {
    ActiveSet((0..n as u32).map(ItemId).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn item_distribution_matches_dense(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let p = item_distribution(&inst.snapshot(), &weights(&inst)).unwrap();
        let dense = oracle::item_distribution(&inst.b, &inst.weights);
        for (i, &d) in dense.iter().enumerate() {
            prop_assert!(rel_err(p.get(ItemId(i as u32)), d, 1e-300) <= REL);
        }
        prop_assert!((p.total() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn pair_distribution_matches_dense(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let s = inst.snapshot();
        let w = weights(&inst);
        let p = item_distribution(&s, &w).unwrap();
        let dense = oracle::pair_distribution(&inst.b, &inst.weights);
        for i in 0..inst.n_items() {
            let mut row = 0.0;
            for k in 0..inst.n_items() {
                let v = pair_distribution(&s, &w, ItemId(i as u32), ItemId(k as u32));
                prop_assert!(rel_err(v, dense[i][k], 1e-300) <= REL);
                prop_assert_eq!(v, pair_distribution(&s, &w, ItemId(k as u32), ItemId(i as u32)));
                row += v;
            }
            prop_assert!((row - p.get(ItemId(i as u32))).abs() <= 1e-10);
        }
    }

    #[test]
    fn divergence_matches_dense(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let d = kl_divergence(&target(&inst), &inst.snapshot(), &weights(&inst));
        let dense = oracle::kl(&inst.target, &inst.b, &inst.weights);
        prop_assert!((d - dense).abs() <= 1e-12 * dense.abs().max(1.0));
        prop_assert!(d >= -1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let g = kl_gradient(&target(&inst), &inst.snapshot(), &weights(&inst), &all_items(inst.n_items()));
        let fd = oracle::finite_difference_gradient(&inst, 1e-6);
        for (a, f) in g.iter().zip(&fd) {
            prop_assert!(rel_err(*a, *f, 1e-4) <= 1e-5, "analytic {} vs fd {}", a, f);
        }
    }

    #[test]
    fn gradient_routes_agree(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let (s, w, t) = (inst.snapshot(), weights(&inst), target(&inst));
        let scan = kl_gradient(&t, &s, &w, &all_items(inst.n_items()));
        let dense = kl_gradient_dense(&t, &s, &w);
        for (a, b) in scan.iter().zip(&dense) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn divergence_is_scale_invariant(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let (s, w, t) = (inst.snapshot(), weights(&inst), target(&inst));
        let d = kl_divergence(&t, &s, &w);
        for c in [0.5, 2.0, 10.0] {
            prop_assert!((kl_divergence(&t, &s, &w.scaled(c)) - d).abs() <= 1e-12);
        }
        let g = kl_gradient(&t, &s, &w, &all_items(inst.n_items()));
        let euler: f64 = g.iter().zip(w.as_slice()).map(|(g, w)| g * w).sum();
        prop_assert!(euler.abs() <= 1e-10, "euler sum {}", euler);
    }

    #[test]
    fn cf_scores_match_dense(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 50, 20);
        let s = inst.snapshot();
        for u in 0..inst.n_users() {
            let user = UserId(u as u32);
            let mut views = vec![(ProfileView::full(&s, user), None)];
            for &i in s.items_of(user) {
                views.push((remove_item_view(&s, user, i).unwrap(), Some(i.index())));
            }
            for (view, hidden) in views {
                let checks = [
                    (cosine_cf_scores(&view), oracle::cosine_scores(&inst.b, u, hidden, false)),
                    (
                        cosine_cf_scores_with(&view, CosineVariant::Textbook),
                        oracle::cosine_scores(&inst.b, u, hidden, true),
                    ),
                    (naive_cf_scores(&view), oracle::naive_scores(&inst.b, u, hidden)),
                ];
                for (got, want) in checks {
                    for (i, &x) in want.iter().enumerate() {
                        let y = got.get(ItemId(i as u32));
                        prop_assert!(rel_err(y, x, 1e-300) <= REL, "user {} item {}: {} vs {}", u, i, y, x);
                    }
                }
            }
        }
    }

    #[test]
    fn view_recommendations_match_rebuilt_snapshot(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 20, 12);
        let s = inst.snapshot();
        let recs: [Box<dyn Recommender>; 2] = [Box::new(CosineCf::default()), Box::new(NaiveCf)];
        for (u, i) in s.edges() {
            let view = remove_item_view(&s, u, i).unwrap();
            let rebuilt = s.without_edge(u, i);
            let full = ProfileView::full(&rebuilt, u);
            for g in &recs {
                prop_assert_eq!(g.recommend(&view, 5), g.recommend(&full, 5));
            }
        }
    }

    #[test]
    fn exhaustive_constant_score_is_weighted_mass(seed in any::<u64>()) {
        let inst = oracle::instance(seed, 30, 10);
        let s = inst.snapshot();
        let w = weights(&inst);
        let n = inst.n_items() as u32;
        let list: Vec<ItemId> = (0..n).filter(|i| i % 3 == 0).map(ItemId).collect();
        let g = constant_recommender(list.clone()).unwrap();
        let got = evaluate_exhaustive(&g, &s, Some(&w), 5).unwrap().score;
        let p = oracle::item_distribution(&inst.b, &inst.weights);
        let want: f64 = list.iter().map(|i| p[i.index()]).sum();
        prop_assert!((got - want).abs() <= 1e-12);
    }
}

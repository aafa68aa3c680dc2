//! Randomized invariants.

use proptest::prelude::*;
use treebound::bound::{evaluate_psi, psi_weight_gradient, reverse_jensen_holds, TreeDecomposition};
use treebound::ensemble::{edge_appearance, Domain, NegativeEnsembleView};
use treebound::format::{load_model, save_model};
use treebound::math::log_sum_exp;
use treebound::model::{gen_ising_grid, random_ising, Coupling, LogPotentials, ModelFamilySpec};
use treebound::optimize::update_v;
use treebound::tree::{cover_with_spanning_trees, enumerate_spanning_trees, random_spanning_tree};

fn coupling(b: bool) -> Coupling {
    if b {
        Coupling::Attractive
    } else {
        Coupling::Mixed
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_file_round_trip(rows in 1usize..4, cols in 1usize..4, c in 0.0f64..2.0, att: bool, seed: u64) {
        let m = gen_ising_grid(&ModelFamilySpec::ising_grid(rows, cols, coupling(att), c, seed)).unwrap();
        let back = load_model(&save_model(&m)).unwrap();
        prop_assert!(back.approx_eq(&m, 1e-12));
    }

    #[test]
    fn log_sum_exp_shift(xs in prop::collection::vec(-50.0f64..50.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((log_sum_exp(&shifted) - log_sum_exp(&xs) - c).abs() < 1e-9);
    }

    /// Σₑ μₑ = n − 1 for any weights summing to one over spanning trees.
    #[test]
    fn handshake_identity(rows in 2usize..4, cols in 2usize..4, seed: u64, raw in prop::collection::vec(-2.0f64..3.0, 8)) {
        let m = gen_ising_grid(&ModelFamilySpec::ising_grid(rows, cols, Coupling::Mixed, 1.0, seed)).unwrap();
        let trees = cover_with_spanning_trees(&m, seed).unwrap();
        let k = trees.len().min(raw.len());
        let mut w: Vec<f64> = raw[..k].to_vec();
        let s: f64 = w.iter().sum();
        prop_assume!(s.abs() > 0.1);
        w.iter_mut().for_each(|x| *x /= s);
        let members: Vec<_> = trees.into_iter().take(k).zip(w).collect();
        let mu = edge_appearance(&m, &members);
        prop_assert!((mu.iter().sum::<f64>() - (m.node_count() - 1) as f64).abs() < 1e-9);
    }

    #[test]
    fn update_v_stays_on_simplex(seed: u64, eps in 0.0f64..1.0, mi in prop::collection::vec(0.0f64..1.0, 12)) {
        let m = gen_ising_grid(&ModelFamilySpec::ising_grid(3, 3, Coupling::Mixed, 1.0, seed)).unwrap();
        let trees = cover_with_spanning_trees(&m, seed).unwrap();
        let n = trees.len() as f64;
        let pool: Vec<_> = trees.into_iter().map(|t| (t, 1.0 / n)).collect();
        let (next, tree) = update_v(&m, &pool, &mi, eps).unwrap();
        prop_assert!(next.iter().all(|(_, v)| *v >= 0.0));
        prop_assert!((next.iter().map(|m| m.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(next.iter().any(|(t, _)| *t == tree));
        let view = NegativeEnsembleView::new(random_spanning_tree(&m, seed).unwrap(), 3.0, next).unwrap();
        let total: f64 = view.to_ensemble().weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    /// Reverse Jensen on log-sum-exp in ℝ⁵ with one weight in (1, 10].
    #[test]
    fn reverse_jensen_on_log_sum_exp(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 2..6),
        wplus in 1.0f64..10.0,
        raw in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let wplus = wplus.max(1.0 + 1e-6);
        let k = pts.len();
        let s: f64 = raw[..k - 1].iter().sum();
        let mut w = vec![wplus];
        w.extend(raw[..k - 1].iter().map(|x| -(wplus - 1.0) * x / s));
        let combined: Vec<f64> = (0..5).map(|d| pts.iter().zip(&w).map(|(p, wi)| wi * p[d]).sum()).collect();
        let values: Vec<f64> = pts.iter().map(|p| log_sum_exp(p)).collect();
        let chk = reverse_jensen_holds(&values, &w, log_sum_exp(&combined)).unwrap();
        prop_assert!(matches!(chk.domain, Domain::Negative(0)));
        prop_assert!(chk.holds, "gap {}", chk.gap);
    }
}

/// ∂Ψ/∂wᵣ = Hᵣ against central differences, holding every θʳ fixed and
/// moving weight between two members so Σw stays one.
#[test]
fn psi_gradient_matches_finite_differences() {
    let eps = 1e-5;
    for k in 0..20u64 {
        let n = 3 + (k % 3) as usize;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if (i + j + k as usize) % 3 != 0 || j == i + 1 || (i == 0 && j == n - 1) {
                    edges.push((i, j));
                }
            }
        }
        let m = random_ising(n, edges, Coupling::Mixed, 1.0, k).unwrap();
        let trees = enumerate_spanning_trees(&m);
        let r = trees.len().min(3);
        assert_eq!(r, 3);
        let w: Vec<f64> = if k % 2 == 0 { vec![0.5, 0.3, 0.2] } else { vec![1.8, -0.5, -0.3] };
        let w = &w[..r];
        let wsum: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / wsum).collect();
        let mut rng = treebound::model::seeded_rng(k);
        let members: Vec<_> = trees
            .iter()
            .take(r)
            .zip(&w)
            .map(|(t, &wr)| {
                let mut p = LogPotentials::zeros_like(&m);
                for u in p.unary.iter_mut() {
                    u.iter_mut().for_each(|x| *x = treebound::model::uniform(&mut rng, -1.0, 1.0));
                }
                for &e in t.edges() {
                    p.pairwise[e].iter_mut().for_each(|x| *x = treebound::model::uniform(&mut rng, -1.0, 1.0));
                }
                (t.clone(), wr, p)
            })
            .collect();
        let d = TreeDecomposition::new(&m, members.clone()).unwrap();
        let grad = psi_weight_gradient(&m, &d).unwrap();
        let psi_at = |delta: f64| {
            let mut mm = members.clone();
            mm[0].1 += delta;
            mm[r - 1].1 -= delta;
            evaluate_psi(&m, &TreeDecomposition::new(&m, mm).unwrap()).unwrap()
        };
        let fd = (psi_at(eps) - psi_at(-eps)) / (2.0 * eps);
        let analytic = grad[0] - grad[r - 1];
        assert!((fd - analytic).abs() <= 1e-4 * analytic.abs().max(1.0), "#{k}: fd {fd} vs {analytic}");
    }
}

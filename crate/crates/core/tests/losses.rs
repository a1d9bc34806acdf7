mod common;

use approx::assert_abs_diff_eq;
use common::checks::{degeneracy, graph_loss, oracle_equivalence, structural_invariants};
use common::{gaussian_rows, rng};
use m3col::losses::{conventional_contrastive, m3co_pair, multisclip_pair, schedule_phase, Phase};
use m3col::mixup::{make_plan, MixupPlan};
use proptest::prelude::*;

#[test]
fn vectorized_losses_match_reference() {
    let e = oracle_equivalence(40, 11);
    assert!(e.max() < 1e-10, "{e:?}");
}

#[test]
fn mixup_loss_reduces_to_infonce_without_mixing() {
    assert!(degeneracy(40, 12) < 1e-10);
}

#[test]
fn invariants_hold() {
    let e = structural_invariants(30, 13);
    assert!(e.batch_permutation < 1e-10, "{e:?}");
    assert!(e.swap_m3co < 1e-12, "{e:?}");
    assert!(e.swap_multisclip < 1e-12, "{e:?}");
    assert!(e.weight_normalization < 1e-12, "{e:?}");
    assert!(e.affine_commutation < 1e-10, "{e:?}");
    assert_eq!(e.singleton, 0.0);
}

#[test]
fn aligned_pairs_give_low_loss() {
    let mut r = rng(3);
    let p = gaussian_rows(&mut r, 6, 8);
    let q = gaussian_rows(&mut r, 6, 8);
    let aligned = graph_loss(&[&p, &p], |g, t| conventional_contrastive(g, t[0], t[1], 0.1));
    let random = graph_loss(&[&p, &q], |g, t| conventional_contrastive(g, t[0], t[1], 0.1));
    assert!(aligned < random);
    assert!(aligned < (6f64).ln());
}

#[test]
fn uniform_similarities_give_log_n() {
    // identical rows make every candidate equally likely
    let p = vec![vec![1.0, 2.0, -1.0]; 5];
    let plan = make_plan(5, 2, 0.4, &mut rng(0)).unwrap();
    let ln5 = (5f64).ln();
    let conv = graph_loss(&[&p, &p], |g, t| conventional_contrastive(g, t[0], t[1], 0.3));
    let m3co = graph_loss(&[&p, &p], |g, t| m3co_pair(g, t[0], t[1], t[0], t[1], &plan, (0, 1), 0.3));
    let soft = graph_loss(&[&p, &p], |g, t| multisclip_pair(g, t[0], t[1], 0.3));
    assert_abs_diff_eq!(conv, ln5, epsilon = 1e-12);
    assert_abs_diff_eq!(m3co, 2.0 * ln5, epsilon = 1e-12);
    assert_abs_diff_eq!(soft, 2.0 * ln5, epsilon = 1e-12);
}

#[test]
fn schedule_switches_after_first_third() {
    let phases: Vec<Phase> = (0..9).map(|e| schedule_phase(e, 9, 1.0 / 3.0)).collect();
    assert_eq!(phases.iter().filter(|&&p| p == Phase::M3co).count(), 3);
    assert_eq!(phases[3], Phase::Multisclip);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixup_loss_is_nonnegative_and_finite(n in 1usize..7, e in 1usize..9, seed in any::<u64>(), tau in 0.05f64..2.0) {
        let mut r = rng(seed);
        let rows: Vec<_> = (0..4).map(|_| gaussian_rows(&mut r, n, e)).collect();
        let plan = make_plan(n, 2, 0.4, &mut r).unwrap();
        let v = graph_loss(&[&rows[0], &rows[1], &rows[2], &rows[3]], |g, t| {
            m3co_pair(g, t[0], t[1], t[2], t[3], &plan, (0, 1), tau)
        });
        prop_assert!(v.is_finite() && v >= -1e-12);
    }

    #[test]
    fn row_relabelling_composes(n in 1usize..9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let plan = make_plan(n, 2, 1.0, &mut r).unwrap();
        let identity: Vec<usize> = (0..n).collect();
        prop_assert_eq!(plan.permute_rows(&identity).unwrap(), plan.clone());
        let reversed: Vec<usize> = (0..n).rev().collect();
        let twice = plan.permute_rows(&reversed).unwrap().permute_rows(&reversed).unwrap();
        prop_assert_eq!(twice, plan);
    }

    #[test]
    fn plans_reject_bad_partners(n in 2usize..9) {
        let mut bad: Vec<usize> = (0..n).collect();
        bad[0] = bad[1];
        prop_assert!(MixupPlan::new(vec![0.5; n], vec![bad], 1.0).is_err());
    }
}

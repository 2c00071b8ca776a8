//! Invariants of the metric and statistics APIs over random inputs.

use proptest::collection::vec;
use proptest::prelude::*;
use synfaith_core::game::{make_synthetic, SyntheticKind, SyntheticModelSpec};
use synfaith_core::mask::MultimodalInstance;
use synfaith_core::perturb::{AttributionMap, PerturbationSchedule};
use synfaith_core::shapley::{exact_sii, CoalitionGame};
use synfaith_core::stats::{bonferroni, kendall_tau, midranks, spearman_rho, wilcoxon_signed_rank};
use synfaith_core::synergy::synergy_curves;

// Lengths avoid 8..=10, where exact Kendall enumeration dominates run time.
fn paired() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop_oneof![3usize..=7, 11usize..=30].prop_flat_map(|n| (vec(0u8..6, n), vec(-3.0f64..3.0, n)))
        .prop_map(|(x, y)| (x.into_iter().map(f64::from).collect(), y))
}

proptest! {
    #[test]
    fn midranks_sum_to_triangular_number(values in vec(0u8..5, 1..60)) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let n = values.len() as f64;
        prop_assert_eq!(midranks(&values).iter().sum::<f64>(), n * (n + 1.0) / 2.0);
    }

    #[test]
    fn correlations_are_symmetric((x, y) in paired()) {
        if let (Ok(a), Ok(b)) = (kendall_tau(&x, &y), kendall_tau(&y, &x)) {
            prop_assert_eq!(a.tau, b.tau);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        }
        if let (Ok(a), Ok(b)) = (spearman_rho(&x, &y), spearman_rho(&y, &x)) {
            prop_assert_eq!(a.rho, b.rho);
        }
    }

    #[test]
    fn correlations_ignore_monotone_transforms((x, y) in paired()) {
        let fx: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() - 4.0).collect();
        if let (Ok(a), Ok(b)) = (kendall_tau(&x, &y), kendall_tau(&fx, &y)) {
            prop_assert_eq!(a.tau, b.tau);
            prop_assert_eq!(a.p_value, b.p_value);
        }
        if let (Ok(a), Ok(b)) = (spearman_rho(&x, &y), spearman_rho(&fx, &y)) {
            prop_assert_eq!(a.rho, b.rho);
        }
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        if let (Ok(a), Ok(b)) = (kendall_tau(&x, &y), kendall_tau(&flipped, &y)) {
            prop_assert_eq!(a.tau, -b.tau);
        }
    }

    #[test]
    fn wilcoxon_is_symmetric_and_bonferroni_never_shrinks(
        (a, b) in (1usize..40).prop_flat_map(|n| (vec(0u8..5, n), vec(0u8..5, n))),
        comparisons in 0usize..12,
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = wilcoxon_signed_rank(&a, &b, comparisons).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a, comparisons).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert_eq!(ab.p_raw, ba.p_raw);
        let n = ab.effective_n as f64;
        prop_assert_eq!(ab.w_plus + ba.w_plus, n * (n + 1.0) / 2.0);
        prop_assert!((0.0..=1.0).contains(&ab.p_raw));
        prop_assert!(ab.p_bonferroni >= ab.p_raw && ab.p_bonferroni <= 1.0);
    }

    #[test]
    fn bonferroni_bounds(p in 0.0f64..=1.0, m in 0usize..100) {
        let adjusted = bonferroni(p, m);
        prop_assert!(adjusted >= p && adjusted <= 1.0);
    }

    #[test]
    fn sii_is_symmetric_in_the_pair(values in vec(-1.0f64..1.0, 32), i in 0usize..5, j in 0usize..5) {
        prop_assume!(i != j);
        let game = CoalitionGame::from_table(values).unwrap();
        let a = exact_sii(&game, i, j).unwrap().phi;
        let b = exact_sii(&game, j, i).unwrap().phi;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fsyn_depends_only_on_attribution_order(
        (v, t) in (1usize..20, 1usize..20).prop_flat_map(|(m, n)| (vec(-1.0f64..1.0, m), vec(-1.0f64..1.0, n))),
        scale in 1e-3f64..1e3,
        seed in 0u64..1000,
    ) {
        let inst = MultimodalInstance::new("p", v.len(), t.len()).unwrap();
        let model = make_synthetic(&SyntheticModelSpec::full_keys(SyntheticKind::WeightedMixed, &inst, seed), &inst).unwrap();
        let schedule = PerturbationSchedule::default();
        let attr = AttributionMap::new(v.clone(), t.clone()).unwrap();
        let scaled = AttributionMap::new(
            v.iter().map(|s| s * scale + 7.0).collect(),
            t.iter().map(|s| s * scale - 2.0).collect(),
        ).unwrap();
        let a = synergy_curves(&model, &inst, &attr, &schedule).unwrap();
        let b = synergy_curves(&model, &inst, &scaled, &schedule).unwrap();
        prop_assert_eq!(a.f_syn, b.f_syn);
        prop_assert!(a.f_syn.abs() <= 1.0);
    }
}

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use lod_core::coefficients::{decode_coefficient, encode_coefficient, gen_a1, gen_a2, SplitMix64};
use lod_core::correctors::{element_corrector, whole_domain};
use lod_core::fem::{FineCoefficient, FineField, LocalField};
use lod_core::operators::BubbleSet;
use lod_core::poly::{project_l2, CoarseSpace};
use lod_core::{CartesianMesh, ElementId};

fn random_field(mesh: CartesianMesh, seed: u64) -> FineField {
    let mut rng = SplitMix64::new(seed);
    let mut f = FineField::from_fn(mesh, |_, _| 2.0 * rng.next_f64() - 1.0);
    f.zero_boundary();
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ph_is_idempotent(p in 0usize..=3, seed in any::<u64>()) {
        let space = CoarseSpace::from_levels(2, 6, p).unwrap();
        let bs = BubbleSet::new(&space).unwrap();
        let pv = bs.apply_ph(&random_field(space.fine, seed)).unwrap();
        let ppv = bs.apply_ph(&pv).unwrap();
        assert_abs_diff_eq!(ppv.sub(&pv).max_abs(), 0.0, epsilon = 1e-10 * pv.max_abs().max(1.0));
    }

    #[test]
    fn ph_keeps_moments(p in 0usize..=2, seed in any::<u64>()) {
        let space = CoarseSpace::from_levels(2, 6, p).unwrap();
        let bs = BubbleSet::new(&space).unwrap();
        let v = random_field(space.fine, seed);
        let m0 = project_l2(&v, &space).unwrap();
        let m1 = project_l2(&bs.apply_ph(&v).unwrap(), &space).unwrap();
        prop_assert!(m0.max_abs_diff(&m1) <= 1e-10);
    }

    #[test]
    fn stabilized_bubble_is_dual(p in 0usize..=2, i in 0usize..4, j in 0usize..4, k in 0usize..9) {
        let space = CoarseSpace::from_levels(2, 6, p).unwrap();
        let k = k % space.funcs();
        let bs = BubbleSet::new(&space).unwrap();
        let t = ElementId::new(i, j);
        let b = bs.stabilized_bubble(t, k).to_fine_field(space.fine);
        let m = project_l2(&b, &space).unwrap();
        let idx = space.coarse.cell_index(t);
        for (e, block) in (0..space.element_count()).map(|e| (e, m.block(e))) {
            for (q, &x) in block.iter().enumerate() {
                let want = if e == idx && q == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(x, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn corrector_has_zero_moments(seed in any::<u64>(), i in 0usize..4, j in 0usize..4, ell in 1usize..4) {
        let a = gen_a1(seed % 1000, 5).unwrap();
        let space = CoarseSpace::from_levels(2, 5, 1).unwrap();
        let coeff = FineCoefficient::new(&a, space.fine).unwrap();
        let v = random_field(space.fine, seed);
        let all = space.rect_nodes(&whole_domain(&space));
        let c = element_corrector(&space, &coeff, ElementId::new(i, j), &LocalField::crop(&v, all), ell).unwrap();
        let m = project_l2(&c.field.to_fine_field(space.fine), &space).unwrap();
        prop_assert!(m.norm() <= 1e-9);
    }

    #[test]
    fn coefficients_stay_in_bounds(seed in any::<u64>(), level in 4u32..7) {
        for a in [gen_a1(seed, level).unwrap(), gen_a2(seed, level).unwrap()] {
            prop_assert!(a.alpha() > 0.0);
            prop_assert!(a.cells().iter().all(|&c| c >= a.alpha() && c <= a.beta()));
            let back = decode_coefficient(&encode_coefficient(&a)).unwrap();
            prop_assert_eq!(back.cells(), a.cells());
        }
    }
}

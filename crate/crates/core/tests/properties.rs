use proptest::prelude::*;

use vgchaos::bounds::{empirical_w1, six_moment_bound};
use vgchaos::chaos::SecondChaosElement;
use vgchaos::vg::{ChaosVgParams, VgParams};

fn eigenvalue() -> impl Strategy<Value = f64> {
    prop_oneof![0.05f64..2.0, -2.0f64..-0.05]
}

fn spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(eigenvalue(), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cumulants_are_homogeneous(c in spectrum(), s in 0.1f64..3.0) {
        let f = SecondChaosElement::new(c.clone()).unwrap();
        let g = SecondChaosElement::new(c.iter().map(|x| s * x).collect()).unwrap();
        for p in 2..=8 {
            let want = s.powi(p as i32) * f.cumulant(p).unwrap();
            let got = g.cumulant(p).unwrap();
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn rescale_hits_target_variance(c in spectrum(), k2 in 0.1f64..10.0) {
        let f = SecondChaosElement::new(c).unwrap().rescaled_to_kappa2(k2).unwrap();
        prop_assert!((f.cumulant(2).unwrap() - k2).abs() <= 1e-12 * k2);
    }

    #[test]
    fn vg_identity_and_symmetry(r in 0.2f64..8.0, theta in -2.0f64..2.0, sigma in 0.1f64..3.0) {
        let y = VgParams::centered(r, theta, sigma).unwrap();
        let (res, scale) = y.cumulant_identity_residual().unwrap();
        prop_assert!(res.abs() <= 1e-12 * scale);
        let s = VgParams::centered(r, 0.0, sigma).unwrap();
        let k = s.cumulants_2_to_6().unwrap();
        prop_assert_eq!(k[1], 0.0);
        prop_assert_eq!(k[3], 0.0);
        for x in [0.3, 1.0, 2.5] {
            prop_assert_eq!(s.density(x).value, s.density(-x).value);
        }
    }

    #[test]
    fn chaos_vg_pairs_match_exactly(alpha in 0.05f64..2.0, beta in 0.05f64..2.0, r in 1u32..5) {
        let c = ChaosVgParams::new(alpha, beta, r).unwrap();
        let y = VgParams::from_chaos_params(&c);
        let f = SecondChaosElement::from_chaos_params(&c);
        let m = f.m_statistic(&y).unwrap();
        let scale = y.cumulants_2_to_6().unwrap().iter().fold(0.0f64, |a, k| a.max(k.abs()));
        prop_assert!(m.m <= 1e-12 * scale);
        // the bound takes square roots of rounding-level differences, so compare
        // against a visibly perturbed spectrum instead of an absolute threshold
        let exact = six_moment_bound(&f, &y).unwrap();
        let mut c2 = f.eigenvalues().to_vec();
        c2[0] *= 1.01;
        let g = SecondChaosElement::new(c2).unwrap().rescaled_to_kappa2(f.cumulant(2).unwrap()).unwrap();
        prop_assert!(exact <= 0.01 * six_moment_bound(&g, &y).unwrap(), "{exact}");
    }

    #[test]
    fn w1_is_a_symmetric_shift_metric(xs in prop::collection::vec(-5.0f64..5.0, 2..64), d in -2.0f64..2.0) {
        let ys: Vec<f64> = xs.iter().map(|x| x + d).collect();
        let a = empirical_w1(&xs, &ys).unwrap();
        let b = empirical_w1(&ys, &xs).unwrap();
        prop_assert!((a - d.abs()).abs() <= 1e-12 * (1.0 + d.abs()) + 1e-12);
        prop_assert!((a - b).abs() <= 1e-15 + 1e-12 * a);
        prop_assert_eq!(empirical_w1(&xs, &xs).unwrap(), 0.0);
    }
}

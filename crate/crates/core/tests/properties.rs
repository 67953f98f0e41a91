use std::collections::BTreeSet;

use parrondo::ergodicity::{brute_force_transient, classify_transient};
use parrondo::kernels::{row_b, Kernel, Params, Pattern, StateIndex};
use parrondo::profit::{self, stationary, Dist, ExactOptions, Formula, Method};
use proptest::prelude::*;

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        1 => Just(1.0),
        1 => Just(0.5),
        6 => 0.0..=1.0f64,
    ]
}

fn params() -> impl Strategy<Value = Params> {
    prop::array::uniform4(prob()).prop_map(|p| Params::from_array(p).unwrap())
}

fn interior_params() -> impl Strategy<Value = Params> {
    prop::array::uniform4(0.02..0.98f64).prop_map(|p| Params::from_array(p).unwrap())
}

fn symmetric(p: Params) -> Params {
    let [p0, p1, _, p3] = p.as_array();
    Params::new(p0, p1, p1, p3).unwrap()
}

fn pattern() -> impl Strategy<Value = Pattern> {
    (1u32..=3, 1u32..=3).prop_map(|(r, s)| Pattern::new(r, s).unwrap())
}

fn all_states(n: usize) -> impl Iterator<Item = StateIndex> {
    (0..1u32 << n).map(move |x| StateIndex::new(x, n).unwrap())
}

fn row_map(row: Vec<(StateIndex, f64)>) -> std::collections::BTreeMap<StateIndex, f64> {
    row.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_are_stochastic(n in 3usize..=8, p in params(), pat in pattern()) {
        let b = Kernel::game_b(n, p).unwrap();
        let k = Kernel::pattern(n, p, pat).unwrap();
        for x in all_states(n) {
            for kernel in [&b, &k] {
                let row = kernel.row(x).unwrap();
                let sum: f64 = row.iter().map(|e| e.1).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-14, "row {x} sums to {sum}");
                prop_assert!(row.iter().all(|e| e.1 >= 0.0));
            }
        }
    }

    #[test]
    fn kernel_is_rotation_invariant(n in 3usize..=6, p in params(), k in 0usize..6) {
        for x in all_states(n) {
            let direct = row_map(row_b(n, &p, x.rotate(k)).unwrap());
            let rotated: Vec<(StateIndex, f64)> =
                row_b(n, &p, x).unwrap().into_iter().map(|(y, v)| (y.rotate(k), v)).collect();
            prop_assert_eq!(direct, row_map(rotated));
        }
    }

    #[test]
    fn kernel_is_reflection_invariant_when_symmetric(n in 3usize..=6, p in params()) {
        let p = symmetric(p);
        for x in all_states(n) {
            let direct = row_map(row_b(n, &p, x.reflect()).unwrap());
            let reflected: Vec<(StateIndex, f64)> =
                row_b(n, &p, x).unwrap().into_iter().map(|(y, v)| (y.reflect(), v)).collect();
            prop_assert_eq!(direct, row_map(reflected));
        }
    }

    #[test]
    fn composition_keeps_rotation_invariance(n in 3usize..=5, p in params(), p2 in params(), k in 1usize..5) {
        let kernel = Kernel::compose(vec![
            (Kernel::game_b(n, p).unwrap(), 2),
            (Kernel::game_a(n).unwrap(), 1),
            (Kernel::game_b(n, p2).unwrap(), 1),
        ])
        .unwrap();
        for x in all_states(n) {
            let direct = row_map(kernel.row(x.rotate(k)).unwrap());
            for (y, v) in kernel.row(x).unwrap() {
                let w = direct.get(&y.rotate(k)).copied().unwrap_or(0.0);
                prop_assert!((v - w).abs() <= 1e-15, "{x} -> {y}: {v} vs {w}");
            }
            prop_assert_eq!(direct.len(), kernel.row(x).unwrap().len());
        }
    }

    #[test]
    fn transient_set_is_rotation_closed(n in 3usize..=10, p in params(), k in 1usize..10) {
        let t = classify_transient(n, p).unwrap();
        let rotated: BTreeSet<StateIndex> = t.states.iter().map(|x| x.rotate(k % n)).collect();
        prop_assert_eq!(rotated, t.states);
    }

    #[test]
    fn brute_force_is_pattern_independent(n in 3usize..=6, p in params()) {
        let reference = brute_force_transient(n, p, Pattern::new(1, 1).unwrap()).unwrap();
        for (r, s) in [(1, 2), (2, 1), (3, 2)] {
            let other = brute_force_transient(n, p, Pattern::new(r, s).unwrap()).unwrap();
            prop_assert_eq!(&other, &reference);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_is_conserved(n in 3usize..=7, p in params(), pat in pattern()) {
        let kernel = Kernel::pattern(n, p, pat).unwrap();
        let mut d = Dist::point_mass(StateIndex::zeros(n).unwrap()).unwrap();
        for _ in 0..1000 {
            d = kernel.apply(&d).unwrap();
        }
        prop_assert!((d.total() - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn formulas_agree(n in 3usize..=7, p in interior_params(), pat in pattern()) {
        let rep = profit::mu_pattern(n, p, pat, Formula::All).unwrap();
        let mu1 = rep.formula("mu1").unwrap();
        prop_assert!((mu1 - rep.formula("mu2").unwrap()).abs() <= 1e-10);
        prop_assert!((mu1 - rep.formula("mu3").unwrap()).abs() <= 1e-10);
        if pat.s() == 1 {
            prop_assert!((rep.formula("mu3").unwrap() - rep.formula("mu4").unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn lambda_flips_sign(n in 3usize..=8, p in params(), pat in pattern()) {
        let q = profit::lambda_map(p);
        if let (Ok(a), Ok(b)) = (profit::mu_b(n, p), profit::mu_b(n, q)) {
            prop_assert!((a.mu + b.mu).abs() <= 1e-10, "{} vs {}", a.mu, b.mu);
        }
        if let (Ok(a), Ok(b)) = (profit::mu_pattern(n, p, pat, Formula::Mu1), profit::mu_pattern(n, q, pat, Formula::Mu1)) {
            prop_assert!((a.mu + b.mu).abs() <= 1e-10, "{} vs {}", a.mu, b.mu);
        }
    }

    #[test]
    fn stationary_residual_is_small(n in 3usize..=9, p in params(), pat in pattern(), power in any::<bool>()) {
        let method = if power { Method::Power } else { Method::Direct };
        let kernel = Kernel::pattern(n, p, pat).unwrap();
        let st = stationary(&kernel, method).unwrap();
        let next = kernel.apply(&st.dist).unwrap();
        prop_assert!(next.l1_distance(&st.dist) <= 1e-12);
        prop_assert!(st.diagnostics.residual <= 1e-12);
    }

    #[test]
    fn stationary_law_is_symmetric(n in 3usize..=6, p in params(), pat in pattern()) {
        let st = stationary(&Kernel::pattern(n, p, pat).unwrap(), Method::Direct).unwrap();
        for x in all_states(n) {
            for k in 1..n {
                prop_assert!((st.dist.weight(x) - st.dist.weight(x.rotate(k))).abs() <= 1e-12);
            }
        }
        let ps = symmetric(p);
        let st = stationary(&Kernel::pattern(n, ps, pat).unwrap(), Method::Direct).unwrap();
        for x in all_states(n) {
            prop_assert!((st.dist.weight(x) - st.dist.weight(x.reflect())).abs() <= 1e-12);
        }
    }

    #[test]
    fn marginal_is_symmetric_when_p1_eq_p2(n in 3usize..=8, p in params(), pat in pattern()) {
        let stages = profit::pattern_stages(n, symmetric(p), pat, &ExactOptions::default()).unwrap();
        for d in &stages.after_b {
            let m = d.marginal_13();
            prop_assert!((m.get(0, 1) - m.get(1, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn no_stationary_mass_on_transient_states(n in 3usize..=8, p in params(), pat in pattern()) {
        let t = classify_transient(n, p).unwrap();
        let st = stationary(&Kernel::pattern(n, p, pat).unwrap(), Method::Auto).unwrap();
        for x in &t.states {
            prop_assert!(st.dist.weight(*x) <= 1e-12, "{x}: {}", st.dist.weight(*x));
        }
    }
}

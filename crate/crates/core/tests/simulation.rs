use parrondo::montecarlo::{simulate_pattern, simulate_ring_spin, GameMode, RingConfig, SimConfig};
use parrondo::profit::{self, Formula};
use parrondo::{Params, Pattern};

fn params(p: [f64; 4]) -> Params {
    Params::from_array(p).unwrap()
}

#[test]
fn fair_game_any_pattern() {
    for (r, s) in [(1, 1), (2, 3), (3, 1)] {
        let cfg = SimConfig::new(4, Params::fair(), GameMode::Pattern(Pattern::new(r, s).unwrap()), 1_000_000, 5);
        let res = simulate_pattern(&cfg).unwrap();
        assert!(res.mean.abs() <= 4.0 * res.std_error, "({r},{s}): {}", res.mean);
        assert!(res.std_error >= 0.0 && res.mean.abs() <= 1.0);
    }
}

#[test]
fn pattern_small_ring_matches_exact() {
    let p = params([1.0, 0.6, 0.6, 0.0]);
    let pat = Pattern::new(1, 1).unwrap();
    let exact = profit::mu_pattern(3, p, pat, Formula::Mu1).unwrap().mu;
    let res = simulate_pattern(&SimConfig::new(3, p, GameMode::Pattern(pat), 1_000_000, 2024)).unwrap();
    assert!((res.mean - exact).abs() <= 3.0 * res.std_error, "{} vs {exact}", res.mean);
    assert_eq!(res.a_plays * 2, res.n_effective);
}

#[test]
fn pure_b_matches_exact() {
    let p = params([0.1, 0.6, 0.6, 0.75]);
    let exact = profit::mu_b(5, p).unwrap().mu;
    let res = simulate_pattern(&SimConfig::new(5, p, GameMode::PureB, 1_000_000, 77)).unwrap();
    assert!((res.mean - exact).abs() <= 3.0 * res.std_error, "{} vs {exact}", res.mean);
    assert!(res.replica_std_error > 0.0);
}

#[test]
fn ring_size_is_stable_at_fixed_budget() {
    let base = params([0.1, 0.6, 0.6, 0.75]);
    let small = simulate_ring_spin(&RingConfig::for_mixture(base, 0.5, 128, 8000, 800, 3, 8).unwrap()).unwrap();
    let large = simulate_ring_spin(&RingConfig::for_mixture(base, 0.5, 512, 2000, 200, 4, 8).unwrap()).unwrap();
    let combined = small.std_error.hypot(large.std_error);
    assert!((small.mu_limit - large.mu_limit).abs() < 3.0 * combined, "{} vs {}", small.mu_limit, large.mu_limit);
}

#[test]
fn ring_mapped_dynamics_and_weights() {
    let base = params([0.1, 0.6, 0.6, 0.75]);
    let cfg = RingConfig::for_mixture(base, 0.5, 64, 10, 0, 0, 1).unwrap();
    assert_eq!(cfg.params, params([0.3, 0.55, 0.55, 0.625]));
    for (w, want) in cfg.payoff.iter().zip([-0.4, 0.1, 0.1, 0.25]) {
        assert!((w - want).abs() <= 1e-15, "{w} vs {want}");
    }
}

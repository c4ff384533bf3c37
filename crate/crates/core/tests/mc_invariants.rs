use ratput::{mc_price, solve_rational, GridSpec, IntensityFamily, MCConfig, MarketParams, SolverConfig};

fn setup(theta: f64) -> (MarketParams, ratput::PriceSurface, IntensityFamily) {
    let m = MarketParams::default();
    let g = GridSpec::default_for(&m, 100.0).unwrap();
    let f = IntensityFamily::exponential(theta).unwrap();
    let surf = solve_rational(&m, &g, &f, &SolverConfig::default()).unwrap().surface;
    (m, surf, f)
}

#[test]
fn antithetic_pairs_do_not_inflate_the_error() {
    let (m, surf, f) = setup(1.0);
    let base = MCConfig { n_paths: 40_000, n_steps: 250, ..MCConfig::default() };
    let anti = mc_price(&m, &surf, &f, &base, 100.0).unwrap();
    let plain = mc_price(&m, &surf, &f, &MCConfig { antithetic: false, ..base }, 100.0).unwrap();
    assert!(anti.std_error <= 1.05 * plain.std_error, "{} vs {}", anti.std_error, plain.std_error);
}

#[test]
fn doubling_the_steps_moves_the_price_less_than_three_errors() {
    let (m, surf, f) = setup(10.0);
    let coarse = MCConfig { n_paths: 40_000, n_steps: 250, ..MCConfig::default() };
    let a = mc_price(&m, &surf, &f, &coarse, 100.0).unwrap();
    let b = mc_price(&m, &surf, &f, &MCConfig { n_steps: 500, ..coarse }, 100.0).unwrap();
    let se = a.std_error.hypot(b.std_error);
    assert!((a.price - b.price).abs() < 3.0 * se, "{} vs {} (se {se})", a.price, b.price);
}

#[test]
fn mc_agrees_with_the_surface_off_the_anchor() {
    let (m, surf, f) = setup(5.0);
    let mc = MCConfig { n_paths: 40_000, n_steps: 250, ..MCConfig::default() };
    for s0 in [90.0, 110.0] {
        let est = mc_price(&m, &surf, &f, &mc, s0).unwrap();
        let pde = surf.interpolate(0.0, s0).unwrap();
        assert!((est.price - pde).abs() < 3.5 * est.std_error, "s0 {s0}: {} vs {pde}", est.price);
        assert!((0.0..=1.0).contains(&est.exercise_fraction));
    }
}

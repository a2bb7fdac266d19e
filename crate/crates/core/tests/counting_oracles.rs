#![allow(clippy::excessive_precision)]

mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use readout_core::counting::{
    bright_error, dark_error, p_bright_closed, p_no_transition, p_total, p_with_transition, poisson, BrightModel,
    CountPmf, RateSet,
};
use support::{chi_square_p, p_with_transition_oracle, sample_count, sample_history};

// 40 decimal-digit reference values.
const PMF_3_AT_4: f64 = 0.195_366_814_813_164_59;
const LEAK_2_160US: f64 = 0.029_151_357_526_421_796;
const BRIGHT_ERROR_200US: f64 = 0.026_311_981_714_984_39;

#[test]
fn high_precision_references() {
    let v = p_no_transition(3, 100e-6, 40e3).unwrap();
    assert!((v - PMF_3_AT_4).abs() < 1e-15, "{v}");
    let rates = RateSet::new(40.45e3, 1.05e3, 1.31e3).unwrap();
    let v = p_with_transition(2, 160e-6, &rates).unwrap();
    assert!((v - LEAK_2_160US).abs() < 1e-13, "{v}");
    let model = BrightModel::from_detected_rate(0.0096, 39.4e3, 1.05e3, 1.31e3).unwrap();
    let v = bright_error(200e-6, 1, &model).unwrap();
    assert!((v - BRIGHT_ERROR_200US).abs() < 1e-14, "{v}");
}

#[test]
fn leak_term_matches_unsimplified_split_sum() {
    for (ri, rf, rl, t) in [
        (40.45e3, 1.05e3, 1.31e3, 160e-6),
        (59.83e3, 1.13e3, 4.1e3, 50e-6),
        (34.72e3, 1.12e3, 3.63e3, 300e-6),
        (5e3, 20e3, 50e3, 100e-6),
    ] {
        let rates = RateSet::new(ri, rf, rl).unwrap();
        for n in 0..=30 {
            let got = p_with_transition(n, t, &rates).unwrap();
            let want = p_with_transition_oracle(n, t, ri, rf, rl);
            assert!((got - want).abs() <= 1e-10, "n={n} {got} vs {want}");
        }
    }
}

#[test]
fn leak_term_matches_monte_carlo() {
    // 10^7 histories: P(leak and N = 2) at 160 us.
    let (ri, rf, rl, t) = (40.45e3, 1.05e3, 1.31e3, 160e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 10_000_000u64;
    let mut hits = 0u64;
    for _ in 0..trials {
        let (leaked, n) = sample_history(&mut rng, t, ri, rf, rl);
        hits += (leaked && n == 2) as u64;
    }
    let p = LEAK_2_160US;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    let est = hits as f64 / trials as f64;
    assert!((est - p).abs() < 4.0 * se, "{est} vs {p} (se {se})");
}

#[test]
fn bright_pmf_matches_monte_carlo_for_every_table_row() {
    let rows = [(1.05e3, 39.4e3, 1.31e3), (1.13e3, 58.7e3, 4.1e3), (1.12e3, 33.6e3, 3.63e3)];
    for (i, (b, a, l)) in rows.into_iter().enumerate() {
        let model = BrightModel::from_detected_rate(0.0096, a, b, l).unwrap();
        let pmf = CountPmf::bright(50e-6, &model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut hist = vec![0u64; 64];
        for _ in 0..200_000 {
            let n = sample_count(&mut rng, 50e-6, a + b, b, l) as usize;
            hist[n.min(63)] += 1;
        }
        let p = chi_square_p(&hist, &pmf.probabilities);
        assert!(p > 0.001, "row {i}: p = {p}");
    }
}

#[test]
fn poisson_limit_is_exact() {
    let rates = RateSet::new(39.4e3, 1.05e3, 0.0).unwrap();
    for n in 0..60 {
        let v = p_total(n, 200e-6, &rates).unwrap();
        let w = poisson::pmf(n, 39.4e3 * 200e-6);
        assert!(v == w || ((v - w) / w).abs() <= 1e-12);
    }
}

#[test]
fn dark_error_is_the_poisson_tail() {
    for (t, k, r) in [(200e-6, 1u64, 1.05e3), (160e-6, 2, 0.7e3), (84e-6, 3, 5e3)] {
        let mu: f64 = r * t;
        let below: f64 = (0..k).map(|n| (-mu).exp() * mu.powi(n as i32) / (1..=n).map(|x| x as f64).product::<f64>()).sum();
        assert!((dark_error(t, k, r).unwrap() - (1.0 - below)).abs() < 1e-15);
    }
}

fn rate_set() -> impl Strategy<Value = (RateSet, f64)> {
    (1e2..1e5f64, 0.0..5e3f64, 0.0..2e4f64, 1e-6..1e-3f64)
        .prop_map(|(ri, rf, rl, t)| (RateSet::new(ri, rf, rl).unwrap(), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalisation((rates, t) in rate_set()) {
        let pmf = CountPmf::total(t, &rates).unwrap();
        let mass = pmf.total_mass();
        prop_assert!((1.0 - 1e-9..=1.0 + 1e-12).contains(&mass), "{}", mass);
    }

    #[test]
    fn transition_marginal((rates, t) in rate_set()) {
        let pmf = CountPmf::total(t, &rates).unwrap();
        let leak: f64 = (0..=pmf.n_max()).map(|n| p_with_transition(n, t, &rates).unwrap()).sum();
        let want = -(-rates.r_loss * t).exp_m1();
        prop_assert!((leak - want).abs() <= 1e-9, "{} vs {}", leak, want);
    }

    #[test]
    fn closed_form_equals_quadrature(a in 1e3..1e5f64, b in 0.0..5e3f64, l in 1.0..2e4f64, t in 1e-5..5e-4f64, n in 0u64..=50) {
        let model = BrightModel::from_detected_rate(0.0096, a, b, l).unwrap();
        let closed = p_bright_closed(n, t, &model).unwrap();
        let quad = p_total(n, t, &model.rate_set()).unwrap();
        prop_assert!((closed - quad).abs() <= 1e-8, "{} vs {}", closed, quad);
    }

    #[test]
    fn bright_error_grows_with_threshold(a in 1e3..1e5f64, b in 0.0..5e3f64, l in 0.0..2e4f64, t in 1e-6..1e-3f64, k in 1u64..6) {
        let model = BrightModel::from_detected_rate(0.0096, a, b, l).unwrap();
        prop_assert!(bright_error(t, k + 1, &model).unwrap() >= bright_error(t, k, &model).unwrap() - 1e-15);
    }

    #[test]
    fn dark_error_monotone(t in 1e-6..1e-3f64, dt in 0.0..1e-4f64, r in 0.0..1e4f64, dr in 0.0..1e3f64, k in 1u64..5) {
        let base = dark_error(t, k, r).unwrap();
        prop_assert!(dark_error(t + dt, k, r).unwrap() >= base - 1e-15);
        prop_assert!(dark_error(t, k, r + dr).unwrap() >= base - 1e-15);
    }
}

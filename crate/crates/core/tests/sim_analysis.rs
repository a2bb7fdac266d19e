mod support;

use proptest::prelude::*;
use readout_core::analysis::{
    cumulative_counts, error_curves, histogram_at, optimal_operating_point, retention_rate, CurveAccumulator,
};
use readout_core::counting::{bright_error, dark_error, BrightModel, CountPmf};
use readout_core::sim::{
    simulate_chunked, simulate_dataset, simulate_dataset_with_threads, PrepState, SimConfig, TrialRecord,
};
use statrs::distribution::{Binomial, DiscreteCDF};
use support::chi_square_p;

fn config(eta_r0: f64, r_loss: f64, r_bg: f64, n_bright: u64, n_dark: u64, seed: u64) -> SimConfig {
    SimConfig {
        bright_model: BrightModel::from_detected_rate(0.0096, eta_r0, r_bg, r_loss).unwrap(),
        dark_background: r_bg,
        readout_duration_us: 200.0,
        n_bright_trials: n_bright,
        n_dark_trials: n_dark,
        retention_probability: 1.0,
        prep_error: 0.0,
        seed,
    }
}

fn split(trials: &[TrialRecord]) -> (Vec<&TrialRecord>, Vec<&TrialRecord>) {
    trials.iter().partition(|t| t.prep_state == PrepState::Bright)
}

/// Two-sided exact binomial p-value.
fn binomial_p(k: u64, n: u64, p: f64) -> f64 {
    let b = Binomial::new(p, n).unwrap();
    let lower = b.cdf(k);
    let upper = if k == 0 { 1.0 } else { 1.0 - b.cdf(k - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

#[test]
fn identical_across_thread_counts_and_chunking() {
    let c = SimConfig { retention_probability: 0.97, prep_error: 0.01, ..config(39.4e3, 1.31e3, 1.05e3, 3000, 3000, 5) };
    let a = simulate_dataset_with_threads(&c, 1).unwrap();
    let b = simulate_dataset_with_threads(&c, 4).unwrap();
    assert_eq!(a, b);
    let mut chunked = Vec::new();
    simulate_chunked(&c, 777, |block| {
        chunked.extend_from_slice(block);
        Ok(())
    })
    .unwrap();
    assert_eq!(a, chunked);
    let other = simulate_dataset(&SimConfig { seed: 6, ..c }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn empirical_bright_error_passes_binomial_tests() {
    for (i, (a, l, b)) in [(39.4e3, 1.31e3, 1.05e3), (58.7e3, 4.1e3, 1.13e3), (33.6e3, 3.63e3, 1.12e3)]
        .into_iter()
        .enumerate()
    {
        let c = config(a, l, b, 1_000_000, 0, 40 + i as u64);
        let trials = simulate_dataset(&c).unwrap();
        for (t_us, k) in [(30.0, 1u64), (100.0, 2), (200.0, 1)] {
            let below = trials.iter().filter(|tr| (tr.count_at(t_us) as u64) < k).count() as u64;
            let p = bright_error(t_us * 1e-6, k, &c.bright_model).unwrap();
            let pv = binomial_p(below, trials.len() as u64, p);
            assert!(pv > 0.001, "row {i}, t {t_us}, k {k}: {below} vs p {p}, p-value {pv}");
        }
    }
}

#[test]
fn dark_counts_follow_poisson_tails() {
    let c = config(39.4e3, 1.31e3, 5e3, 0, 200_000, 9);
    let trials = simulate_dataset(&c).unwrap();
    for k in 1..=4u64 {
        let reached = trials.iter().filter(|t| t.count_at(200.0) as u64 >= k).count() as u64;
        let p = dark_error(200e-6, k, 5e3).unwrap();
        assert!(binomial_p(reached, trials.len() as u64, p) > 0.001, "k {k}");
    }
}

#[test]
fn bright_histogram_matches_closed_form() {
    let c = config(39.4e3, 1.31e3, 1.05e3, 200_000, 0, 13);
    let trials = simulate_dataset(&c).unwrap();
    let h = histogram_at(&trials, 200.0, 200.0).unwrap();
    let pmf = CountPmf::bright(200e-6, &c.bright_model).unwrap();
    assert!(chi_square_p(&h.counts_bright, &pmf.probabilities) > 0.001);
}

#[test]
fn empirical_curves_track_the_model() {
    let c = config(39.4e3, 1.31e3, 1.05e3, 3583, 3550, 21);
    let trials = simulate_dataset(&c).unwrap();
    let (bright, dark) = split(&trials);
    let curve = error_curves(bright, dark, &[1, 2], 1.0, 200.0, false).unwrap();
    let mut inside = 0;
    let mut total = 0;
    for s in &curve.series {
        for p in &s.points {
            let model = bright_error(p.time_us * 1e-6, s.n_thresh, &c.bright_model).unwrap();
            let se = (model * (1.0 - model) / curve.n_bright as f64).sqrt().max(1e-12);
            total += 1;
            inside += ((p.eps_bright.value - model).abs() < 4.0 * se) as usize;
        }
    }
    assert!(inside as f64 >= 0.99 * total as f64, "{inside}/{total}");
}

#[test]
fn paper_background_prefers_two_photon_threshold() {
    let c = config(39.4e3, 1.31e3, 1.05e3, 20_000, 20_000, 2);
    let trials = simulate_dataset(&c).unwrap();
    let (bright, dark) = split(&trials);
    let curve = error_curves(bright, dark, &[1, 2, 3], 1.0, 200.0, false).unwrap();
    assert_eq!(optimal_operating_point(&curve).unwrap().n_thresh, 2);
}

#[test]
fn retention_estimate_covers_the_generating_rate() {
    let c = SimConfig { retention_probability: 0.971, ..config(39.4e3, 1.31e3, 1.05e3, 3583, 3550, 17) };
    let trials = simulate_dataset(&c).unwrap();
    let r = retention_rate(&trials).unwrap();
    assert!(r.ci_low <= 0.971 && 0.971 <= r.ci_high, "{r:?}");
}

#[test]
fn bimodal_counts_at_200us() {
    let c = config(39.4e3, 1.31e3, 1.05e3, 3583, 3550, 4);
    let trials = simulate_dataset(&c).unwrap();
    let h = histogram_at(&trials, 200.0, 200.0).unwrap();
    let mode = |v: &[u64]| (0..v.len()).max_by_key(|&i| v[i]).unwrap();
    assert_eq!(mode(&h.counts_dark), 0);
    assert!(mode(&h.counts_bright) >= 5);
}

#[test]
fn post_selection_only_removes_trials() {
    let c = SimConfig { retention_probability: 0.8, ..config(39.4e3, 1.31e3, 1.05e3, 2000, 2000, 8) };
    let trials = simulate_dataset(&c).unwrap();
    let (bright, dark) = split(&trials);
    let raw = error_curves(bright.iter().copied(), dark.iter().copied(), &[1], 2.0, 200.0, false).unwrap();
    let kept = error_curves(bright, dark, &[1], 2.0, 200.0, true).unwrap();
    assert!(kept.n_bright + kept.n_dark <= raw.n_bright + raw.n_dark);
    assert_eq!((raw.n_bright, raw.n_dark), (2000, 2000));
    let p = &raw.series[0].points[49];
    let direct = trials
        .iter()
        .filter(|t| t.prep_state == PrepState::Bright && t.count_at(100.0) < 1)
        .count();
    assert_eq!(p.eps_bright.successes, direct as u64);
}

fn trial_strategy() -> impl Strategy<Value = TrialRecord> {
    (0u64..1000, any::<bool>(), any::<bool>(), prop::collection::vec(0u32..=100_000, 0..30)).prop_map(
        |(id, bright, kept, mut ns)| {
            ns.sort_unstable();
            TrialRecord {
                trial_id: id,
                prep_state: if bright { PrepState::Bright } else { PrepState::Dark },
                timestamps: ns.into_iter().map(|n| n as f64 / 1000.0).collect(),
                retained_before: true,
                retained_after: kept,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_records_are_valid(seed in any::<u64>(), a in 1e3..2e5f64, l in 0.0..5e4f64, b in 0.0..1e4f64, d in 1.0..500.0f64) {
        let c = SimConfig { readout_duration_us: d, prep_error: 0.1, ..config(a, l, b, 20, 20, seed) };
        for t in simulate_dataset(&c).unwrap() {
            prop_assert!(t.validate(Some(d)).is_ok());
            for ts in &t.timestamps {
                prop_assert!(((ts * 1e3).round() - ts * 1e3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cumulative_counts_match_recount(t in trial_strategy(), bins in 1usize..60) {
        let horizon = 100.0;
        let bw = horizon / bins as f64;
        let c = cumulative_counts(&t, bw, horizon).unwrap();
        for (j, &v) in c.iter().enumerate() {
            let edge = j as f64 * bw;
            let brute = t.timestamps.iter().filter(|&&x| x <= edge).count() as u32;
            prop_assert_eq!(v, brute);
        }
    }

    #[test]
    fn curve_invariants(trials in prop::collection::vec(trial_strategy(), 2..40), post in any::<bool>()) {
        let mut trials = trials;
        trials[0].prep_state = PrepState::Bright;
        trials[0].retained_after = true;
        trials[1].prep_state = PrepState::Dark;
        trials[1].retained_after = true;
        let mut acc = CurveAccumulator::new(&[1, 2, 3], 5.0, 100.0, post).unwrap();
        for t in &trials {
            acc.ingest(t).unwrap();
        }
        let curve = acc.finish().unwrap();
        for s in &curve.series {
            for p in &s.points {
                prop_assert_eq!(p.fidelity, 1.0 - (p.eps_bright.value + p.eps_dark.value) / 2.0);
                prop_assert!(p.fidelity_low <= p.fidelity && p.fidelity <= p.fidelity_high);
            }
            for w in s.points.windows(2) {
                prop_assert!(w[1].eps_bright.value <= w[0].eps_bright.value);
                prop_assert!(w[1].eps_dark.value >= w[0].eps_dark.value);
            }
        }
    }
}

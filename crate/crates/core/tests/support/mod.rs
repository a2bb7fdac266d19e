#![allow(dead_code)]

pub mod surd;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Photon count of one bright history, drawn directly from the defining
/// mixture: leak time `tau ~ Exp(r_loss)`, count Poisson with mean
/// `r_initial min(tau, t) + r_final (t - tau)^+`. Rates in 1/s, `t` in s.
pub fn sample_count<R: Rng>(rng: &mut R, t: f64, r_initial: f64, r_final: f64, r_loss: f64) -> u64 {
    let tau = if r_loss > 0.0 { Exp::new(r_loss).unwrap().sample(rng) } else { f64::INFINITY };
    let mean = if tau >= t { r_initial * t } else { r_initial * tau + r_final * (t - tau) };
    if mean == 0.0 {
        return 0;
    }
    Poisson::new(mean).unwrap().sample(rng) as u64
}

/// Whether the history leaked before `t`, with its count.
pub fn sample_history<R: Rng>(rng: &mut R, t: f64, r_initial: f64, r_final: f64, r_loss: f64) -> (bool, u64) {
    let tau = Exp::new(r_loss).unwrap().sample(rng);
    let leaked = tau < t;
    let mean = if leaked { r_initial * tau + r_final * (t - tau) } else { r_initial * t };
    (leaked, if mean == 0.0 { 0 } else { Poisson::new(mean).unwrap().sample(rng) as u64 })
}

/// Pearson chi-square p-value of observed counts against expected
/// probabilities; bins with expected count below 5 are pooled into their
/// neighbours, the upper tail absorbs the remaining mass.
pub fn chi_square_p(observed: &[u64], probabilities: &[f64]) -> f64 {
    let n: u64 = observed.iter().sum();
    let n_f = n as f64;
    let len = observed.len().max(probabilities.len());
    let obs = |i: usize| observed.get(i).copied().unwrap_or(0) as f64;
    let mut exp: Vec<f64> = (0..len).map(|i| probabilities.get(i).copied().unwrap_or(0.0) * n_f).collect();
    let listed: f64 = exp.iter().sum();
    *exp.last_mut().unwrap() += (n_f - listed).max(0.0);

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (i, e) in exp.iter().enumerate() {
        o_acc += obs(i);
        e_acc += e;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += o_acc;
        last.1 += e_acc;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (bins.len() as f64 - 1.0).max(1.0);
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Composite Simpson rule with `panels` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `ln n!` by direct summation.
pub fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Leak-term integrand in its unsimplified form: the explicit sum over the
/// split of `n` photons into `k` before and `n - k` after the transition.
pub fn leak_integrand_split(n: u64, t: f64, ri: f64, rf: f64, rl: f64, tau: f64) -> f64 {
    let a = ri * tau;
    let b = rf * (t - tau);
    let mut s = 0.0;
    for k in 0..=n {
        let ln_pa = if a > 0.0 { -a + k as f64 * a.ln() - ln_factorial(k) } else if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        let m = n - k;
        let ln_pb = if b > 0.0 { -b + m as f64 * b.ln() - ln_factorial(m) } else if m == 0 { 0.0 } else { f64::NEG_INFINITY };
        s += (ln_pa + ln_pb).exp();
    }
    rl * (-rl * tau).exp() * s
}

/// Leak term by Simpson quadrature of the unsimplified integrand.
pub fn p_with_transition_oracle(n: u64, t: f64, ri: f64, rf: f64, rl: f64) -> f64 {
    simpson(|tau| leak_integrand_split(n, t, ri, rf, rl, tau), 0.0, t, 4000)
}

/// Peak resident set size of this process in kB, from /proc.
pub fn vm_hwm_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|v| v.parse().ok())
}

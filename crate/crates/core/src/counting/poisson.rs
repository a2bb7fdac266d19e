//! Poisson probabilities evaluated in log space, with tail sums that never
//! subtract two numbers close to one.

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `ln n! - (n + 1/2) ln n + n - ln(2 pi)/2` for n = 1..=15.
#[allow(clippy::excessive_precision)]
const STIRLING_REMAINDER: [f64; 15] = [
    0.081061466795327258,
    0.041340695955409294,
    0.027677925684998339,
    0.020790672103765093,
    0.016644691189821192,
    0.013876128823070748,
    0.01189670994589177,
    0.010411265261972096,
    0.0092554621827127329,
    0.0083305634333628713,
    0.0075736754879518408,
    0.0069428401072095299,
    0.0064089941880042071,
    0.0059513701127588477,
    0.0055547335519628014,
];

fn stirling_remainder(n: u64) -> f64 {
    if n <= 15 {
        return STIRLING_REMAINDER[n as usize - 1];
    }
    const S: [f64; 5] = [1.0 / 12.0, 1.0 / 360.0, 1.0 / 1260.0, 1.0 / 1680.0, 1.0 / 1188.0];
    let x = n as f64;
    let x2 = x * x;
    let series = match n {
        501.. => S[0] - S[1] / x2,
        81..=500 => S[0] - (S[1] - S[2] / x2) / x2,
        36..=80 => S[0] - (S[1] - (S[2] - S[3] / x2) / x2) / x2,
        _ => S[0] - (S[1] - (S[2] - (S[3] - S[4] / x2) / x2) / x2) / x2,
    };
    series / x
}

/// `x ln(x / m) + m - x`, by its series when `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let v2 = v * v;
        let mut sum = (x - m) * v;
        let mut term = 2.0 * x * v;
        for j in 1..1000 {
            term *= v2;
            let next = sum + term / f64::from(2 * j + 1);
            if next == sum {
                break;
            }
            sum = next;
        }
        sum
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln P(N = n)` for `N ~ Poisson(mean)`. Uses `0^0 = 1`.
///
/// Saddle-point form: the naive `n ln(mean) - mean - ln n!` cancels terms of
/// size `n ln n` and loses absolute accuracy at large `n`.
pub fn ln_pmf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if n == 0 {
        return -mean;
    }
    let x = n as f64;
    -stirling_remainder(n) - deviance(x, mean) - 0.5 * (std::f64::consts::TAU * x).ln()
}

pub fn pmf(n: u64, mean: f64) -> f64 {
    ln_pmf(n, mean).exp()
}

// Relative size below which a further term no longer changes a sum.
const NEGLIGIBLE: f64 = 1e-18;

/// `ln P(N <= n)` summed downward from `n`; accurate when `n < mean`, where
/// the terms shrink monotonically away from `n`.
fn ln_lower_sum(n: u64, mean: f64) -> f64 {
    // Terms relative to P(N = n).
    let mut ratio = 1.0;
    let mut acc = CompensatedSum::new();
    acc.add(ratio);
    let mut k = n;
    while k > 0 {
        ratio *= k as f64 / mean;
        k -= 1;
        acc.add(ratio);
        if ratio <= NEGLIGIBLE * acc.value() && (k as f64) < mean {
            break;
        }
    }
    ln_pmf(n, mean) + acc.value().ln()
}

/// `ln P(N > n)` summed upward from `n + 1`; accurate when `n + 1 >= mean`.
fn ln_upper_sum(n: u64, mean: f64) -> f64 {
    let mut k = n + 1;
    let mut ratio = 1.0;
    let mut acc = CompensatedSum::new();
    acc.add(ratio);
    loop {
        k += 1;
        ratio *= mean / k as f64;
        acc.add(ratio);
        if (ratio <= NEGLIGIBLE * acc.value() && k as f64 > mean) || ratio == 0.0 {
            break;
        }
    }
    ln_pmf(n + 1, mean) + acc.value().ln()
}

/// `ln P(N <= n)`.
pub fn ln_cdf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if (n as f64) < mean {
        ln_lower_sum(n, mean)
    } else {
        (-ln_upper_sum(n, mean).exp()).ln_1p()
    }
}

/// `ln P(N > n)`.
pub fn ln_sf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return f64::NEG_INFINITY;
    }
    if (n as f64) < mean {
        (-ln_lower_sum(n, mean).exp()).ln_1p()
    } else {
        ln_upper_sum(n, mean)
    }
}

/// `P(N <= n)`.
pub fn cdf(n: u64, mean: f64) -> f64 {
    ln_cdf(n, mean).exp()
}

/// `P(N > n)`.
pub fn sf(n: u64, mean: f64) -> f64 {
    ln_sf(n, mean).exp()
}

/// `ln(e^a - e^b)` for `a >= b`.
fn ln_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp_m1()).ln()
}

/// `ln[P(N0 <= n) - P(N1 <= n)]` for `N0 ~ Poisson(mean_lo)`,
/// `N1 ~ Poisson(mean_hi)` with `mean_lo <= mean_hi`. When both cdfs are near
/// one the difference is taken between upper tails instead.
pub fn ln_cdf_difference(n: u64, mean_lo: f64, mean_hi: f64) -> f64 {
    debug_assert!(mean_lo <= mean_hi);
    if (n as f64) >= mean_hi {
        ln_diff_exp(ln_sf(n, mean_hi), ln_sf(n, mean_lo))
    } else {
        ln_diff_exp(ln_cdf(n, mean_lo), ln_cdf(n, mean_hi))
    }
}

//! Exact squared Wigner 3-j and 6-j symbols.
//!
//! Angular momenta are passed doubled (`2j`) so half-integers stay integral.
//! Squares of both symbols are rational, so they are returned as exact
//! fractions. Factorials are held in `i128`, which bounds the arguments to
//! `j` of roughly 15; the hyperfine problems here stay below 4.

use num_rational::Ratio;
use num_traits::{One, Zero};

pub type Q = Ratio<i128>;

fn factorial(n: i64) -> i128 {
    assert!((0..=33).contains(&n), "factorial argument {n} out of range");
    (1..=n as i128).product()
}

/// `(x/2)!` for even `x`.
fn half_factorial(x2: i64) -> i128 {
    debug_assert!(x2 % 2 == 0);
    factorial(x2 / 2)
}

fn triangle(a: i64, b: i64, c: i64) -> bool {
    a >= 0 && b >= 0 && c >= 0 && c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
}

/// Triangle coefficient `Δ(abc)` for doubled arguments.
fn delta(a: i64, b: i64, c: i64) -> Q {
    Q::new(
        half_factorial(a + b - c) * half_factorial(a - b + c) * half_factorial(-a + b + c),
        half_factorial(a + b + c + 2),
    )
}

/// `(j1 j2 j3; m1 m2 m3)^2`, doubled arguments.
pub fn three_j_squared(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> Q {
    if m1 + m2 + m3 != 0 || !triangle(j1, j2, j3) {
        return Q::zero();
    }
    for (j, m) in [(j1, m1), (j2, m2), (j3, m3)] {
        if m.abs() > j || (j + m) % 2 != 0 {
            return Q::zero();
        }
    }
    let mut prefactor = delta(j1, j2, j3);
    for (j, m) in [(j1, m1), (j2, m2), (j3, m3)] {
        prefactor *= Q::from_integer(half_factorial(j + m) * half_factorial(j - m));
    }
    // Racah's single sum; all bounds are in doubled units.
    let k_min = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let k_max = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut sum = Q::zero();
    let mut k = k_min;
    while k <= k_max {
        let denom = half_factorial(k)
            * half_factorial(j1 + j2 - j3 - k)
            * half_factorial(j1 - m1 - k)
            * half_factorial(j2 + m2 - k)
            * half_factorial(j3 - j2 + m1 + k)
            * half_factorial(j3 - j1 - m2 + k);
        let term = Q::new(1, denom);
        if (k / 2) % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        k += 2;
    }
    prefactor * sum * sum
}

/// `{j1 j2 j3; j4 j5 j6}^2`, doubled arguments.
pub fn six_j_squared(j1: i64, j2: i64, j3: i64, j4: i64, j5: i64, j6: i64) -> Q {
    let triads = [(j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3)];
    if !triads.iter().all(|&(a, b, c)| triangle(a, b, c)) {
        return Q::zero();
    }
    let prefactor = triads
        .iter()
        .fold(Q::one(), |acc, &(a, b, c)| acc * delta(a, b, c));
    let sums = triads.map(|(a, b, c)| a + b + c);
    let t_min = sums.into_iter().max().unwrap();
    let t_max = (j1 + j2 + j4 + j5).min(j2 + j3 + j5 + j6).min(j3 + j1 + j6 + j4);
    let mut sum = Q::zero();
    let mut t = t_min;
    while t <= t_max {
        let mut denom = 1i128;
        for s in sums {
            denom *= half_factorial(t - s);
        }
        denom *= half_factorial(j1 + j2 + j4 + j5 - t)
            * half_factorial(j2 + j3 + j5 + j6 - t)
            * half_factorial(j3 + j1 + j6 + j4 - t);
        let term = Q::new(half_factorial(t + 2), denom);
        if (t / 2) % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
        t += 2;
    }
    prefactor * sum * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128, d: i128) -> Q {
        Q::new(n, d)
    }

    #[test]
    fn tabulated_three_j() {
        // (1 1 0; 0 0 0) = -1/sqrt(3)
        assert_eq!(three_j_squared(2, 2, 0, 0, 0, 0), q(1, 3));
        // (1 1 2; 0 0 0) = sqrt(2/15)
        assert_eq!(three_j_squared(2, 2, 4, 0, 0, 0), q(2, 15));
        // (1/2 1/2 1; 1/2 -1/2 0) = 1/sqrt(6)
        assert_eq!(three_j_squared(1, 1, 2, 1, -1, 0), q(1, 6));
        // Parity zero: (1 1 1; 0 0 0)
        assert_eq!(three_j_squared(2, 2, 2, 0, 0, 0), Q::zero());
        // m sum violated, triangle violated
        assert_eq!(three_j_squared(2, 2, 2, 2, 0, 0), Q::zero());
        assert_eq!(three_j_squared(2, 2, 6, 0, 0, 0), Q::zero());
    }

    #[test]
    fn three_j_orthonormality() {
        // sum over m1, m2 of (j1 j2 j3; m1 m2 m3)^2 = 1/(2 j3 + 1)
        for (j1, j2, j3) in [(3, 2, 5), (4, 2, 6), (4, 2, 2), (3, 3, 4)] {
            for m3 in (-j3..=j3).step_by(2) {
                let mut total = Q::zero();
                for m1 in (-j1..=j1).step_by(2) {
                    total += three_j_squared(j1, j2, j3, m1, -m1 - m3, m3);
                }
                assert_eq!(total, q(1, j3 as i128 + 1));
            }
        }
    }

    #[test]
    fn tabulated_six_j() {
        // {1 1 1; 1 1 1} = 1/6
        assert_eq!(six_j_squared(2, 2, 2, 2, 2, 2), q(1, 36));
        // {1/2 1/2 1; 1/2 1/2 0} = 1/2
        assert_eq!(six_j_squared(1, 1, 2, 1, 1, 0), q(1, 4));
        // {1/2 3/2 1; 3 2 3/2}
        assert_eq!(six_j_squared(1, 3, 2, 6, 4, 3), q(1, 20));
    }

    #[test]
    fn six_j_orthogonality() {
        // sum_x (2x+1) {a b x; c d p}^2 = 1/(2p+1)
        let (a, b, c, d, p) = (3, 1, 3, 1, 2);
        let mut total = Q::zero();
        for x in 0..=8 {
            total += Q::from_integer(x as i128 + 1) * six_j_squared(a, b, x, c, d, p);
        }
        assert_eq!(total, q(1, p as i128 + 1));
    }
}

//! Exact arithmetic on sums of square roots, and Clebsch-Gordan vectors built
//! by lowering operators in the uncoupled basis. Shares no code with the
//! library's Racah formulas.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};

pub type Q = Ratio<i128>;

/// `sum_k q_k sqrt(k)` with squarefree `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Surd(BTreeMap<i128, Q>);

fn squarefree_split(n: i128) -> (i128, i128) {
    // n = s^2 * k
    let (mut s, mut k, mut p) = (1i128, n, 2i128);
    while p * p <= k {
        while k % (p * p) == 0 {
            k /= p * p;
            s *= p;
        }
        p += 1;
    }
    (s, k)
}

impl Surd {
    pub fn rational(q: Q) -> Self {
        let mut m = BTreeMap::new();
        if !q.is_zero() {
            m.insert(1, q);
        }
        Surd(m)
    }

    /// `sqrt(q)` for `q >= 0`.
    pub fn sqrt(q: Q) -> Self {
        assert!(!q.is_negative());
        if q.is_zero() {
            return Surd::default();
        }
        let (n, d) = (*q.numer(), *q.denom());
        let (s, k) = squarefree_split(n * d);
        let mut m = BTreeMap::new();
        m.insert(k, Q::new(s, d));
        Surd(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add(&self, other: &Surd) -> Surd {
        let mut m = self.0.clone();
        for (k, v) in &other.0 {
            let e = m.entry(*k).or_insert_with(Q::zero);
            *e += *v;
            if e.is_zero() {
                m.remove(k);
            }
        }
        Surd(m)
    }

    pub fn mul(&self, other: &Surd) -> Surd {
        let mut out = Surd::default();
        for (a, x) in &self.0 {
            for (b, y) in &other.0 {
                let (s, k) = squarefree_split(a * b);
                let mut term = BTreeMap::new();
                term.insert(k, *x * *y * Q::from_integer(s));
                out = out.add(&Surd(term));
            }
        }
        out
    }

    pub fn scale(&self, q: Q) -> Surd {
        if q.is_zero() {
            return Surd::default();
        }
        Surd(self.0.iter().map(|(k, v)| (*k, *v * q)).collect())
    }

    /// Divide by `sqrt(q)`, `q > 0`.
    pub fn div_sqrt(&self, q: Q) -> Surd {
        self.mul(&Surd::sqrt(Q::one() / q))
    }

    /// The value, if it is rational.
    pub fn as_rational(&self) -> Option<Q> {
        match self.0.len() {
            0 => Some(Q::zero()),
            1 => self.0.get(&1).copied(),
            _ => None,
        }
    }
}

/// Vector in the uncoupled basis `|m1, m2>`, doubled projections.
pub type State = BTreeMap<(i64, i64), Surd>;

/// `j(j+1) - m(m + step)` for doubled `j`, `m` and `step = ±1`.
fn ladder_sq(j2: i64, m2: i64, step: i64) -> Q {
    let j = Q::new(j2 as i128, 2);
    let m = Q::new(m2 as i128, 2);
    j * (j + Q::one()) - m * (m + Q::from_integer(step as i128))
}

/// `|J M>` for every `J` in `j1 (x) j2` (all doubled), keyed by `(J, M)`.
pub fn coupled_states(j1: i64, j2: i64) -> BTreeMap<(i64, i64), State> {
    let mut out = BTreeMap::new();
    let mut jj = j1 + j2;
    while jj >= (j1 - j2).abs() {
        // Highest weight: J+ annihilates it. Track squared coefficients and signs.
        let m1_min = (-j1).max(jj - j2);
        let mut coeffs: Vec<(i64, bool, Q)> = vec![(m1_min, true, Q::one())];
        let mut m1 = m1_min + 2;
        while m1 <= j1 && jj - m1 >= -j2 {
            let (prev_m1, prev_sign, prev_sq) = *coeffs.last().unwrap();
            let a1 = ladder_sq(j1, prev_m1, 1);
            let a2 = ladder_sq(j2, jj - m1, 1);
            coeffs.push((m1, !prev_sign, prev_sq * a1 / a2));
            m1 += 2;
        }
        let norm: Q = coeffs.iter().fold(Q::zero(), |a, (_, _, c)| a + *c);
        let mut state = State::new();
        for (m1, sign, sq) in coeffs {
            let v = Surd::sqrt(sq / norm);
            state.insert((m1, jj - m1), if sign { v } else { v.scale(-Q::one()) });
        }
        // Lower to every M.
        let mut mm = jj;
        loop {
            out.insert((jj, mm), state.clone());
            if mm == -jj {
                break;
            }
            let mut next = State::new();
            for ((a, b), v) in &state {
                if *a > -j1 {
                    let t = v.mul(&Surd::sqrt(ladder_sq(j1, *a, -1)));
                    let e = next.entry((a - 2, *b)).or_default();
                    *e = e.add(&t);
                }
                if *b > -j2 {
                    let t = v.mul(&Surd::sqrt(ladder_sq(j2, *b, -1)));
                    let e = next.entry((*a, b - 2)).or_default();
                    *e = e.add(&t);
                }
            }
            let norm = ladder_sq(jj, mm, -1);
            state = next
                .into_iter()
                .filter(|(_, v)| !v.is_zero())
                .map(|(k, v)| (k, v.div_sqrt(norm)))
                .collect();
            mm -= 2;
        }
        jj -= 2;
    }
    out
}

/// Squared absorption amplitude `|F m> -> |F' m'>` with photon `q` on the
/// 87Rb D2 line (I = 3/2, J = 1/2 -> J' = 3/2), unnormalised. Integer
/// arguments, not doubled.
pub struct D2Oracle {
    ground: BTreeMap<(i64, i64), State>,
    excited: BTreeMap<(i64, i64), State>,
    fine: BTreeMap<(i64, i64), State>,
}

impl D2Oracle {
    pub fn new() -> Self {
        Self {
            ground: coupled_states(3, 1),
            excited: coupled_states(3, 3),
            fine: coupled_states(1, 2),
        }
    }

    pub fn amplitude_sq(&self, f: i64, m: i64, fp: i64, mp: i64, q: i64) -> Q {
        let Some(g) = self.ground.get(&(2 * f, 2 * m)) else { return Q::zero() };
        let Some(e) = self.excited.get(&(2 * fp, 2 * mp)) else { return Q::zero() };
        let mut amp = Surd::default();
        for ((mi, mj), cg) in g {
            for ((mi2, mjp), ce) in e {
                if mi2 != mi {
                    continue;
                }
                // <J' mJ' | J mJ; 1 q>
                let Some(fine) = self.fine.get(&(3, *mjp)) else { continue };
                let Some(cf) = fine.get(&(*mj, 2 * q)) else { continue };
                amp = amp.add(&cg.mul(ce).mul(cf));
            }
        }
        amp.mul(&amp).as_rational().expect("squared amplitude is rational")
    }

    /// Relative to the cycling transition `|2,2> -> |3',3'>`, `q = +1`.
    pub fn relative(&self, f: i64, m: i64, fp: i64, mp: i64, q: i64) -> Q {
        self.amplitude_sq(f, m, fp, mp, q) / self.amplitude_sq(2, 2, 3, 3, 1)
    }
}

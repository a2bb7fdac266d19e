//! Relative dipole strengths on the D2 line and spontaneous branching.

use num_traits::{ToPrimitive, Zero};

use super::wigner::{six_j_squared, three_j_squared, Q};
use super::{Manifold, Sublevel, NUCLEAR_SPIN_2, J_EXCITED_2, J_GROUND_2};
use crate::error::{Error, Result};

/// Exact squared matrix element `|<g| d_q |e>|^2`, up to the common reduced
/// element, for absorption from `ground` to `excited` with `m_e = m_g + q`.
fn raw_strength(ground: Sublevel, excited: Sublevel, q: i64) -> Q {
    let f = ground.manifold.f();
    let fp = excited.manifold.f();
    let (f2, fp2) = (2 * f, 2 * fp);
    let three_j = three_j_squared(f2, 2, fp2, 2 * ground.m, 2 * q, -2 * excited.m);
    if three_j.is_zero() {
        return Q::zero();
    }
    let six_j = six_j_squared(J_GROUND_2, J_EXCITED_2, 2, fp2, f2, NUCLEAR_SPIN_2);
    Q::from_integer(((f2 + 1) * (fp2 + 1) * (J_GROUND_2 + 1)) as i128) * three_j * six_j
}

fn check_pair(ground: Sublevel, excited: Sublevel, q: i64) -> Result<()> {
    if !ground.manifold.is_ground() {
        return Err(Error::domain(format!("{ground} is not a ground sublevel")));
    }
    if ground.manifold.is_ground() == excited.manifold.is_ground() {
        return Err(Error::domain(format!("{excited} is not an excited sublevel")));
    }
    if !(-1..=1).contains(&q) {
        return Err(Error::domain(format!("polarization index must be -1, 0 or 1, got {q}")));
    }
    Ok(())
}

/// Strength of `ground -> excited` with polarization `q`, relative to the
/// cycling transition `|2,2> -> |3',3'>`. Zero where selection rules forbid it.
pub fn relative_strength_exact(ground: Sublevel, excited: Sublevel, q: i64) -> Result<Q> {
    check_pair(ground, excited, q)?;
    let cycling = raw_strength(
        Sublevel::new(Manifold::GroundF2, 2)?,
        Sublevel::new(Manifold::ExcitedF3, 3)?,
        1,
    );
    Ok(raw_strength(ground, excited, q) / cycling)
}

pub fn relative_strength(ground: Sublevel, excited: Sublevel, q: i64) -> Result<f64> {
    relative_strength_exact(ground, excited, q).map(to_f64)
}

pub(crate) fn to_f64(x: Q) -> f64 {
    x.to_f64().expect("rational strengths are finite")
}

/// Exact decay probabilities of `excited` into each ground sublevel, summed
/// over the three polarizations, in [`Sublevel::ground_states`] order.
pub fn branching_ratios_exact(excited: Sublevel) -> Result<Vec<(Sublevel, Q)>> {
    if excited.manifold.is_ground() {
        return Err(Error::domain(format!("{excited} is not an excited sublevel")));
    }
    let weights: Vec<(Sublevel, Q)> = Sublevel::ground_states()
        .map(|g| {
            let w = (-1..=1).fold(Q::zero(), |acc, q| acc + raw_strength(g, excited, q));
            (g, w)
        })
        .collect();
    let total = weights.iter().fold(Q::zero(), |acc, (_, w)| acc + *w);
    Ok(weights.into_iter().map(|(g, w)| (g, w / total)).collect())
}

pub fn branching_ratios(excited: Sublevel) -> Result<Vec<(Sublevel, f64)>> {
    Ok(branching_ratios_exact(excited)?
        .into_iter()
        .map(|(g, p)| (g, to_f64(p)))
        .collect())
}

/// The `pi`-driven channels and decay table the rate equations run on.
///
/// Branching is derived from the table's own entries, so zeroing channels
/// with [`StrengthTable::isolate`] yields a closed system.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthTable {
    /// `[ground][excited][q + 1]`, indexed as in `ground_states` and `excited_states`.
    entries: Vec<Vec<[Q; 3]>>,
}

impl StrengthTable {
    pub fn d2() -> Self {
        let entries = Sublevel::ground_states()
            .map(|g| {
                Sublevel::excited_states()
                    .map(|e| [-1, 0, 1].map(|q| raw_strength(g, e, q)))
                    .collect()
            })
            .collect();
        let mut table = Self { entries };
        let cycling = table.entries[Sublevel::ground_index(2, 2)][Sublevel::excited_index(3, 3)][2];
        for row in &mut table.entries {
            for cell in row.iter_mut() {
                for v in cell.iter_mut() {
                    *v /= cycling;
                }
            }
        }
        table
    }

    /// Keep only `ground -> excited` with polarization `q`.
    pub fn isolate(&self, ground: Sublevel, excited: Sublevel, q: i64) -> Result<Self> {
        check_pair(ground, excited, q)?;
        let (gi, ei) = (ground.index(), excited.index());
        let mut out = self.clone();
        for (i, row) in out.entries.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                for (k, v) in cell.iter_mut().enumerate() {
                    if !(i == gi && j == ei && k as i64 == q + 1) {
                        *v = Q::zero();
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn strength(&self, ground: Sublevel, excited: Sublevel, q: i64) -> Q {
        self.entries[ground.index()][excited.index()][(q + 1) as usize]
    }

    /// Decay probabilities of excited sublevel `e` (by index) to each ground index.
    pub fn branching(&self, e: usize) -> [f64; 8] {
        let mut w = [Q::zero(); 8];
        for (g, row) in self.entries.iter().enumerate() {
            w[g] = row[e].iter().fold(Q::zero(), |a, v| a + *v);
        }
        let total = w.iter().fold(Q::zero(), |a, v| a + *v);
        if total.is_zero() {
            return [0.0; 8];
        }
        w.map(|x| to_f64(x / total))
    }
}

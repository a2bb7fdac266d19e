//! Rate-equation model of the ⁸⁷Rb D2 ground sublevels under `pi`-polarized
//! probing in a light-shifting trap.
//!
//! Excited states are adiabatically eliminated: each absorption moves the
//! population of a ground sublevel through an excited sublevel and back to
//! the ground manifold with that sublevel's branching ratios.

pub mod dynamics;
pub mod scheme;
pub mod strengths;
pub mod wigner;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dynamics::{
    evolve_populations, fluorescence_spectrum, population_spectrum, spectrum_summary, Evolution,
    PopulationPoint, SpectrumPoint, SpectrumSummary, StepControl,
};
pub use scheme::{excitation_rate, shifted_detuning, LevelScheme, ProbeSpec, CONSTANTS_ENV};
pub use strengths::{branching_ratios, relative_strength, StrengthTable};

/// Doubled nuclear spin, ground and excited electronic angular momenta.
pub(crate) const NUCLEAR_SPIN_2: i64 = 3;
pub(crate) const J_GROUND_2: i64 = 1;
pub(crate) const J_EXCITED_2: i64 = 3;

pub const N_GROUND: usize = 8;
pub const N_EXCITED: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manifold {
    GroundF1,
    GroundF2,
    ExcitedF0,
    ExcitedF1,
    ExcitedF2,
    ExcitedF3,
}

impl Manifold {
    pub fn f(self) -> i64 {
        match self {
            Manifold::ExcitedF0 => 0,
            Manifold::GroundF1 | Manifold::ExcitedF1 => 1,
            Manifold::GroundF2 | Manifold::ExcitedF2 => 2,
            Manifold::ExcitedF3 => 3,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self, Manifold::GroundF1 | Manifold::GroundF2)
    }

    pub fn excited(f: i64) -> Result<Self> {
        match f {
            0 => Ok(Manifold::ExcitedF0),
            1 => Ok(Manifold::ExcitedF1),
            2 => Ok(Manifold::ExcitedF2),
            3 => Ok(Manifold::ExcitedF3),
            _ => Err(Error::domain(format!("no excited F'={f} manifold"))),
        }
    }

    pub fn ground(f: i64) -> Result<Self> {
        match f {
            1 => Ok(Manifold::GroundF1),
            2 => Ok(Manifold::GroundF2),
            _ => Err(Error::domain(format!("no ground F={f} manifold"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sublevel {
    pub manifold: Manifold,
    pub m: i64,
}

impl Sublevel {
    pub fn new(manifold: Manifold, m: i64) -> Result<Self> {
        if m.abs() > manifold.f() {
            return Err(Error::domain(format!(
                "m_F = {m} outside |m_F| <= {} for {manifold:?}",
                manifold.f()
            )));
        }
        Ok(Self { manifold, m })
    }

    pub fn ground(f: i64, m: i64) -> Result<Self> {
        Self::new(Manifold::ground(f)?, m)
    }

    pub fn excited(f: i64, m: i64) -> Result<Self> {
        Self::new(Manifold::excited(f)?, m)
    }

    /// `|1,-1>, |1,0>, |1,1>, |2,-2>, ..., |2,2>`.
    pub fn ground_states() -> impl Iterator<Item = Sublevel> {
        [Manifold::GroundF1, Manifold::GroundF2].into_iter().flat_map(|mf| {
            (-mf.f()..=mf.f()).map(move |m| Sublevel { manifold: mf, m })
        })
    }

    /// F'=0 through F'=3, each in increasing `m`.
    pub fn excited_states() -> impl Iterator<Item = Sublevel> {
        [
            Manifold::ExcitedF0,
            Manifold::ExcitedF1,
            Manifold::ExcitedF2,
            Manifold::ExcitedF3,
        ]
        .into_iter()
        .flat_map(|mf| (-mf.f()..=mf.f()).map(move |m| Sublevel { manifold: mf, m }))
    }

    pub(crate) fn ground_index(f: i64, m: i64) -> usize {
        if f == 1 { (m + 1) as usize } else { (m + 5) as usize }
    }

    pub(crate) fn excited_index(f: i64, m: i64) -> usize {
        (f * f + f + m) as usize
    }

    /// Position within `ground_states` or `excited_states`.
    pub fn index(self) -> usize {
        let f = self.manifold.f();
        if self.manifold.is_ground() {
            Self::ground_index(f, self.m)
        } else {
            Self::excited_index(f, self.m)
        }
    }
}

impl fmt::Display for Sublevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.manifold.is_ground() {
            write!(f, "|{},{}>", self.manifold.f(), self.m)
        } else {
            write!(f, "|{}',{}>", self.manifold.f(), self.m)
        }
    }
}

/// Ground-sublevel occupation probabilities in `Sublevel::ground_states` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector(pub [f64; N_GROUND]);

impl PopulationVector {
    pub fn new(p: [f64; N_GROUND]) -> Result<Self> {
        let v = Self(p);
        v.validate(1e-12)?;
        Ok(v)
    }

    /// Equal weight on the five F=2 sublevels.
    pub fn uniform_f2() -> Self {
        let mut p = [0.0; N_GROUND];
        p[3..].fill(0.2);
        Self(p)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.0.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::domain("populations must be finite and non-negative"));
        }
        let total = self.total();
        if (total - 1.0).abs() > tol {
            return Err(Error::domain(format!("populations sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn get(&self, s: Sublevel) -> f64 {
        assert!(s.manifold.is_ground(), "{s} is not a ground sublevel");
        self.0[s.index()]
    }

    pub fn f1_total(&self) -> f64 {
        self.0[..3].iter().sum()
    }

    pub fn f2_total(&self) -> f64 {
        self.0[3..].iter().sum()
    }
}

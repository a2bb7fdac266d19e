//! Level energies, light shifts and the probe.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::strengths::relative_strength;
use super::Sublevel;
use crate::error::{Error, Result};
use crate::io::kv::{Dimension, KvFile};

/// Environment variable naming a constants file that replaces the built-in one.
pub const CONSTANTS_ENV: &str = "READOUT_CONSTANTS";

const BUILTIN_CONSTANTS: &str = include_str!("../../data/rb87_d2.constants");
const CONSTANTS_VERSION: u32 = 1;

/// Energies relevant to the probe, all in MHz (not angular).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    /// Natural linewidth `Γ/2π`.
    pub linewidth: f64,
    pub ground_hyperfine_splitting: f64,
    /// Offset of each excited F' manifold from F'=3, indexed by F'.
    pub excited_offsets: [f64; 4],
    /// Light shift common to all ground sublevels.
    pub stark_ground: f64,
    /// Light shift of excited sublevels, `[F'][|m_F|]`.
    pub stark_excited: [[f64; 4]; 4],
}

impl Default for LevelScheme {
    fn default() -> Self {
        let mut kv = KvFile::parse(BUILTIN_CONSTANTS, Path::new("<built-in constants>"))
            .expect("built-in constants parse");
        let scheme = Self::empty()
            .apply(&mut kv, "")
            .expect("built-in constants are complete");
        kv.finish().expect("built-in constants have no stray keys");
        scheme
    }
}

impl LevelScheme {
    fn empty() -> Self {
        Self {
            linewidth: f64::NAN,
            ground_hyperfine_splitting: f64::NAN,
            excited_offsets: [f64::NAN, f64::NAN, f64::NAN, 0.0],
            stark_ground: 0.0,
            stark_excited: [[0.0; 4]; 4],
        }
    }

    /// Overwrite fields from `prefix`-scoped keys present in `kv`.
    pub fn apply(mut self, kv: &mut KvFile, prefix: &str) -> Result<Self> {
        let mhz = |kv: &mut KvFile, key: &str| kv.take_quantity(&format!("{prefix}{key}"), Dimension::Frequency);
        if let Some(v) = kv.take_parsed::<u32>(&format!("{prefix}constants.version"))? {
            if v != CONSTANTS_VERSION {
                return Err(Error::Config(format!(
                    "{}: constants version {v} is not supported (expected {CONSTANTS_VERSION})",
                    kv.path().display()
                )));
            }
        }
        if let Some(v) = mhz(kv, "linewidth")? {
            self.linewidth = v;
        }
        if let Some(v) = mhz(kv, "hyperfine.ground")? {
            self.ground_hyperfine_splitting = v;
        }
        for f in 0..3 {
            if let Some(v) = mhz(kv, &format!("hyperfine.excited.F{f}"))? {
                self.excited_offsets[f] = v;
            }
        }
        if let Some(v) = mhz(kv, "stark.ground")? {
            self.stark_ground = v;
        }
        for f in 0..4 {
            for m in 0..=f {
                if let Some(v) = mhz(kv, &format!("stark.F{f}.m{m}"))? {
                    self.stark_excited[f][m] = v;
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// A complete constants file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KvFile::read(path)?;
        let scheme = Self::empty().apply(&mut kv, "")?;
        kv.finish()?;
        Ok(scheme)
    }

    /// The file named by [`CONSTANTS_ENV`] if set, otherwise the built-in constants.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONSTANTS_ENV) {
            Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.linewidth, self.ground_hyperfine_splitting, self.stark_ground]
            .into_iter()
            .chain(self.excited_offsets)
            .chain(self.stark_excited.iter().flatten().copied());
        for v in all {
            if !v.is_finite() {
                return Err(Error::Config("level scheme has a missing or non-finite constant".into()));
            }
        }
        if self.linewidth <= 0.0 {
            return Err(Error::Config(format!("linewidth must be positive, got {} MHz", self.linewidth)));
        }
        Ok(())
    }

    /// Decay rate `Γ` in 1/s.
    pub fn gamma(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.linewidth * 1e6
    }

    pub fn stark_shift(&self, s: Sublevel) -> f64 {
        if s.manifold.is_ground() {
            self.stark_ground
        } else {
            self.stark_excited[s.manifold.f() as usize][s.m.unsigned_abs() as usize]
        }
    }
}

/// A `pi`-polarized probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// From the free-atom F=2 -> F'=3 resonance, MHz.
    pub detuning: f64,
    /// On-resonance saturation parameter of the cycling transition.
    pub saturation: f64,
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.detuning.is_finite() {
            return Err(Error::domain("probe detuning must be finite"));
        }
        if !(self.saturation.is_finite() && self.saturation >= 0.0) {
            return Err(Error::domain(format!(
                "saturation parameter must be non-negative, got {}",
                self.saturation
            )));
        }
        Ok(())
    }
}

fn check_allowed(ground: Sublevel, excited: Sublevel) -> Result<()> {
    if !ground.manifold.is_ground() || excited.manifold.is_ground() {
        return Err(Error::domain(format!("{ground} -> {excited} is not a ground -> excited pair")));
    }
    if (excited.manifold.f() - ground.manifold.f()).abs() > 1 || (excited.m - ground.m).abs() > 1 {
        return Err(Error::domain(format!("{ground} -> {excited} is not dipole allowed")));
    }
    Ok(())
}

/// Probe detuning from the light-shifted `ground -> excited` resonance, MHz.
pub fn shifted_detuning(ground: Sublevel, excited: Sublevel, probe: &ProbeSpec, scheme: &LevelScheme) -> Result<f64> {
    check_allowed(ground, excited)?;
    let mut delta = probe.detuning
        - (scheme.stark_shift(excited) - scheme.stark_shift(ground))
        - scheme.excited_offsets[excited.manifold.f() as usize];
    if ground.manifold.f() == 1 {
        delta -= scheme.ground_hyperfine_splitting;
    }
    Ok(delta)
}

/// Saturated scattering rate `(Γ/2) s S / (1 + s + (2Δ/Γ)^2)` in 1/s for one channel.
pub fn excitation_rate(ground: Sublevel, excited: Sublevel, probe: &ProbeSpec, scheme: &LevelScheme) -> Result<f64> {
    let delta = shifted_detuning(ground, excited, probe, scheme)?;
    probe.validate()?;
    if excited.m != ground.m {
        return Ok(0.0);
    }
    let strength = relative_strength(ground, excited, 0)?;
    Ok(channel_rate(strength, delta, probe.saturation, scheme))
}

pub(crate) fn channel_rate(strength: f64, delta_mhz: f64, s: f64, scheme: &LevelScheme) -> f64 {
    let x = 2.0 * delta_mhz / scheme.linewidth;
    0.5 * scheme.gamma() * s * strength / (1.0 + s + x * x)
}

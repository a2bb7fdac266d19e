//! Ground-population evolution and probe scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scheme::{channel_rate, shifted_detuning, LevelScheme, ProbeSpec};
use super::strengths::{to_f64, StrengthTable};
use super::{PopulationVector, Sublevel, N_EXCITED, N_GROUND};
use crate::error::{Error, Result};

/// Populations, expected photons and F=2 -> F=1 transfer through F'=0..3.
const STATE_LEN: usize = N_GROUND + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    /// Absolute tolerance on each population per step.
    pub atol: f64,
    pub initial_step_us: f64,
    pub min_step_us: f64,
    pub max_steps: usize,
    /// Keep every accepted step in the trajectory.
    pub record: bool,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            initial_step_us: 1e-3,
            min_step_us: 1e-9,
            max_steps: 5_000_000,
            record: true,
        }
    }
}

/// Linear generator `dy/dt = M y`, rates in 1/µs.
struct Generator {
    m: [[f64; N_GROUND]; STATE_LEN],
}

impl Generator {
    fn new(probe: &ProbeSpec, scheme: &LevelScheme, table: &StrengthTable) -> Result<Self> {
        probe.validate()?;
        scheme.validate()?;
        let excited: Vec<Sublevel> = Sublevel::excited_states().collect();
        let branching: Vec<[f64; N_GROUND]> = (0..N_EXCITED).map(|e| table.branching(e)).collect();
        let mut m = [[0.0; N_GROUND]; STATE_LEN];
        for g in Sublevel::ground_states() {
            let gi = g.index();
            for ex in &excited {
                if ex.m != g.m || (ex.manifold.f() - g.manifold.f()).abs() > 1 {
                    continue;
                }
                let strength = to_f64(table.strength(g, *ex, 0));
                if strength == 0.0 {
                    continue;
                }
                let delta = shifted_detuning(g, *ex, probe, scheme)?;
                let rate = channel_rate(strength, delta, probe.saturation, scheme) * 1e-6;
                let b = &branching[ex.index()];
                m[gi][gi] -= rate;
                for (gj, &p) in b.iter().enumerate() {
                    m[gj][gi] += rate * p;
                }
                m[N_GROUND][gi] += rate;
                if g.manifold.f() == 2 {
                    let to_f1: f64 = b[..3].iter().sum();
                    m[N_GROUND + 1 + ex.manifold.f() as usize][gi] += rate * to_f1;
                }
            }
        }
        Ok(Self { m })
    }

    fn apply(&self, y: &[f64; STATE_LEN]) -> [f64; STATE_LEN] {
        let mut out = [0.0; STATE_LEN];
        for (o, row) in out.iter_mut().zip(&self.m) {
            *o = row.iter().zip(&y[..N_GROUND]).map(|(a, b)| a * b).sum();
        }
        out
    }

    fn rk4(&self, y: &[f64; STATE_LEN], h: f64) -> [f64; STATE_LEN] {
        let add = |a: &[f64; STATE_LEN], k: &[f64; STATE_LEN], s: f64| {
            let mut out = *a;
            for (o, v) in out.iter_mut().zip(k) {
                *o += s * v;
            }
            out
        };
        let k1 = self.apply(y);
        let k2 = self.apply(&add(y, &k1, h / 2.0));
        let k3 = self.apply(&add(y, &k2, h / 2.0));
        let k4 = self.apply(&add(y, &k3, h));
        let mut out = *y;
        for i in 0..STATE_LEN {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub times_us: Vec<f64>,
    pub trajectory: Vec<PopulationVector>,
    pub final_populations: PopulationVector,
    /// Expected number of scattered photons.
    pub photons: f64,
    /// Probability moved from F=2 to F=1 by decays from F'=0..3.
    pub orp_via: [f64; 4],
    pub steps: usize,
}

/// Adaptive RK4 with step doubling on the eliminated ground-state equations.
pub fn evolve_with(
    initial: &PopulationVector,
    probe: &ProbeSpec,
    scheme: &LevelScheme,
    table: &StrengthTable,
    duration_us: f64,
    control: &StepControl,
) -> Result<Evolution> {
    initial.validate(1e-12)?;
    if !(duration_us.is_finite() && duration_us >= 0.0) {
        return Err(Error::domain(format!("duration must be non-negative, got {duration_us} us")));
    }
    let generator = Generator::new(probe, scheme, table)?;
    let mut y = [0.0; STATE_LEN];
    y[..N_GROUND].copy_from_slice(&initial.0);

    let mut t = 0.0;
    let mut h = control.initial_step_us.min(duration_us);
    let mut times = vec![0.0];
    let mut trajectory = vec![*initial];
    let mut steps = 0;
    while t < duration_us {
        if steps >= control.max_steps {
            return Err(Error::Numeric {
                message: format!("population integration exceeded {} steps at t = {t} us", control.max_steps),
                achieved: t / duration_us,
            });
        }
        let h_try = h.min(duration_us - t);
        let full = generator.rk4(&y, h_try);
        let half = generator.rk4(&generator.rk4(&y, h_try / 2.0), h_try / 2.0);
        let err = (0..N_GROUND)
            .map(|i| (half[i] - full[i]).abs() / 15.0)
            .fold(0.0, f64::max);
        if err > control.atol && h_try > control.min_step_us {
            h = (h_try * (0.9 * (control.atol / err).powf(0.2)).max(0.2)).max(control.min_step_us);
            continue;
        }
        if err > control.atol {
            return Err(Error::Numeric {
                message: format!("step size fell below {} us at t = {t} us", control.min_step_us),
                achieved: err,
            });
        }
        y = half;
        let total: f64 = y[..N_GROUND].iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric {
                message: format!("population drifted to {total} at t = {t} us"),
                achieved: (total - 1.0).abs(),
            });
        }
        for p in &mut y[..N_GROUND] {
            *p = p.max(0.0) / total;
        }
        t = if duration_us - t - h_try <= 1e-12 * duration_us { duration_us } else { t + h_try };
        steps += 1;
        if control.record {
            times.push(t);
            trajectory.push(populations(&y));
        }
        let grow = if err > 0.0 { 0.9 * (control.atol / err).powf(0.2) } else { 4.0 };
        h = h_try * grow.clamp(0.2, 4.0);
    }
    let final_populations = populations(&y);
    if !control.record {
        times.push(t);
        trajectory.push(final_populations);
    }
    Ok(Evolution {
        times_us: times,
        trajectory,
        final_populations,
        photons: y[N_GROUND],
        orp_via: [y[N_GROUND + 1], y[N_GROUND + 2], y[N_GROUND + 3], y[N_GROUND + 4]],
        steps,
    })
}

fn populations(y: &[f64; STATE_LEN]) -> PopulationVector {
    let mut p = [0.0; N_GROUND];
    p.copy_from_slice(&y[..N_GROUND]);
    PopulationVector(p)
}

/// [`evolve_with`] on the full D2 table with default step control.
pub fn evolve_populations(
    initial: &PopulationVector,
    probe: &ProbeSpec,
    scheme: &LevelScheme,
    duration_us: f64,
) -> Result<Evolution> {
    evolve_with(initial, probe, scheme, &StrengthTable::d2(), duration_us, &StepControl::default())
}

/// Everything a scan holds fixed besides the probe detuning.
#[derive(Debug, Clone)]
pub struct ScanSetup {
    pub scheme: LevelScheme,
    pub table: StrengthTable,
    pub initial: PopulationVector,
    pub duration_us: f64,
    pub control: StepControl,
}

impl ScanSetup {
    pub fn new(scheme: LevelScheme) -> Self {
        Self {
            scheme,
            table: StrengthTable::d2(),
            initial: PopulationVector::uniform_f2(),
            duration_us: 200.0,
            control: StepControl {
                record: false,
                ..StepControl::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub detuning: f64,
    /// Photons per second averaged over the pulse.
    pub scattering_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPoint {
    pub detuning: f64,
    pub populations: PopulationVector,
    pub orp_via: [f64; 4],
}

fn scan<T: Send>(
    detunings: &[f64],
    probe: &ProbeSpec,
    setup: &ScanSetup,
    f: impl Fn(f64, Evolution) -> T + Sync,
) -> Result<Vec<T>> {
    if let Some(d) = detunings.iter().find(|d| !d.is_finite()) {
        return Err(Error::domain(format!("detuning {d} is not finite")));
    }
    detunings
        .par_iter()
        .map(|&d| {
            let p = ProbeSpec { detuning: d, ..*probe };
            let ev = evolve_with(&setup.initial, &p, &setup.scheme, &setup.table, setup.duration_us, &setup.control)?;
            Ok(f(d, ev))
        })
        .collect()
}

/// Mean scattering rate over the pulse at each probe detuning (MHz).
pub fn fluorescence_spectrum(detunings: &[f64], probe: &ProbeSpec, setup: &ScanSetup) -> Result<Vec<SpectrumPoint>> {
    let duration_s = setup.duration_us * 1e-6;
    scan(detunings, probe, setup, |d, ev| SpectrumPoint {
        detuning: d,
        scattering_rate: if duration_s > 0.0 { ev.photons / duration_s } else { 0.0 },
    })
}

/// End-of-pulse ground populations at each probe detuning (MHz).
pub fn population_spectrum(detunings: &[f64], probe: &ProbeSpec, setup: &ScanSetup) -> Result<Vec<PopulationPoint>> {
    scan(detunings, probe, setup, |d, ev| PopulationPoint {
        detuning: d,
        populations: ev.final_populations,
        orp_via: ev.orp_via,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub peak_detuning: f64,
    pub peak_rate: f64,
    pub fwhm: f64,
}

/// Peak by a parabola through the highest sample and its neighbours; width
/// from linearly interpolated half-maximum crossings.
pub fn spectrum_summary(points: &[SpectrumPoint]) -> Result<SpectrumSummary> {
    if points.len() < 3 {
        return Err(Error::domain("spectrum needs at least 3 points"));
    }
    if points.windows(2).any(|w| w[1].detuning <= w[0].detuning) {
        return Err(Error::domain("spectrum detunings must increase"));
    }
    let i = (0..points.len())
        .max_by(|&a, &b| points[a].scattering_rate.total_cmp(&points[b].scattering_rate))
        .unwrap();
    let (mut x, mut ymax) = (points[i].detuning, points[i].scattering_rate);
    if i > 0 && i + 1 < points.len() {
        let (x0, x1, x2) = (points[i - 1].detuning, points[i].detuning, points[i + 1].detuning);
        let (y0, y1, y2) = (
            points[i - 1].scattering_rate,
            points[i].scattering_rate,
            points[i + 1].scattering_rate,
        );
        let d01 = (y1 - y0) / (x1 - x0);
        let d12 = (y2 - y1) / (x2 - x1);
        let a = (d12 - d01) / (x2 - x0);
        if a < 0.0 {
            let b = d01 - a * (x0 + x1);
            x = -b / (2.0 * a);
            ymax = y1 + (x - x1) * (d01 + a * (x - x0));
        }
    }
    let half = ymax / 2.0;
    let cross = |range: &mut dyn Iterator<Item = usize>, step: isize| -> Option<f64> {
        for j in range {
            let k = (j as isize + step) as usize;
            let (a, b) = (&points[j], &points[k]);
            if b.scattering_rate < half {
                let frac = (a.scattering_rate - half) / (a.scattering_rate - b.scattering_rate);
                return Some(a.detuning + frac * (b.detuning - a.detuning));
            }
        }
        None
    };
    let left = cross(&mut (1..=i).rev(), -1);
    let right = cross(&mut (i..points.len() - 1), 1);
    match (left, right) {
        (Some(l), Some(r)) => Ok(SpectrumSummary {
            peak_detuning: x,
            peak_rate: ymax,
            fwhm: r - l,
        }),
        _ => Err(Error::Analysis("half-maximum is not crossed on both sides of the peak".into())),
    }
}

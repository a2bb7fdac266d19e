//! Photon-count distributions for an emitter that may leave its initial
//! scattering state once, irreversibly, during the counting window.
//!
//! Rates are in counts per second and durations in seconds throughout this
//! module. The no-transition Poisson term is written with the signature
//! `(n, t, rate)`; its mean is always `rate * t`.

pub mod poisson;
pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use poisson::CompensatedSum;
use quadrature::Tolerance;

/// Tail mass allowed to fall beyond the truncation of a [`CountPmf`].
pub const TAIL_TOL: f64 = 1e-12;

/// Relative tolerance of the transition-time integral.
pub const QUADRATURE_RTOL: f64 = 1e-10;

fn check_rate(name: &str, r: f64) -> Result<()> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::domain(format!("{name} must be finite and non-negative, got {r}")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::domain(format!("time must be finite and non-negative, got {t}")));
    }
    Ok(())
}

/// Scattering rate before and after the transition, and the transition rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub r_initial: f64,
    pub r_final: f64,
    pub r_loss: f64,
}

impl RateSet {
    pub fn new(r_initial: f64, r_final: f64, r_loss: f64) -> Result<Self> {
        let rates = Self {
            r_initial,
            r_final,
            r_loss,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("r_initial", self.r_initial)?;
        check_rate("r_final", self.r_final)?;
        check_rate("r_loss", self.r_loss)
    }

    fn dominant(&self) -> f64 {
        self.r_initial.max(self.r_final)
    }
}

/// A bright-prepared atom: detected fluorescence `eta * r0` on top of the
/// background `r_bg`, with leakage to the dark state at `r_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightModel {
    pub eta: f64,
    pub r0: f64,
    pub r_bg: f64,
    pub r_loss: f64,
}

impl BrightModel {
    pub fn new(eta: f64, r0: f64, r_bg: f64, r_loss: f64) -> Result<Self> {
        let model = Self {
            eta,
            r0,
            r_bg,
            r_loss,
        };
        model.validate()?;
        Ok(model)
    }

    /// Build from the detected atomic rate `eta * r0`, which is what a fit
    /// constrains.
    pub fn from_detected_rate(eta: f64, eta_r0: f64, r_bg: f64, r_loss: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::domain(format!("eta must lie in (0, 1], got {eta}")));
        }
        Self::new(eta, eta_r0 / eta, r_bg, r_loss)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::domain(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        check_rate("r0", self.r0)?;
        check_rate("r_bg", self.r_bg)?;
        check_rate("r_loss", self.r_loss)
    }

    pub fn detected_rate(&self) -> f64 {
        self.eta * self.r0
    }

    pub fn rate_set(&self) -> RateSet {
        RateSet {
            r_initial: self.detected_rate() + self.r_bg,
            r_final: self.r_bg,
            r_loss: self.r_loss,
        }
    }
}

/// `e^{-rt} (rt)^n / n!`.
pub fn p_no_transition(n: u64, t: f64, r: f64) -> Result<f64> {
    check_time(t)?;
    check_rate("rate", r)?;
    Ok(poisson::pmf(n, r * t))
}

/// Probability of `n` counts in `[0, t]` for histories in which the
/// transition happens inside the window.
///
/// The transition time `tau` has density `r_loss e^{-r_loss tau}`; given
/// `tau`, the count is Poisson with mean `r_initial tau + r_final (t - tau)`.
/// Summing the split of `n` into `k` early and `n - k` late photons under the
/// integral collapses to that single Poisson term by the binomial theorem, so
/// the integrand costs O(1) for every `n`.
pub fn p_with_transition(n: u64, t: f64, rates: &RateSet) -> Result<f64> {
    check_time(t)?;
    rates.validate()?;
    if rates.r_loss == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let RateSet {
        r_initial,
        r_final,
        r_loss,
    } = *rates;
    let integrand = |tau: f64| {
        let mean = r_initial * tau + r_final * (t - tau);
        (r_loss.ln() - r_loss * tau + poisson::ln_pmf(n, mean)).exp()
    };

    // The Poisson factor peaks where its mean equals n. Geometrically spaced
    // breakpoints around the peak keep every subinterval comparable in length
    // to its distance from it, so no tail mass falls between nodes.
    let mut breaks = Vec::new();
    let slope = r_initial - r_final;
    if slope != 0.0 {
        let nf = n as f64;
        let sigma = (nf + 1.0).sqrt();
        breaks.push((nf - r_final * t) / slope);
        for k in 0..8 {
            let offset = sigma * f64::from(1u32 << k);
            breaks.push((nf - offset - r_final * t) / slope);
            breaks.push((nf + offset - r_final * t) / slope);
        }
    }
    let tol = Tolerance {
        relative: QUADRATURE_RTOL,
        ..Tolerance::default()
    };
    let est = quadrature::integrate(integrand, 0.0, t, &breaks, tol)?;
    Ok(est.value.clamp(0.0, 1.0))
}

/// Total count probability: no-transition term plus transition term.
pub fn p_total(n: u64, t: f64, rates: &RateSet) -> Result<f64> {
    rates.validate()?;
    let stay = (-rates.r_loss * t).exp() * p_no_transition(n, t, rates.r_initial)?;
    if rates.r_loss == 0.0 {
        return Ok(stay);
    }
    Ok(stay + p_with_transition(n, t, rates)?)
}

/// Closed-form count distribution of a bright-prepared atom.
///
/// With `a = eta r0`, `b = r_bg`, `l = r_loss`, `c = (a + l) / a`, the
/// transition part is
/// `l/(a+l) (a/(a+l))^n e^{-bt} [S(n; c b t) - e^{-(a+l)t} S(n; c (a+b) t)]`
/// with `S(n; x) = sum_{k<=n} x^k / k!`. Writing `S(n; x) = e^x F(n; x)`,
/// where `F` is the Poisson cdf, the bracket becomes
/// `e^{cbt} [F(n; cbt) - F(n; c(a+b)t)]`, evaluated without cancellation.
pub fn p_bright_closed(n: u64, t: f64, model: &BrightModel) -> Result<f64> {
    check_time(t)?;
    model.validate()?;
    let a = model.detected_rate();
    let b = model.r_bg;
    let l = model.r_loss;
    if l == 0.0 {
        return Ok(poisson::pmf(n, (a + b) * t));
    }
    if a == 0.0 {
        return Err(Error::DegenerateParameters(
            "eta*r0 = 0 with r_loss > 0: the ratio (eta*r0 + r_loss)/(eta*r0) diverges".into(),
        ));
    }
    let stay = (-l * t + poisson::ln_pmf(n, (a + b) * t)).exp();

    let c = (a + l) / a;
    let x0 = c * b * t;
    let x1 = c * (a + b) * t;
    let ln_diff = poisson::ln_cdf_difference(n, x0, x1);
    let ln_prefactor =
        (l / (a + l)).ln() + n as f64 * (a / (a + l)).ln() + (l / a) * b * t;
    let leak = (ln_prefactor + ln_diff).exp();
    Ok((stay + leak).clamp(0.0, 1.0))
}

/// Probability that a bright-prepared atom yields fewer than `n_thresh` counts.
pub fn bright_error(t: f64, n_thresh: u64, model: &BrightModel) -> Result<f64> {
    if n_thresh == 0 {
        return Err(Error::domain(
            "n_thresh must be at least 1; a zero threshold declares every trial bright",
        ));
    }
    let mut acc = CompensatedSum::new();
    for k in 0..n_thresh {
        acc.add(p_bright_closed(k, t, model)?);
    }
    Ok(acc.value().clamp(0.0, 1.0))
}

/// Probability that background alone yields at least `n_thresh` counts.
pub fn dark_error(t: f64, n_thresh: u64, r_bg: f64) -> Result<f64> {
    check_time(t)?;
    check_rate("r_bg", r_bg)?;
    if n_thresh == 0 {
        return Err(Error::domain("n_thresh must be at least 1"));
    }
    Ok(poisson::sf(n_thresh - 1, r_bg * t))
}

/// `1 - (eps_bright + eps_dark) / 2`.
pub fn model_fidelity(t: f64, n_thresh: u64, model: &BrightModel, r_bg_dark: f64) -> Result<f64> {
    let eb = bright_error(t, n_thresh, model)?;
    let ed = dark_error(t, n_thresh, r_bg_dark)?;
    Ok(1.0 - 0.5 * (eb + ed))
}

/// Best point of a fidelity scan over `times`; ties go to the earlier time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityPeak {
    pub time: f64,
    pub fidelity: f64,
}

pub fn scan_model_fidelity(
    times: &[f64],
    n_thresh: u64,
    model: &BrightModel,
    r_bg_dark: f64,
) -> Result<FidelityPeak> {
    let mut best: Option<FidelityPeak> = None;
    for &t in times {
        let f = model_fidelity(t, n_thresh, model, r_bg_dark)?;
        if best.is_none_or(|b| f > b.fidelity) {
            best = Some(FidelityPeak { time: t, fidelity: f });
        }
    }
    best.ok_or_else(|| Error::domain("empty time grid"))
}

/// Truncated count distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPmf {
    pub probabilities: Vec<f64>,
    pub duration: f64,
    pub tail_tol: f64,
}

/// Smallest `n` with `P(N > n) < TAIL_TOL` for a Poisson variable of the given mean.
pub fn truncation(mean: f64) -> u64 {
    if mean == 0.0 {
        return 0;
    }
    let step = ((mean.sqrt() / 8.0) as u64).max(1);
    let mut n = mean.floor() as u64;
    while poisson::sf(n, mean) >= TAIL_TOL {
        n += step;
    }
    while n > 0 && poisson::sf(n - 1, mean) < TAIL_TOL {
        n -= 1;
    }
    n
}

impl CountPmf {
    /// Distribution of [`p_total`], truncated where the Poisson tail of the
    /// larger of the two scattering rates drops below [`TAIL_TOL`].
    pub fn total(t: f64, rates: &RateSet) -> Result<Self> {
        rates.validate()?;
        let n_max = truncation(rates.dominant() * t);
        let probabilities = (0..=n_max)
            .map(|n| p_total(n, t, rates))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            probabilities,
            duration: t,
            tail_tol: TAIL_TOL,
        })
    }

    /// Distribution of [`p_bright_closed`].
    pub fn bright(t: f64, model: &BrightModel) -> Result<Self> {
        model.validate()?;
        let n_max = truncation(model.rate_set().dominant() * t);
        let probabilities = (0..=n_max)
            .map(|n| p_bright_closed(n, t, model))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            probabilities,
            duration: t,
            tail_tol: TAIL_TOL,
        })
    }

    pub fn n_max(&self) -> u64 {
        self.probabilities.len() as u64 - 1
    }

    pub fn total_mass(&self) -> f64 {
        self.probabilities.iter().copied().collect::<CompensatedSum>().value()
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .collect::<CompensatedSum>()
            .value()
    }
}

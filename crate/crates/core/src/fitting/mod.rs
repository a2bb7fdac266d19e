//! Estimation of the detected scattering rate `eta*r0` and the leakage rate
//! `r_loss` from a measured bright-state error curve, with the background
//! rate and efficiency held at their measured values.
//!
//! The objective is a binomially weighted least-squares distance between the
//! observed error fractions and the closed-form model. Neighbouring bins share
//! trials, so standard errors come from a parametric bootstrap over
//! resimulated datasets rather than from the curvature of the objective.

pub mod simplex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{bright_error_curve, ErrorCurve};
use crate::counting::{bright_error, BrightModel};
use crate::error::{Error, Result};
use crate::sim::{bright_timestamps, trial_stream, PrepState, TrialRecord};
use simplex::{minimize, SimplexOptions};

/// Regulariser of the binomial weights.
pub const WEIGHT_EPSILON: f64 = 1e-9;
pub const MIN_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parameterization {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncertaintyMethod {
    ParametricBootstrap { replicates: usize },
    LocalQuadratic,
    Given,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub eta: f64,
    /// Starting `(eta*r0, r_loss)` in counts/s; estimated from the data if absent.
    pub initial_guess: Option<[f64; 2]>,
    pub parameterization: Parameterization,
    pub simplex: SimplexOptions,
    /// Resimulated datasets used for standard errors; 0 selects the
    /// local-quadratic covariance instead.
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            eta: 0.0096,
            initial_guess: None,
            parameterization: Parameterization::Log,
            simplex: SimplexOptions::default(),
            bootstrap_replicates: 200,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub label: String,
    /// Detected atomic scattering rate, counts/s.
    pub eta_r0: ParamEstimate,
    /// Leakage rate, 1/s.
    pub r_loss: ParamEstimate,
    pub r_bg: f64,
    pub eta: f64,
    pub n_thresh: u64,
    pub covariance: [[f64; 2]; 2],
    pub uncertainty: UncertaintyMethod,
    pub objective_value: f64,
    pub initial_objective: f64,
    pub evaluations: usize,
    pub seed: u64,
    /// The fitted data; empty for results built from quoted values.
    pub data: Option<ErrorCurve>,
}

impl FitResult {
    /// A result carrying externally quoted values rather than a fit.
    pub fn from_values(
        label: impl Into<String>,
        eta_r0: ParamEstimate,
        r_loss: ParamEstimate,
        r_bg: f64,
    ) -> Self {
        Self {
            label: label.into(),
            eta_r0,
            r_loss,
            r_bg,
            eta: 1.0,
            n_thresh: 1,
            covariance: [
                [eta_r0.std_error.powi(2), 0.0],
                [0.0, r_loss.std_error.powi(2)],
            ],
            uncertainty: UncertaintyMethod::Given,
            objective_value: f64::NAN,
            initial_objective: f64::NAN,
            evaluations: 0,
            seed: 0,
            data: None,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.eta_r0.value / self.r_loss.value
    }

    pub fn model(&self) -> Result<BrightModel> {
        model_for(self.eta, self.eta_r0.value, self.r_bg, self.r_loss.value)
    }

    /// Fitted bright-state error at `t_us`.
    pub fn curve(&self, t_us: f64) -> Result<f64> {
        bright_error(t_us * 1e-6, self.n_thresh, &self.model()?)
    }
}

fn model_for(eta: f64, eta_r0: f64, r_bg: f64, r_loss: f64) -> Result<BrightModel> {
    BrightModel::from_detected_rate(eta, eta_r0, r_bg, r_loss)
}

/// Weighted sum of squares between `data` and the model at `params`.
pub fn objective(data: &ErrorCurve, r_bg: f64, eta: f64, params: [f64; 2]) -> f64 {
    let [eta_r0, r_loss] = params;
    if !(eta_r0 > 0.0 && r_loss >= 0.0 && eta_r0.is_finite() && r_loss.is_finite()) {
        return f64::INFINITY;
    }
    let Ok(model) = model_for(eta, eta_r0, r_bg, r_loss) else {
        return f64::INFINITY;
    };
    let n = data.n_trials as f64;
    let mut sum = 0.0;
    for (&t, &p) in data.times_us.iter().zip(&data.eps) {
        let Ok(m) = bright_error(t * 1e-6, data.n_thresh, &model) else {
            return f64::INFINITY;
        };
        let w = 1.0 / (p * (1.0 - p) / n + WEIGHT_EPSILON);
        sum += w * (p - m).powi(2);
    }
    sum
}

/// Starting point from the shape of the curve: the time at which the error
/// first halves sets the total detected rate, the final level the leak.
pub fn initial_guess(data: &ErrorCurve, r_bg: f64) -> [f64; 2] {
    let k = data.n_thresh as f64;
    let t_half = data
        .times_us
        .iter()
        .zip(&data.eps)
        .find(|(_, &e)| e <= 0.5)
        .map(|(&t, _)| t)
        .unwrap_or(*data.times_us.last().unwrap_or(&1.0));
    let total = (k - 1.0 / 3.0) / (t_half * 1e-6);
    let eta_r0 = (total - r_bg).max(0.1 * total);

    let t_end = *data.times_us.last().unwrap_or(&1.0) * 1e-6;
    let plateau = (data.eps.last().copied().unwrap_or(0.0) * (r_bg * t_end).exp()).clamp(1e-4, 0.5);
    let r_loss = (plateau * eta_r0 / (1.0 - plateau)).max(1e-3 * eta_r0);
    [eta_r0, r_loss]
}

fn check_data(data: &ErrorCurve) -> Result<()> {
    if data.times_us.len() != data.eps.len() {
        return Err(Error::domain("error curve times and values differ in length"));
    }
    let usable = data.times_us.iter().filter(|&&t| t > 0.0).count();
    if usable < MIN_BINS {
        return Err(Error::domain(format!(
            "need at least {MIN_BINS} bins with t > 0 to fit, got {usable}"
        )));
    }
    if data.n_trials == 0 {
        return Err(Error::domain("error curve has zero trials"));
    }
    if data.n_thresh == 0 {
        return Err(Error::domain("n_thresh must be at least 1"));
    }
    if data.eps.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::domain("error fractions must lie in [0, 1]"));
    }
    Ok(())
}

struct PointFit {
    params: [f64; 2],
    objective: f64,
    initial_objective: f64,
    evaluations: usize,
}

type ToParams = Box<dyn Fn(&[f64]) -> [f64; 2]>;

fn fit_point(data: &ErrorCurve, r_bg: f64, opts: &FitOptions) -> Result<PointFit> {
    let guess = opts.initial_guess.unwrap_or_else(|| initial_guess(data, r_bg));
    let initial_objective = objective(data, r_bg, opts.eta, guess);
    let (x0, to_params): (Vec<f64>, ToParams) = match opts.parameterization {
        Parameterization::Log => (
            vec![guess[0].ln(), guess[1].max(f64::MIN_POSITIVE).ln()],
            Box::new(|x: &[f64]| [x[0].exp(), x[1].exp()]),
        ),
        Parameterization::Linear => {
            let scale = guess;
            (
                vec![1.0, 1.0],
                Box::new(move |x: &[f64]| [x[0] * scale[0], x[1] * scale[1]]),
            )
        }
    };
    let min = minimize(|x| objective(data, r_bg, opts.eta, to_params(x)), &x0, opts.simplex);
    let params = to_params(&min.x);
    if !min.converged {
        return Err(Error::Fit {
            iterations: min.evaluations,
            objective: min.value,
            best: params,
        });
    }
    Ok(PointFit {
        params,
        objective: min.value,
        initial_objective,
        evaluations: min.evaluations,
    })
}

/// Covariance `2 H^{-1}` from a finite-difference Hessian of the objective.
fn curvature_covariance(data: &ErrorCurve, r_bg: f64, eta: f64, p: [f64; 2]) -> Option<[[f64; 2]; 2]> {
    let h = [1e-4 * p[0], 1e-4 * p[1].max(1e-9 * p[0])];
    let f = |dx: f64, dy: f64| objective(data, r_bg, eta, [p[0] + dx, p[1] + dy]);
    let f0 = f(0.0, 0.0);
    let hxx = (f(h[0], 0.0) - 2.0 * f0 + f(-h[0], 0.0)) / (h[0] * h[0]);
    let hyy = (f(0.0, h[1]) - 2.0 * f0 + f(0.0, -h[1])) / (h[1] * h[1]);
    let hxy = (f(h[0], h[1]) - f(h[0], -h[1]) - f(-h[0], h[1]) + f(-h[0], -h[1])) / (4.0 * h[0] * h[1]);
    let det = hxx * hyy - hxy * hxy;
    if !(det > 0.0 && hxx > 0.0 && det.is_finite()) {
        return None;
    }
    Some([
        [2.0 * hyy / det, -2.0 * hxy / det],
        [-2.0 * hxy / det, 2.0 * hxx / det],
    ])
}

fn sample_covariance(samples: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let n = samples.len() as f64;
    let mean = [
        samples.iter().map(|s| s[0]).sum::<f64>() / n,
        samples.iter().map(|s| s[1]).sum::<f64>() / n,
    ];
    let mut c = [[0.0; 2]; 2];
    for s in samples {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    c
}

/// Bright-prepared trials drawn from `model`, replicate `replicate` of `seed`.
pub fn resimulate(model: &BrightModel, n_trials: u64, duration_us: f64, seed: u64, replicate: u64) -> Vec<TrialRecord> {
    let stream_seed = seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    (0..n_trials)
        .map(|id| {
            let mut rng = trial_stream(stream_seed, id);
            TrialRecord {
                trial_id: id,
                prep_state: PrepState::Bright,
                timestamps: bright_timestamps(model, duration_us, &mut rng),
                retained_before: true,
                retained_after: true,
            }
        })
        .collect()
}

/// Fit `eta*r0` and `r_loss` to a bright-state error curve.
pub fn fit_bright_error(data: &ErrorCurve, r_bg: f64, opts: &FitOptions) -> Result<FitResult> {
    check_data(data)?;
    if !(r_bg.is_finite() && r_bg >= 0.0) {
        return Err(Error::domain(format!("r_bg must be non-negative, got {r_bg}")));
    }
    let point = fit_point(data, r_bg, opts)?;
    let [eta_r0, r_loss] = point.params;

    let (covariance, uncertainty) = if opts.bootstrap_replicates >= 2 {
        let model = model_for(opts.eta, eta_r0, r_bg, r_loss)?;
        let duration = data.times_us.iter().copied().fold(0.0, f64::max);
        let replicate_opts = FitOptions {
            initial_guess: Some(point.params),
            bootstrap_replicates: 0,
            simplex: SimplexOptions {
                x_tol: 1e-8,
                ..opts.simplex
            },
            ..*opts
        };
        let estimates: Vec<[f64; 2]> = (0..opts.bootstrap_replicates as u64)
            .into_par_iter()
            .filter_map(|r| {
                let trials = resimulate(&model, data.n_trials, duration, opts.seed, r);
                let curve = bright_error_curve(&trials, data.n_thresh, &data.times_us).ok()?;
                fit_point(&curve, r_bg, &replicate_opts).ok().map(|p| p.params)
            })
            .collect();
        if estimates.len() >= 2 {
            (
                sample_covariance(&estimates),
                UncertaintyMethod::ParametricBootstrap {
                    replicates: estimates.len(),
                },
            )
        } else {
            (
                curvature_covariance(data, r_bg, opts.eta, point.params).unwrap_or([[f64::NAN; 2]; 2]),
                UncertaintyMethod::LocalQuadratic,
            )
        }
    } else {
        (
            curvature_covariance(data, r_bg, opts.eta, point.params).unwrap_or([[f64::NAN; 2]; 2]),
            UncertaintyMethod::LocalQuadratic,
        )
    };

    Ok(FitResult {
        label: String::new(),
        eta_r0: ParamEstimate {
            value: eta_r0,
            std_error: covariance[0][0].max(0.0).sqrt(),
        },
        r_loss: ParamEstimate {
            value: r_loss,
            std_error: covariance[1][1].max(0.0).sqrt(),
        },
        r_bg,
        eta: opts.eta,
        n_thresh: data.n_thresh,
        covariance,
        uncertainty,
        objective_value: point.objective,
        initial_objective: point.initial_objective,
        evaluations: point.evaluations,
        seed: opts.seed,
        data: Some(data.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub time_us: f64,
    pub fitted: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandMethod {
    ParameterSampling,
    /// Used when the covariance is unusable; flagged in reports.
    ResidualBootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub method: BandMethod,
    pub points: Vec<BandPoint>,
}

pub const BAND_SAMPLES: usize = 1000;

/// Square root of a symmetric PSD 2x2 matrix, `None` if it is not PSD.
fn psd_sqrt(c: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let (a, b, d) = (c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]);
    if ![a, b, d].iter().all(|v| v.is_finite()) {
        return None;
    }
    let tr = a + d;
    let disc = ((a - d) * (a - d) / 4.0 + b * b).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = tr / 2.0 - disc;
    let scale = l1.abs().max(f64::MIN_POSITIVE);
    if l2 < -1e-10 * scale {
        return None;
    }
    let (l1, l2) = (l1.max(0.0), l2.max(0.0));
    // Eigenvectors of [[a, b], [b, d]].
    let (v1, v2) = if b.abs() > 0.0 {
        let v1 = [l1 - d, b];
        let n1 = (v1[0] * v1[0] + v1[1] * v1[1]).sqrt();
        let v1 = [v1[0] / n1, v1[1] / n1];
        (v1, [-v1[1], v1[0]])
    } else if a >= d {
        ([1.0, 0.0], [0.0, 1.0])
    } else {
        ([0.0, 1.0], [1.0, 0.0])
    };
    let (s1, s2) = (l1.sqrt(), l2.sqrt());
    Some([
        [v1[0] * s1, v2[0] * s2],
        [v1[1] * s1, v2[1] * s2],
    ])
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise 95% band of the fitted bright-state error at `times_us`.
pub fn confidence_band(fit: &FitResult, times_us: &[f64]) -> Result<ConfidenceBand> {
    let fitted: Vec<f64> = times_us.iter().map(|&t| fit.curve(t)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed ^ 0xBA4D);

    let draws: Vec<[f64; 2]>;
    let method;
    if let Some(root) = psd_sqrt(fit.covariance) {
        method = BandMethod::ParameterSampling;
        draws = (0..BAND_SAMPLES)
            .map(|_| {
                let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [
                    (fit.eta_r0.value + root[0][0] * z[0] + root[0][1] * z[1]).max(1e-9 * fit.eta_r0.value),
                    (fit.r_loss.value + root[1][0] * z[0] + root[1][1] * z[1]).max(0.0),
                ]
            })
            .collect();
    } else {
        method = BandMethod::ResidualBootstrap;
        let data = fit.data.as_ref().ok_or_else(|| {
            Error::domain("covariance is unusable and the fit carries no data to resample")
        })?;
        let model_eps: Vec<f64> = data.times_us.iter().map(|&t| fit.curve(t)).collect::<Result<_>>()?;
        let residuals: Vec<f64> = data.eps.iter().zip(&model_eps).map(|(e, m)| e - m).collect();
        let opts = FitOptions {
            eta: fit.eta,
            initial_guess: Some([fit.eta_r0.value, fit.r_loss.value]),
            bootstrap_replicates: 0,
            simplex: SimplexOptions {
                x_tol: 1e-8,
                ..SimplexOptions::default()
            },
            ..FitOptions::default()
        };
        let resamples: Vec<ErrorCurve> = (0..BAND_SAMPLES / 5)
            .map(|_| {
                let eps = model_eps
                    .iter()
                    .map(|m| (m + residuals[rng.random_range(0..residuals.len())]).clamp(0.0, 1.0))
                    .collect();
                ErrorCurve {
                    eps,
                    ..data.clone()
                }
            })
            .collect();
        draws = resamples
            .par_iter()
            .filter_map(|c| fit_point(c, fit.r_bg, &opts).ok().map(|p| p.params))
            .collect();
        if draws.is_empty() {
            return Err(Error::domain("residual bootstrap produced no usable refits"));
        }
    }

    let models: Vec<BrightModel> = draws
        .iter()
        .map(|p| model_for(fit.eta, p[0], fit.r_bg, p[1]))
        .collect::<Result<_>>()?;
    let points = times_us
        .par_iter()
        .zip(&fitted)
        .map(|(&t, &f)| {
            let mut vals: Vec<f64> = models
                .iter()
                .map(|m| bright_error(t * 1e-6, fit.n_thresh, m))
                .collect::<Result<_>>()?;
            vals.sort_by(f64::total_cmp);
            Ok(BandPoint {
                time_us: t,
                fitted: f,
                low: percentile(&vals, 0.025).min(f),
                high: percentile(&vals, 0.975).max(f),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceBand { method, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub r_bg: f64,
    pub eta_r0: ParamEstimate,
    pub r_loss: ParamEstimate,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rows: Vec<ReportRow>,
    /// Labels attaining the largest `eta*r0 / r_loss`, in input order.
    pub best: Vec<String>,
}

impl FitReport {
    /// Plain-text table in kcps.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "label            R_bg (kcps)   eta*R0 (kcps)        R_l (kcps)           eta*R0/R_l\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>11.3}   {:>8.3} +/- {:<6.3}   {:>7.3} +/- {:<6.3}   {:>10.2}\n",
                r.label,
                r.r_bg / 1e3,
                r.eta_r0.value / 1e3,
                r.eta_r0.std_error / 1e3,
                r.r_loss.value / 1e3,
                r.r_loss.std_error / 1e3,
                r.ratio
            ));
        }
        out.push_str(&format!("largest ratio: {}\n", self.best.join(", ")));
        out
    }
}

/// Side-by-side comparison of fits; `labels` override the fits' own labels.
pub fn fit_report(fits: &[FitResult], labels: &[&str]) -> Result<FitReport> {
    if fits.is_empty() {
        return Err(Error::domain("fit_report needs at least one fit"));
    }
    if !labels.is_empty() && labels.len() != fits.len() {
        return Err(Error::domain("one label per fit is required"));
    }
    let rows: Vec<ReportRow> = fits
        .iter()
        .enumerate()
        .map(|(i, f)| ReportRow {
            label: labels.get(i).map(|s| s.to_string()).unwrap_or_else(|| f.label.clone()),
            r_bg: f.r_bg,
            eta_r0: f.eta_r0,
            r_loss: f.r_loss,
            ratio: f.ratio(),
        })
        .collect();
    let top = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let best = rows
        .iter()
        .filter(|r| (r.ratio - top).abs() <= 1e-12 * top.abs())
        .map(|r| r.label.clone())
        .collect();
    Ok(FitReport { rows, best })
}

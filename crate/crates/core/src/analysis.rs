//! Time-resolved error rates and threshold fidelity from time-tagged trials.
//!
//! A trial is called bright at time `t` when at least `n_thresh` photons
//! arrived at or before `t` (right-closed bins). Trials are folded in one at a
//! time through [`CurveAccumulator`], so arbitrarily large files can be
//! analysed without keeping photon lists around.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{PrepState, TrialRecord};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub const DEFAULT_THRESHOLDS: [u64; 3] = [1, 2, 3];

/// A binomial proportion with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        let value = if trials == 0 {
            f64::NAN
        } else {
            successes as f64 / trials as f64
        };
        Self {
            successes,
            trials,
            value,
            ci_low,
            ci_high,
        }
    }

    pub fn standard_error(&self) -> f64 {
        (self.value * (1.0 - self.value) / self.trials as f64).sqrt()
    }
}

pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// `c[j] = #{timestamps <= j * bin_width}` for `j = 0..=horizon/bin_width`.
pub fn cumulative_counts(trial: &TrialRecord, bin_width: f64, horizon: f64) -> Result<Vec<u32>> {
    let bins = bin_count(bin_width, horizon)?;
    trial.validate(None)?;
    Ok((0..=bins)
        .map(|j| trial.count_at(bin_edge(j, bin_width)) as u32)
        .collect())
}

fn bin_edge(j: usize, bin_width: f64) -> f64 {
    j as f64 * bin_width
}

/// Number of bins covering `[0, horizon]`; the horizon must be a whole number
/// of bins.
pub fn bin_count(bin_width: f64, horizon: f64) -> Result<usize> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::domain(format!("bin width must be positive, got {bin_width}")));
    }
    if !(horizon.is_finite() && horizon >= bin_width) {
        return Err(Error::domain(format!(
            "horizon {horizon} us must be at least one bin ({bin_width} us)"
        )));
    }
    let bins = (horizon / bin_width).round();
    if ((bins * bin_width) - horizon).abs() > 1e-9 * horizon {
        return Err(Error::domain(format!(
            "horizon {horizon} us is not a whole number of {bin_width} us bins"
        )));
    }
    Ok(bins as usize)
}

/// First bin index `j` with `time <= j * bin_width`.
fn first_bin_covering(time: f64, bin_width: f64) -> usize {
    let mut j = (time / bin_width).ceil().max(0.0) as usize;
    while j > 0 && time <= bin_edge(j - 1, bin_width) {
        j -= 1;
    }
    while time > bin_edge(j, bin_width) {
        j += 1;
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time_us: f64,
    pub eps_bright: Proportion,
    pub eps_dark: Proportion,
    pub fidelity: f64,
    pub fidelity_low: f64,
    pub fidelity_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSeries {
    pub n_thresh: u64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub bin_width_us: f64,
    pub horizon_us: f64,
    pub n_bright: u64,
    pub n_dark: u64,
    pub series: Vec<ThresholdSeries>,
}

/// Bright-state error proportions for one threshold, the input of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub n_thresh: u64,
    pub times_us: Vec<f64>,
    pub eps: Vec<f64>,
    pub n_trials: u64,
}

impl FidelityCurve {
    pub fn series(&self, n_thresh: u64) -> Option<&ThresholdSeries> {
        self.series.iter().find(|s| s.n_thresh == n_thresh)
    }

    pub fn bright_error_curve(&self, n_thresh: u64) -> Option<ErrorCurve> {
        let s = self.series(n_thresh)?;
        Some(ErrorCurve {
            n_thresh,
            times_us: s.points.iter().map(|p| p.time_us).collect(),
            eps: s.points.iter().map(|p| p.eps_bright.value).collect(),
            n_trials: self.n_bright,
        })
    }
}

fn point(time_us: f64, eps_bright: Proportion, eps_dark: Proportion) -> CurvePoint {
    let fidelity = 1.0 - 0.5 * (eps_bright.value + eps_dark.value);
    // Fidelity falls when either error rises: combine the interval arms.
    let up = ((eps_bright.ci_high - eps_bright.value).powi(2)
        + (eps_dark.ci_high - eps_dark.value).powi(2))
    .sqrt();
    let down = ((eps_bright.value - eps_bright.ci_low).powi(2)
        + (eps_dark.value - eps_dark.ci_low).powi(2))
    .sqrt();
    CurvePoint {
        time_us,
        eps_bright,
        eps_dark,
        fidelity,
        fidelity_low: (fidelity - 0.5 * up).max(0.0),
        fidelity_high: (fidelity + 0.5 * down).min(1.0),
    }
}

/// Streaming reduction of trials into per-bin, per-threshold integer counts.
#[derive(Debug, Clone)]
pub struct CurveAccumulator {
    thresholds: Vec<u64>,
    bin_width: f64,
    horizon: f64,
    bins: usize,
    post_select: bool,
    // Difference arrays over bin index 0..=bins+1: a trial whose n-th photon
    // first counts in bin j is "below threshold" for bins < j.
    bright_below: Vec<Vec<i64>>,
    dark_reached: Vec<Vec<i64>>,
    n_bright: u64,
    n_dark: u64,
    n_bright_raw: u64,
    n_dark_raw: u64,
}

impl CurveAccumulator {
    pub fn new(thresholds: &[u64], bin_width: f64, horizon: f64, post_select: bool) -> Result<Self> {
        let bins = bin_count(bin_width, horizon)?;
        if thresholds.is_empty() {
            return Err(Error::domain("at least one threshold is required"));
        }
        if thresholds.contains(&0) {
            return Err(Error::domain("thresholds must be at least 1"));
        }
        let mut thresholds = thresholds.to_vec();
        thresholds.sort_unstable();
        thresholds.dedup();
        let zeros = vec![vec![0i64; bins + 2]; thresholds.len()];
        Ok(Self {
            thresholds,
            bin_width,
            horizon,
            bins,
            post_select,
            bright_below: zeros.clone(),
            dark_reached: zeros,
            n_bright: 0,
            n_dark: 0,
            n_bright_raw: 0,
            n_dark_raw: 0,
        })
    }

    pub fn ingest(&mut self, trial: &TrialRecord) -> Result<()> {
        trial.validate(None)?;
        match trial.prep_state {
            PrepState::Bright => self.n_bright_raw += 1,
            PrepState::Dark => self.n_dark_raw += 1,
        }
        if self.post_select && !trial.retained() {
            return Ok(());
        }
        let last = self.bins + 1;
        for (i, &k) in self.thresholds.iter().enumerate() {
            // Bin at which the k-th photon is first counted, `last` if never.
            let reach = trial
                .timestamps
                .get(k as usize - 1)
                .map(|&t| first_bin_covering(t, self.bin_width).min(last))
                .unwrap_or(last);
            match trial.prep_state {
                PrepState::Bright => {
                    self.bright_below[i][0] += 1;
                    self.bright_below[i][reach] -= 1;
                }
                PrepState::Dark => {
                    self.dark_reached[i][reach] += 1;
                }
            }
        }
        match trial.prep_state {
            PrepState::Bright => self.n_bright += 1,
            PrepState::Dark => self.n_dark += 1,
        }
        Ok(())
    }

    pub fn finish(self) -> Result<FidelityCurve> {
        let filter = if self.post_select {
            "post-selection on retention"
        } else {
            "no filter"
        };
        if self.n_bright == 0 {
            return Err(Error::Analysis(format!(
                "no bright-prepared trials left ({} read, {filter})",
                self.n_bright_raw
            )));
        }
        if self.n_dark == 0 {
            return Err(Error::Analysis(format!(
                "no dark-prepared trials left ({} read, {filter})",
                self.n_dark_raw
            )));
        }
        let series = self
            .thresholds
            .iter()
            .enumerate()
            .map(|(i, &n_thresh)| {
                let mut below = 0i64;
                let mut reached = 0i64;
                let mut points = Vec::with_capacity(self.bins);
                for j in 0..=self.bins {
                    below += self.bright_below[i][j];
                    reached += self.dark_reached[i][j];
                    if j == 0 {
                        continue;
                    }
                    points.push(point(
                        bin_edge(j, self.bin_width),
                        Proportion::new(below as u64, self.n_bright),
                        Proportion::new(reached as u64, self.n_dark),
                    ));
                }
                ThresholdSeries { n_thresh, points }
            })
            .collect();
        Ok(FidelityCurve {
            bin_width_us: self.bin_width,
            horizon_us: self.horizon,
            n_bright: self.n_bright,
            n_dark: self.n_dark,
            series,
        })
    }
}

/// Error rates and fidelity per bin and threshold for the given bright- and
/// dark-prepared trial sets. Each trial is filed under its own `prep_state`.
pub fn error_curves<'a>(
    bright: impl IntoIterator<Item = &'a TrialRecord>,
    dark: impl IntoIterator<Item = &'a TrialRecord>,
    thresholds: &[u64],
    bin_width: f64,
    horizon: f64,
    post_select: bool,
) -> Result<FidelityCurve> {
    let mut acc = CurveAccumulator::new(thresholds, bin_width, horizon, post_select)?;
    for t in bright.into_iter().chain(dark) {
        acc.ingest(t)?;
    }
    acc.finish()
}

/// Bright-state error at each time in `times_us`, straight from bright trials.
pub fn bright_error_curve(trials: &[TrialRecord], n_thresh: u64, times_us: &[f64]) -> Result<ErrorCurve> {
    if n_thresh == 0 {
        return Err(Error::domain("n_thresh must be at least 1"));
    }
    if trials.is_empty() {
        return Err(Error::Analysis("no trials to build an error curve from".into()));
    }
    let mut arrival: Vec<f64> = trials
        .iter()
        .map(|t| {
            t.timestamps
                .get(n_thresh as usize - 1)
                .copied()
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    arrival.sort_by(f64::total_cmp);
    let n = trials.len() as f64;
    let eps = times_us
        .iter()
        .map(|&t| {
            let reached = arrival.partition_point(|&a| a <= t);
            (trials.len() - reached) as f64 / n
        })
        .collect();
    Ok(ErrorCurve {
        n_thresh,
        times_us: times_us.to_vec(),
        eps,
        n_trials: trials.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub n_thresh: u64,
    pub time_us: f64,
    pub fidelity: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Highest-fidelity (threshold, time); ties go to the earlier time, then to
/// the smaller threshold.
pub fn optimal_operating_point(curve: &FidelityCurve) -> Option<OperatingPoint> {
    let mut best: Option<OperatingPoint> = None;
    for s in &curve.series {
        for p in &s.points {
            let cand = OperatingPoint {
                n_thresh: s.n_thresh,
                time_us: p.time_us,
                fidelity: p.fidelity,
                ci_low: p.fidelity_low,
                ci_high: p.fidelity_high,
            };
            let better = match best {
                None => true,
                Some(b) => {
                    cand.fidelity > b.fidelity
                        || (cand.fidelity == b.fidelity
                            && (cand.time_us < b.time_us
                                || (cand.time_us == b.time_us && cand.n_thresh < b.n_thresh)))
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best
}

/// Best point of a single threshold's fidelity curve.
pub fn peak_for_threshold(curve: &FidelityCurve, n_thresh: u64) -> Option<OperatingPoint> {
    let s = curve.series(n_thresh)?;
    let sub = FidelityCurve {
        series: vec![s.clone()],
        ..curve.clone()
    };
    optimal_operating_point(&sub)
}

/// Fraction of trials with the atom still trapped after readout.
pub fn retention_rate<'a>(trials: impl IntoIterator<Item = &'a TrialRecord>) -> Result<Proportion> {
    let mut kept = 0u64;
    let mut total = 0u64;
    for t in trials {
        total += 1;
        kept += t.retained_after as u64;
    }
    if total == 0 {
        return Err(Error::Analysis("retention rate of an empty trial set".into()));
    }
    Ok(Proportion::new(kept, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub at_time_us: f64,
    pub counts_bright: Vec<u64>,
    pub counts_dark: Vec<u64>,
}

impl CountHistogram {
    pub fn new(at_time_us: f64) -> Self {
        Self {
            at_time_us,
            counts_bright: Vec::new(),
            counts_dark: Vec::new(),
        }
    }

    pub fn ingest(&mut self, trial: &TrialRecord) {
        let n = trial.count_at(self.at_time_us);
        let counts = match trial.prep_state {
            PrepState::Bright => &mut self.counts_bright,
            PrepState::Dark => &mut self.counts_dark,
        };
        if counts.len() <= n {
            counts.resize(n + 1, 0);
        }
        counts[n] += 1;
    }

    pub fn max_count(&self) -> usize {
        self.counts_bright.len().max(self.counts_dark.len()).saturating_sub(1)
    }
}

/// Photon-number frequencies at `at_time_us`, split by preparation.
pub fn histogram_at<'a>(
    trials: impl IntoIterator<Item = &'a TrialRecord>,
    at_time_us: f64,
    horizon_us: f64,
) -> Result<CountHistogram> {
    if !(at_time_us >= 0.0 && at_time_us <= horizon_us) {
        return Err(Error::domain(format!(
            "histogram time {at_time_us} us outside [0, {horizon_us}] us"
        )));
    }
    let mut h = CountHistogram::new(at_time_us);
    for t in trials {
        h.ingest(t);
    }
    Ok(h)
}

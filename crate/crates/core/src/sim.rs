//! Monte Carlo generation of time-tagged readout trials.
//!
//! Every trial draws from its own ChaCha8 stream, keyed by the dataset seed
//! and the trial id, so a dataset does not depend on how trials are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting::BrightModel;
use crate::error::{Error, Result};

/// Time-tag resolution in µs; generated arrival times are rounded to it.
pub const TIMESTAMP_RESOLUTION_US: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrepState {
    Bright,
    Dark,
}

impl PrepState {
    pub fn as_str(self) -> &'static str {
        match self {
            PrepState::Bright => "bright",
            PrepState::Dark => "dark",
        }
    }
}

impl std::str::FromStr for PrepState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bright" => Ok(PrepState::Bright),
            "dark" => Ok(PrepState::Dark),
            other => Err(Error::Data(format!("unknown prep_state {other:?}"))),
        }
    }
}

/// One readout experiment. Timestamps are in µs from the start of the pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub prep_state: PrepState,
    pub timestamps: Vec<f64>,
    pub retained_before: bool,
    pub retained_after: bool,
}

impl TrialRecord {
    /// Checks ordering and, when a duration is given, the time window.
    pub fn validate(&self, duration_us: Option<f64>) -> Result<()> {
        for w in self.timestamps.windows(2) {
            // Also rejects NaN.
            if w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt()) {
                return Err(Error::Data(format!(
                    "trial {}: timestamps not sorted ascending ({} before {})",
                    self.trial_id, w[0], w[1]
                )));
            }
        }
        for &t in &self.timestamps {
            if !t.is_finite() || t < 0.0 || duration_us.is_some_and(|d| t > d) {
                return Err(Error::Data(format!(
                    "trial {}: timestamp {t} outside the readout window",
                    self.trial_id
                )));
            }
        }
        Ok(())
    }

    /// Photons detected at or before `t_us`.
    pub fn count_at(&self, t_us: f64) -> usize {
        self.timestamps.partition_point(|&x| x <= t_us)
    }

    pub fn retained(&self) -> bool {
        self.retained_before && self.retained_after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub bright_model: BrightModel,
    /// Background count rate seen by dark-prepared atoms, counts/s.
    pub dark_background: f64,
    pub readout_duration_us: f64,
    pub n_bright_trials: u64,
    pub n_dark_trials: u64,
    pub retention_probability: f64,
    /// Probability that a trial's preparation is the opposite of its label.
    pub prep_error: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.bright_model.validate()?;
        if !(self.dark_background.is_finite() && self.dark_background >= 0.0) {
            return Err(Error::Config(format!(
                "dark background must be non-negative, got {}",
                self.dark_background
            )));
        }
        if !(self.readout_duration_us.is_finite() && self.readout_duration_us > 0.0) {
            return Err(Error::Config(format!(
                "readout duration must be positive, got {} us",
                self.readout_duration_us
            )));
        }
        for (name, p) in [
            ("retention_probability", self.retention_probability),
            ("prep_error", self.prep_error),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    pub fn n_trials(&self) -> u64 {
        self.n_bright_trials + self.n_dark_trials
    }
}

/// Independent random stream for one trial.
pub fn trial_stream(seed: u64, trial_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id);
    rng
}

fn quantize(t_us: f64, duration_us: f64) -> f64 {
    ((t_us / TIMESTAMP_RESOLUTION_US).round() * TIMESTAMP_RESOLUTION_US).min(duration_us)
}

/// Append homogeneous Poisson arrivals on `[start, end)` at `rate_per_us`.
fn poisson_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    rate_per_us: f64,
    start: f64,
    end: f64,
    duration_us: f64,
    out: &mut Vec<f64>,
) {
    if rate_per_us <= 0.0 || end <= start {
        return;
    }
    let gap = Exp::new(rate_per_us).expect("positive rate");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t >= end {
            break;
        }
        out.push(quantize(t, duration_us));
    }
}

/// Arrival times for a bright atom: signal plus background until the
/// exponentially distributed leak time, background only afterwards.
pub fn bright_timestamps<R: Rng + ?Sized>(model: &BrightModel, duration_us: f64, rng: &mut R) -> Vec<f64> {
    let leak_at = if model.r_loss > 0.0 {
        Exp::new(model.r_loss * 1e-6).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    };
    let switch = leak_at.min(duration_us);
    let mut ts = Vec::new();
    let bright_rate = (model.detected_rate() + model.r_bg) * 1e-6;
    poisson_arrivals(rng, bright_rate, 0.0, switch, duration_us, &mut ts);
    poisson_arrivals(rng, model.r_bg * 1e-6, switch, duration_us, duration_us, &mut ts);
    ts
}

pub fn dark_timestamps<R: Rng + ?Sized>(r_bg: f64, duration_us: f64, rng: &mut R) -> Vec<f64> {
    let mut ts = Vec::new();
    poisson_arrivals(rng, r_bg * 1e-6, 0.0, duration_us, duration_us, &mut ts);
    ts
}

pub fn simulate_bright_trial<R: Rng + ?Sized>(
    trial_id: u64,
    model: &BrightModel,
    duration_us: f64,
    rng: &mut R,
) -> TrialRecord {
    TrialRecord {
        trial_id,
        prep_state: PrepState::Bright,
        timestamps: bright_timestamps(model, duration_us, rng),
        retained_before: true,
        retained_after: true,
    }
}

pub fn simulate_dark_trial<R: Rng + ?Sized>(trial_id: u64, r_bg: f64, duration_us: f64, rng: &mut R) -> TrialRecord {
    TrialRecord {
        trial_id,
        prep_state: PrepState::Dark,
        timestamps: dark_timestamps(r_bg, duration_us, rng),
        retained_before: true,
        retained_after: true,
    }
}

/// Trial `trial_id` of the dataset described by `config`. Ids below
/// `n_bright_trials` are bright-prepared, the rest dark-prepared.
pub fn simulate_trial(config: &SimConfig, trial_id: u64) -> TrialRecord {
    let mut rng = trial_stream(config.seed, trial_id);
    let label = if trial_id < config.n_bright_trials {
        PrepState::Bright
    } else {
        PrepState::Dark
    };
    let retained_after = rng.random::<f64>() < config.retention_probability;
    let flipped = rng.random::<f64>() < config.prep_error;
    let actual = match (label, flipped) {
        (PrepState::Bright, false) | (PrepState::Dark, true) => PrepState::Bright,
        _ => PrepState::Dark,
    };
    let d = config.readout_duration_us;
    let timestamps = match actual {
        PrepState::Bright => bright_timestamps(&config.bright_model, d, &mut rng),
        PrepState::Dark => dark_timestamps(config.dark_background, d, &mut rng),
    };
    TrialRecord {
        trial_id,
        prep_state: label,
        timestamps,
        retained_before: true,
        retained_after,
    }
}

/// The full dataset, generated in parallel on the global rayon pool.
pub fn simulate_dataset(config: &SimConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    Ok((0..config.n_trials())
        .into_par_iter()
        .map(|id| simulate_trial(config, id))
        .collect())
}

/// Generate the dataset in id order, `chunk` trials at a time, handing each
/// chunk to `sink`. Only one chunk is resident; output matches
/// [`simulate_dataset`].
pub fn simulate_chunked(
    config: &SimConfig,
    chunk: u64,
    mut sink: impl FnMut(&[TrialRecord]) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < config.n_trials() {
        let end = (start + chunk).min(config.n_trials());
        let block: Vec<TrialRecord> = (start..end)
            .into_par_iter()
            .map(|id| simulate_trial(config, id))
            .collect();
        sink(&block)?;
        start = end;
    }
    Ok(())
}

/// As [`simulate_dataset`] on a dedicated pool of `threads` workers.
pub fn simulate_dataset_with_threads(config: &SimConfig, threads: usize) -> Result<Vec<TrialRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| simulate_dataset(config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n_bright: u64, n_dark: u64) -> SimConfig {
        SimConfig {
            bright_model: BrightModel::from_detected_rate(0.0096, 39.4e3, 1.05e3, 1.31e3).unwrap(),
            dark_background: 0.7e3,
            readout_duration_us: 200.0,
            n_bright_trials: n_bright,
            n_dark_trials: n_dark,
            retention_probability: 0.971,
            prep_error: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn empty_dataset() {
        assert!(simulate_dataset(&config(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_trial() {
        let c = config(10, 10);
        assert_eq!(simulate_trial(&c, 3), simulate_trial(&c, 3));
        let m = c.bright_model;
        let a = simulate_bright_trial(0, &m, 200.0, &mut trial_stream(1, 2));
        let b = simulate_bright_trial(0, &m, 200.0, &mut trial_stream(1, 2));
        assert_eq!(a, b);
        let other = simulate_bright_trial(0, &m, 200.0, &mut trial_stream(1, 3));
        assert_ne!(a.timestamps, other.timestamps);
    }

    #[test]
    fn parallelism_does_not_change_dataset() {
        let c = config(300, 300);
        let one = simulate_dataset_with_threads(&c, 1).unwrap();
        let four = simulate_dataset_with_threads(&c, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn labels_follow_ids() {
        let c = config(5, 3);
        let data = simulate_dataset(&c).unwrap();
        assert_eq!(data.len(), 8);
        assert!(data[..5].iter().all(|r| r.prep_state == PrepState::Bright));
        assert!(data[5..].iter().all(|r| r.prep_state == PrepState::Dark));
        assert!(data.iter().enumerate().all(|(i, r)| r.trial_id == i as u64));
    }

    #[test]
    fn dark_without_background_is_empty() {
        let mut rng = trial_stream(3, 0);
        for id in 0..100 {
            assert!(simulate_dark_trial(id, 0.0, 200.0, &mut rng).timestamps.is_empty());
        }
    }

    #[test]
    fn leak_free_mean_count() {
        let m = BrightModel::from_detected_rate(0.01, 40e3, 0.0, 0.0).unwrap();
        let n = 100_000u64;
        let mut total = 0usize;
        for id in 0..n {
            total += bright_timestamps(&m, 200.0, &mut trial_stream(11, id)).len();
        }
        let mean = total as f64 / n as f64;
        let expect = 40e3 * 200e-6;
        let se = (expect / n as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn dark_mean_count() {
        let n = 100_000u64;
        let r_bg = 5e3;
        let total: usize = (0..n)
            .map(|id| dark_timestamps(r_bg, 200.0, &mut trial_stream(12, id)).len())
            .sum();
        let mean = total as f64 / n as f64;
        let expect = r_bg * 200e-6;
        assert!((mean - expect).abs() < 4.0 * (expect / n as f64).sqrt());
    }

    #[test]
    fn retention_draws_are_independent_of_prep() {
        let mut c = config(2000, 2000);
        c.retention_probability = 0.0;
        assert!(simulate_dataset(&c).unwrap().iter().all(|r| !r.retained_after));
        c.retention_probability = 1.0;
        assert!(simulate_dataset(&c).unwrap().iter().all(|r| r.retained_after));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = config(1, 1);
        c.readout_duration_us = 0.0;
        assert!(simulate_dataset(&c).is_err());
        let mut c = config(1, 1);
        c.prep_error = 1.5;
        assert!(simulate_dataset(&c).is_err());
    }

    #[test]
    fn unsorted_record_is_rejected() {
        let r = TrialRecord {
            trial_id: 4,
            prep_state: PrepState::Dark,
            timestamps: vec![3.0, 1.0],
            retained_before: true,
            retained_after: true,
        };
        let err = r.validate(Some(200.0)).unwrap_err().to_string();
        assert!(err.contains("trial 4"));
    }
}

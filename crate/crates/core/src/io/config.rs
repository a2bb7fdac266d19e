//! Run configuration for the command-line pipeline.
//!
//! Every key is optional; omitted keys keep the defaults below. Physical
//! quantities must carry units.
//!
//! ```text
//! sim.eta_r0 = 39.4 kcps       sim.r_loss = 1.31 kcps     sim.r_bg = 1.05 kcps
//! sim.eta = 0.0096             sim.dark_background = 1.05 kcps
//! sim.duration = 200 us        sim.n_bright = 3600        sim.n_dark = 3600
//! sim.retention = 1            sim.prep_error = 0 %       sim.seed = 1
//! analysis.bin_width = 1 us    analysis.horizon = 200 us
//! analysis.thresholds = 1,2,3  analysis.post_select = false
//! fit.r_bg = 1.05 kcps         fit.eta = 0.0096           fit.n_thresh = 1
//! fit.bootstrap = 200          fit.seed = 1
//! probe.saturation = 3         probe.duration = 200 us
//! probe.scan_start = 20 MHz    probe.scan_stop = 80 MHz   probe.scan_points = 241
//! scheme.<constants key> = ... (overrides the constants file)
//! output.dir = out
//! ```

use std::path::{Path, PathBuf};

use super::kv::{Dimension, KvFile};
use super::table::sha256_hex;
use crate::atomic::LevelScheme;
use crate::counting::BrightModel;
use crate::error::{Error, Result};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub bin_width_us: f64,
    /// Defaults to the readout duration.
    pub horizon_us: Option<f64>,
    pub thresholds: Vec<u64>,
    pub post_select: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    /// Background rate held fixed in the fit, counts/s.
    pub r_bg: Option<f64>,
    pub eta: f64,
    pub n_thresh: u64,
    pub bootstrap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    pub saturation: f64,
    pub duration_us: f64,
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
}

impl ScanSettings {
    pub fn detunings(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.start_mhz];
        }
        let step = (self.stop_mhz - self.start_mhz) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.start_mhz + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub analysis: AnalysisOptions,
    pub fit: FitSettings,
    pub scan: ScanSettings,
    pub scheme: LevelScheme,
    pub output_dir: Option<PathBuf>,
    /// SHA-256 of the configuration text, empty for the defaults.
    pub hash: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bright = BrightModel::from_detected_rate(0.0096, 39.4e3, 1.05e3, 1.31e3)
            .expect("default bright model is valid");
        Self {
            sim: SimConfig {
                bright_model: bright,
                dark_background: 1.05e3,
                readout_duration_us: 200.0,
                n_bright_trials: 3600,
                n_dark_trials: 3600,
                retention_probability: 1.0,
                prep_error: 0.0,
                seed: 1,
            },
            analysis: AnalysisOptions {
                bin_width_us: 1.0,
                horizon_us: None,
                thresholds: vec![1, 2, 3],
                post_select: false,
            },
            fit: FitSettings {
                r_bg: None,
                eta: 0.0096,
                n_thresh: 1,
                bootstrap: 200,
                seed: 1,
            },
            scan: ScanSettings {
                saturation: 3.0,
                duration_us: 200.0,
                start_mhz: 20.0,
                stop_mhz: 80.0,
                points: 241,
            },
            scheme: LevelScheme::default(),
            output_dir: None,
            hash: String::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The scheme starts from [`LevelScheme::from_env`].
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut kv = KvFile::parse(text, path)?;
        let mut c = RunConfig {
            scheme: LevelScheme::from_env()?,
            hash: sha256_hex(text.as_bytes()),
            ..RunConfig::default()
        };
        let rate = |kv: &mut KvFile, k: &str| kv.take_quantity(k, Dimension::Rate);
        let time = |kv: &mut KvFile, k: &str| kv.take_quantity(k, Dimension::Time);
        let freq = |kv: &mut KvFile, k: &str| kv.take_quantity(k, Dimension::Frequency);
        let ratio = |kv: &mut KvFile, k: &str| kv.take_quantity(k, Dimension::Dimensionless);

        let m = &c.sim.bright_model;
        let eta = ratio(&mut kv, "sim.eta")?.unwrap_or(m.eta);
        let eta_r0 = rate(&mut kv, "sim.eta_r0")?.unwrap_or(m.detected_rate());
        let r_bg = rate(&mut kv, "sim.r_bg")?.unwrap_or(m.r_bg);
        let r_loss = rate(&mut kv, "sim.r_loss")?.unwrap_or(m.r_loss);
        c.sim.bright_model = BrightModel::from_detected_rate(eta, eta_r0, r_bg, r_loss)
            .map_err(|e| Error::Config(format!("{}: sim: {e}", path.display())))?;
        c.sim.dark_background = rate(&mut kv, "sim.dark_background")?.unwrap_or(r_bg);
        if let Some(v) = time(&mut kv, "sim.duration")? {
            c.sim.readout_duration_us = v;
        }
        if let Some(v) = kv.take_parsed("sim.n_bright")? {
            c.sim.n_bright_trials = v;
        }
        if let Some(v) = kv.take_parsed("sim.n_dark")? {
            c.sim.n_dark_trials = v;
        }
        if let Some(v) = ratio(&mut kv, "sim.retention")? {
            c.sim.retention_probability = v;
        }
        if let Some(v) = ratio(&mut kv, "sim.prep_error")? {
            c.sim.prep_error = v;
        }
        if let Some(v) = kv.take_parsed("sim.seed")? {
            c.sim.seed = v;
        }

        if let Some(v) = time(&mut kv, "analysis.bin_width")? {
            c.analysis.bin_width_us = v;
        }
        c.analysis.horizon_us = time(&mut kv, "analysis.horizon")?;
        if let Some(v) = kv.take_list("analysis.thresholds")? {
            c.analysis.thresholds = v;
        }
        if let Some(v) = kv.take_bool("analysis.post_select")? {
            c.analysis.post_select = v;
        }

        c.fit.r_bg = rate(&mut kv, "fit.r_bg")?;
        if let Some(v) = ratio(&mut kv, "fit.eta")? {
            c.fit.eta = v;
        } else {
            c.fit.eta = eta;
        }
        if let Some(v) = kv.take_parsed("fit.n_thresh")? {
            c.fit.n_thresh = v;
        }
        if let Some(v) = kv.take_parsed("fit.bootstrap")? {
            c.fit.bootstrap = v;
        }
        if let Some(v) = kv.take_parsed("fit.seed")? {
            c.fit.seed = v;
        }

        if let Some(v) = ratio(&mut kv, "probe.saturation")? {
            c.scan.saturation = v;
        }
        if let Some(v) = time(&mut kv, "probe.duration")? {
            c.scan.duration_us = v;
        }
        if let Some(v) = freq(&mut kv, "probe.scan_start")? {
            c.scan.start_mhz = v;
        }
        if let Some(v) = freq(&mut kv, "probe.scan_stop")? {
            c.scan.stop_mhz = v;
        }
        if let Some(v) = kv.take_parsed("probe.scan_points")? {
            c.scan.points = v;
        }

        c.scheme = c.scheme.apply(&mut kv, "scheme.")?;
        if let Some((dir, _)) = kv.take_str("output.dir") {
            c.output_dir = Some(PathBuf::from(dir));
        }
        kv.finish()?;
        c.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if !(self.analysis.bin_width_us.is_finite() && self.analysis.bin_width_us > 0.0) {
            return Err(Error::Config("analysis.bin_width must be positive".into()));
        }
        if self.analysis.thresholds.is_empty() || self.analysis.thresholds.contains(&0) {
            return Err(Error::Config("analysis.thresholds must be positive integers".into()));
        }
        if self.fit.n_thresh == 0 {
            return Err(Error::Config("fit.n_thresh must be at least 1".into()));
        }
        if !(self.fit.eta > 0.0 && self.fit.eta <= 1.0) {
            return Err(Error::Config("fit.eta must lie in (0, 1]".into()));
        }
        if !(self.scan.saturation >= 0.0 && self.scan.duration_us >= 0.0) {
            return Err(Error::Config("probe.saturation and probe.duration must be non-negative".into()));
        }
        if self.scan.points == 0 || self.scan.stop_mhz < self.scan.start_mhz {
            return Err(Error::Config("probe scan needs at least one point and start <= stop".into()));
        }
        Ok(())
    }

    pub fn horizon_us(&self) -> f64 {
        self.analysis.horizon_us.unwrap_or(self.sim.readout_duration_us)
    }
}

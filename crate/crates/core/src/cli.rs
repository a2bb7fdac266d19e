//! The `readout` command line.
//!
//! Flags take rates in kcps, times in µs and frequencies in MHz.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{optimal_operating_point, peak_for_threshold, CountHistogram, CurveAccumulator, ErrorCurve, FidelityCurve};
use crate::atomic::dynamics::ScanSetup;
use crate::atomic::{fluorescence_spectrum, population_spectrum, spectrum_summary, LevelScheme, ProbeSpec, Sublevel};
use crate::counting::{p_no_transition, p_with_transition, BrightModel, CountPmf};
use crate::error::{Error, Result};
use crate::fitting::{confidence_band, fit_bright_error, fit_report, FitOptions, FitResult};
use crate::io::table::{num, sha256_hex};
use crate::io::trials::{format_trial, TRIAL_HEADER};
use crate::io::{write_atomically, RunConfig, Table, TrialReader};
use crate::sim::simulate_chunked;

#[derive(Debug, Parser)]
#[command(name = "readout", version, about = "Fluorescence readout statistics, simulation and fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate time-tagged readout trials.
    Simulate(SimulateArgs),
    /// Error rates and fidelity versus time from a trial file.
    Analyze(AnalyzeArgs),
    /// Fit eta*R0 and R_l to a bright-state error curve.
    Fit(FitArgs),
    /// Rate-equation fluorescence and population spectra.
    Spectrum(SpectrumArgs),
    /// Photon-count distribution of a bright-prepared atom.
    Distribution(DistributionArgs),
    /// Compare fits by eta*R0 / R_l.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; the output does not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    trials: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Curve table; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<u64>>,
    /// Keep only trials with the atom present before and after readout.
    #[arg(long, conflicts_with = "no_post_select")]
    post_select: bool,
    #[arg(long)]
    no_post_select: bool,
    /// Photon-number histogram at this time, written to --histogram-out.
    #[arg(long, requires = "histogram_out")]
    histogram_at: Option<f64>,
    #[arg(long, requires = "histogram_at")]
    histogram_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Curve table written by `analyze`.
    curve: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Background rate held fixed, kcps.
    #[arg(long)]
    rbg: Option<f64>,
    #[arg(long)]
    nthresh: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Resimulated datasets for standard errors; 0 uses local curvature.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "")]
    label: String,
    /// Fit result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fitted curve with its 95% band.
    #[arg(long)]
    band: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Level constants file; overrides the environment default.
    #[arg(long)]
    constants: Option<PathBuf>,
    #[arg(long)]
    saturation: Option<f64>,
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    /// Fluorescence table; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    populations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DistributionArgs {
    /// Detected atomic scattering rate, kcps.
    #[arg(long)]
    eta_r0: f64,
    /// Leakage rate, kcps.
    #[arg(long)]
    rl: f64,
    /// Background rate, kcps.
    #[arg(long)]
    rbg: f64,
    /// Counting time, µs.
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 0.0096)]
    eta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Fit results written by `fit --out`.
    #[arg(required = true)]
    fits: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
}

/// Parse `argv` (including the program name) and run; returns the exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a, err),
        Command::Analyze(a) => analyze(a, out, err),
        Command::Fit(a) => fit(a, out),
        Command::Spectrum(a) => spectrum(a, out, err),
        Command::Distribution(a) => distribution(a, out),
        Command::Report(a) => report(a, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig {
            scheme: LevelScheme::from_env()?,
            ..RunConfig::default()
        }),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn emit(table: &Table, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => table.save(p),
        None => table.render(out).map_err(stdout_err),
    }
}

/// Hash of the effective settings, independent of file paths.
fn settings_hash(settings: &impl std::fmt::Debug) -> String {
    sha256_hex(format!("{settings:?}").as_bytes())
}

fn simulate(a: SimulateArgs, err: &mut dyn Write) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.sim.seed = s;
    }
    let sim = config.sim.clone();
    let comments = vec![
        format!("config_sha256 = {}", settings_hash(&sim)),
        format!("seed = {}", sim.seed),
        format!("n_bright = {}", sim.n_bright_trials),
        format!("n_dark = {}", sim.n_dark_trials),
        format!("duration_us = {}", num(sim.readout_duration_us)),
    ];
    let generate = |w: &mut dyn Write| -> std::io::Result<()> {
        writeln!(w, "{TRIAL_HEADER}")?;
        for c in &comments {
            writeln!(w, "# {c}")?;
        }
        let mut io_err = None;
        let res = simulate_chunked(&sim, 1 << 16, |block| {
            for t in block {
                if let Err(e) = format_trial(w, t) {
                    io_err = Some(e);
                    return Err(Error::Data("write failed".into()));
                }
            }
            Ok(())
        });
        match (res, io_err) {
            (_, Some(e)) => Err(e),
            (Err(e), None) => Err(std::io::Error::other(e.to_string())),
            (Ok(()), None) => Ok(()),
        }
    };
    sim.validate()?;
    match a.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| write_atomically(&a.out, generate))?;
        }
        None => write_atomically(&a.out, generate)?,
    }
    writeln!(err, "wrote {} trials to {}", sim.n_trials(), a.out.display()).map_err(stdout_err)
}

fn curve_table(curve: &FidelityCurve, hash: &str, source_seed: Option<&str>) -> Table {
    let mut t = Table::new(
        "readout analyze",
        &[
            "n_thresh",
            "time_us",
            "eps_bright",
            "eps_bright_low",
            "eps_bright_high",
            "eps_dark",
            "eps_dark_low",
            "eps_dark_high",
            "fidelity",
            "fidelity_low",
            "fidelity_high",
            "n_bright",
            "n_dark",
        ],
    )
    .meta("config_sha256", hash)
    .meta("seed", source_seed.unwrap_or("none"));
    for s in &curve.series {
        for p in &s.points {
            t.push(vec![
                s.n_thresh.to_string(),
                num(p.time_us),
                num(p.eps_bright.value),
                num(p.eps_bright.ci_low),
                num(p.eps_bright.ci_high),
                num(p.eps_dark.value),
                num(p.eps_dark.ci_low),
                num(p.eps_dark.ci_high),
                num(p.fidelity),
                num(p.fidelity_low),
                num(p.fidelity_high),
                curve.n_bright.to_string(),
                curve.n_dark.to_string(),
            ]);
        }
    }
    t
}

/// `key = value` comments from the head of a trial file.
fn trial_file_meta(path: &Path) -> Result<Vec<(String, String)>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let Some(c) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = c.split_once('=') {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(meta)
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let meta = trial_file_meta(&a.trials)?;
    let lookup = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let bin_width = a.bin_width.unwrap_or(config.analysis.bin_width_us);
    let horizon = match (a.horizon, config.analysis.horizon_us, lookup("duration_us")) {
        (Some(h), _, _) | (None, Some(h), _) => h,
        (None, None, Some(d)) => d
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad duration_us header `{d}`", a.trials.display())))?,
        (None, None, None) => config.horizon_us(),
    };
    let thresholds = a.thresholds.clone().unwrap_or(config.analysis.thresholds.clone());
    let post_select = if a.post_select {
        true
    } else if a.no_post_select {
        false
    } else {
        config.analysis.post_select
    };

    let mut acc = CurveAccumulator::new(&thresholds, bin_width, horizon, post_select)?;
    let mut hist = a.histogram_at.map(CountHistogram::new);
    if let Some(t) = a.histogram_at {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::domain(format!("--histogram-at {t} us outside [0, {horizon}] us")));
        }
    }
    let (mut total, mut kept) = (0u64, 0u64);
    for trial in TrialReader::open(&a.trials)? {
        let trial = trial?;
        total += 1;
        kept += trial.retained_after as u64;
        acc.ingest(&trial)?;
        if let Some(h) = hist.as_mut() {
            if !post_select || trial.retained() {
                h.ingest(&trial);
            }
        }
    }
    let curve = acc.finish()?;
    let settings = (bin_width.to_bits(), horizon.to_bits(), &thresholds, post_select, lookup("config_sha256"));
    let hash = settings_hash(&settings);
    let seed = lookup("seed");
    emit(&curve_table(&curve, &hash, seed.as_deref()), a.out.as_deref(), out)?;

    if let (Some(h), Some(path)) = (hist, a.histogram_out.as_deref()) {
        let mut t = Table::new("readout histogram", &["n_photons", "count_bright", "count_dark"])
            .meta("config_sha256", &hash)
            .meta("seed", seed.as_deref().unwrap_or("none"))
            .meta("time_us", num(h.at_time_us));
        for n in 0..=h.max_count() {
            t.push(vec![
                n.to_string(),
                h.counts_bright.get(n).copied().unwrap_or(0).to_string(),
                h.counts_dark.get(n).copied().unwrap_or(0).to_string(),
            ]);
        }
        t.save(path)?;
    }

    let w = |e: std::io::Error| stdout_err(e);
    for &k in &curve.series.iter().map(|s| s.n_thresh).collect::<Vec<_>>() {
        if let Some(p) = peak_for_threshold(&curve, k) {
            writeln!(
                err,
                "n_thresh {k}: peak fidelity {:.4} [{:.4}, {:.4}] at {} us",
                p.fidelity, p.ci_low, p.ci_high, p.time_us
            )
            .map_err(w)?;
        }
    }
    if let Some(p) = optimal_operating_point(&curve) {
        writeln!(err, "best: n_thresh {} at {} us, fidelity {:.4}", p.n_thresh, p.time_us, p.fidelity).map_err(w)?;
    }
    if total > 0 {
        writeln!(err, "retention: {kept}/{total}").map_err(w)?;
    }
    Ok(())
}

fn read_error_curve(path: &Path, n_thresh: u64) -> Result<ErrorCurve> {
    let table = Table::load(path)?;
    let thresholds = table.numbers("n_thresh")?;
    let times = table.numbers("time_us")?;
    let eps = table.numbers("eps_bright")?;
    let n_bright = table.numbers("n_bright")?;
    let mut curve = ErrorCurve {
        n_thresh,
        times_us: Vec::new(),
        eps: Vec::new(),
        n_trials: 0,
    };
    for i in 0..times.len() {
        if thresholds[i] as u64 == n_thresh {
            curve.times_us.push(times[i]);
            curve.eps.push(eps[i]);
            curve.n_trials = n_bright[i] as u64;
        }
    }
    if curve.times_us.is_empty() {
        return Err(Error::Data(format!("{}: no rows for n_thresh = {n_thresh}", path.display())));
    }
    Ok(curve)
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let r_bg = a
        .rbg
        .map(|k| k * 1e3)
        .or(config.fit.r_bg)
        .ok_or_else(|| Error::Config("the background rate is required: pass --rbg or set fit.r_bg".into()))?;
    let n_thresh = a.nthresh.unwrap_or(config.fit.n_thresh);
    let data = read_error_curve(&a.curve, n_thresh)?;
    let opts = FitOptions {
        eta: a.eta.unwrap_or(config.fit.eta),
        bootstrap_replicates: a.bootstrap.unwrap_or(config.fit.bootstrap),
        seed: a.seed.unwrap_or(config.fit.seed),
        ..FitOptions::default()
    };
    let mut result = fit_bright_error(&data, r_bg, &opts)?;
    result.label = if a.label.is_empty() {
        a.curve.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        a.label.clone()
    };
    let report = fit_report(std::slice::from_ref(&result), &[])?;
    write!(out, "{}", report.render()).map_err(stdout_err)?;
    writeln!(
        out,
        "uncertainty: {:?}; objective {:.4} (start {:.4}); {} evaluations",
        result.uncertainty, result.objective_value, result.initial_objective, result.evaluations
    )
    .map_err(stdout_err)?;

    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&result).map_err(|e| Error::Data(e.to_string()))?;
        write_atomically(path, |w| writeln!(w, "{json}"))?;
    }
    if let Some(path) = &a.band {
        let band = confidence_band(&result, &data.times_us)?;
        let mut t = Table::new("readout fit band", &["time_us", "eps_bright", "eps_fit", "eps_fit_low", "eps_fit_high"])
            .meta("config_sha256", settings_hash(&(n_thresh, r_bg.to_bits(), &opts.seed, opts.bootstrap_replicates)))
            .meta("seed", opts.seed)
            .meta("band_method", format!("{:?}", band.method));
        for (p, e) in band.points.iter().zip(&data.eps) {
            t.push(vec![num(p.time_us), num(*e), num(p.fitted), num(p.low), num(p.high)]);
        }
        t.save(path)?;
    }
    Ok(())
}

fn spectrum(a: SpectrumArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(p) = &a.constants {
        config.scheme = LevelScheme::from_file(p)?;
    }
    let scan = &mut config.scan;
    if let Some(v) = a.saturation {
        scan.saturation = v;
    }
    if let Some(v) = a.start {
        scan.start_mhz = v;
    }
    if let Some(v) = a.stop {
        scan.stop_mhz = v;
    }
    if let Some(v) = a.points {
        scan.points = v;
    }
    if let Some(v) = a.duration {
        scan.duration_us = v;
    }
    config.validate()?;
    let detunings = config.scan.detunings();
    let probe = ProbeSpec {
        detuning: 0.0,
        saturation: config.scan.saturation,
    };
    probe.validate()?;
    let mut setup = ScanSetup::new(config.scheme.clone());
    setup.duration_us = config.scan.duration_us;
    let hash = settings_hash(&(&config.scheme, &config.scan));

    let spectrum = fluorescence_spectrum(&detunings, &probe, &setup)?;
    let mut t = Table::new("readout spectrum", &["detuning_MHz", "scattering_rate_cps", "photons_per_pulse"])
        .meta("config_sha256", &hash)
        .meta("seed", "none")
        .meta("saturation", num(config.scan.saturation))
        .meta("duration_us", num(config.scan.duration_us));
    for p in &spectrum {
        t.push(vec![
            num(p.detuning),
            num(p.scattering_rate),
            num(p.scattering_rate * config.scan.duration_us * 1e-6),
        ]);
    }
    emit(&t, a.out.as_deref(), out)?;

    let pops = population_spectrum(&detunings, &probe, &setup)?;
    if let Some(path) = &a.populations {
        let mut columns: Vec<String> = vec!["detuning_MHz".into()];
        columns.extend(Sublevel::ground_states().map(|s| format!("pop_F{}_m{}", s.manifold.f(), s.m)));
        columns.extend(["pop_F1_total", "orp_via_F0", "orp_via_F1", "orp_via_F2", "orp_via_F3"].map(String::from));
        let names: Vec<&str> = columns.iter().map(String::as_str).collect();
        let mut t = Table::new("readout populations", &names)
            .meta("config_sha256", &hash)
            .meta("seed", "none")
            .meta("duration_us", num(config.scan.duration_us));
        for p in &pops {
            let mut row = vec![num(p.detuning)];
            row.extend(p.populations.0.iter().map(|&x| num(x)));
            row.push(num(p.populations.f1_total()));
            row.extend(p.orp_via.iter().map(|&x| num(x)));
            t.push(row);
        }
        t.save(path)?;
    }

    match spectrum_summary(&spectrum) {
        Ok(s) => writeln!(err, "peak {:.2} MHz, FWHM {:.2} MHz", s.peak_detuning, s.fwhm),
        Err(e) => writeln!(err, "no peak summary: {e}"),
    }
    .map_err(stdout_err)?;
    if let Some(p) = pops
        .iter()
        .max_by(|a, b| a.populations.f1_total().total_cmp(&b.populations.f1_total()))
    {
        writeln!(err, "F=1 population largest at {:.2} MHz", p.detuning).map_err(stdout_err)?;
    }
    Ok(())
}

fn distribution(a: DistributionArgs, out: &mut dyn Write) -> Result<()> {
    let model = BrightModel::from_detected_rate(a.eta, a.eta_r0 * 1e3, a.rbg * 1e3, a.rl * 1e3)?;
    if !(a.t.is_finite() && a.t >= 0.0) {
        return Err(Error::domain(format!("--t must be non-negative, got {}", a.t)));
    }
    let t = a.t * 1e-6;
    let pmf = CountPmf::bright(t, &model)?;
    let rates = model.rate_set();
    let settings = (a.eta.to_bits(), a.eta_r0.to_bits(), a.rl.to_bits(), a.rbg.to_bits(), a.t.to_bits());
    let mut table = Table::new("readout distribution", &["n_photons", "p_total", "p_no_transition", "p_with_transition"])
        .meta("config_sha256", settings_hash(&settings))
        .meta("seed", "none")
        .meta("time_us", num(a.t))
        .meta("total_mass", num(pmf.total_mass()));
    for (n, &p) in pmf.probabilities.iter().enumerate() {
        let n = n as u64;
        let stay = (-rates.r_loss * t).exp() * p_no_transition(n, t, rates.r_initial)?;
        let leak = if rates.r_loss > 0.0 { p_with_transition(n, t, &rates)? } else { 0.0 };
        table.push(vec![n.to_string(), num(p), num(stay), num(leak)]);
    }
    emit(&table, a.out.as_deref(), out)
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let fits = a
        .fits
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<FitResult>(&text)
                .map_err(|e| Error::Parse {
                    path: p.display().to_string(),
                    line: e.line(),
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<&str> = a.labels.iter().flatten().map(String::as_str).collect();
    let report = fit_report(&fits, &labels)?;
    write!(out, "{}", report.render()).map_err(stdout_err)
}

//! `kmux`: simulate, analyse and report on multiplexed photon-pair sources.

mod config;
mod products;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use kmux_core::analysis::lifetime::{fit_lifetime, LifetimeInputs, LifetimeOptions, LifetimePoint};
use kmux_core::analysis::report::write_lifetime_report;
use kmux_core::analysis::{accumulate_simulation, Accumulator, AnalysisError};
use kmux_core::model;
use kmux_core::protocol::protocol_ensemble;
use kmux_core::schmidt::{self, write_spectrum};
use kmux_core::sim::format::{FormatError, FrameReader, FrameWriter};
use kmux_core::sim::{run_simulation, SimError, Simulator};

use config::RunConfig;
use products::Products;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(e) => CliError::Io(e),
            FormatError::NoData => CliError::Data("no data: the frame file is empty".into()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "kmux", version, about = "Wavevector-multiplexed photon-pair source simulator and analysis toolkit")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every master seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the number of simulated frames.
    #[arg(long, global = true)]
    frames: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a frame stream file.
    Simulate,
    /// Analyse a frame stream file.
    Analyze {
        /// Frame stream produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Schmidt mode numbers of the cropped biphoton amplitude.
    Modes {
        #[arg(long)]
        sigma: Option<f64>,
        /// Second axis width; prints the product when given.
        #[arg(long)]
        sigma_y: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        /// Grid samples per axis.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit g²(t) samples over storage time.
    FitLifetime {
        /// Table with columns t,g2,stderr.
        #[arg(long)]
        input: PathBuf,
    },
    /// Multiplexed multi-photon generation protocol.
    Protocol,
    /// Simulate and analyse in one pass, plus modes and protocol when configured.
    Report,
}

/// Writes through a `.partial` file renamed into place on success.
pub fn write_atomic<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let partial = partial_path(path);
    let mut w = BufWriter::new(File::create(&partial)?);
    f(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&partial, path)?;
    Ok(())
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().ok_or_else(|| CliError::Usage("--out DIR is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        if let Some(s) = &mut cfg.simulation {
            s.master_seed = seed;
        }
        if let Some(p) = &mut cfg.protocol {
            p.master_seed = seed;
        }
    }
    if let Some(n) = cli.frames {
        if let Some(s) = &mut cfg.simulation {
            s.n_frames = n;
        }
    }
    Ok(cfg)
}

fn print_lines(lines: &[String]) {
    for l in lines {
        println!("{l}");
    }
}

fn cmd_simulate(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let sim_cfg = cfg.sim_config()?;
    let digest = cfg.digest();
    let dir = out_dir(cli)?;
    let sim = Simulator::new(sim_cfg.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    let frames_path = dir.join("frames.csv");
    let partial = partial_path(&frames_path);
    let mut writer = FrameWriter::new(BufWriter::new(File::create(&partial)?), &digest, &sim_cfg.storage.values(), &[])?;
    let summary = match run_simulation(&sim, cli.workers, &mut writer) {
        Ok(s) => s,
        Err(SimError::Sink { frames_written, source }) => {
            return Err(CliError::Io(io::Error::new(
                source.kind(),
                format!("{source}; {frames_written} frames left in {}", partial.display()),
            )))
        }
        Err(e) => return Err(CliError::Schema(e.to_string())),
    };
    writer.finish()?.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&partial, &frames_path)?;

    let grid = sim.grid();
    let lines = vec![
        format!("frames={}", summary.frames),
        format!("mode_cells={}", grid.len()),
        format!("expected_mean_s={}", sim_cfg.source.p_mode * grid.len() as f64 * sim_cfg.detection.eta_s + 0.5 * sim_cfg.detection.dark_rate),
        format!("mean_s={}", summary.mean_s()),
        format!("mean_s_stderr={}", summary.mean_s_stderr()),
        format!("mean_as={}", summary.mean_as()),
        format!("p_s={}", summary.p_s()),
        format!("p_as={}", summary.p_as()),
    ];
    write_atomic(&dir.join("summary.txt"), |w| {
        writeln!(w, "# config_digest={digest}")?;
        lines.iter().try_for_each(|l| writeln!(w, "{l}"))
    })?;
    print_lines(&lines);
    Ok(())
}

fn cmd_analyze(cli: &Cli, input: &Path) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let digest = cfg.digest();
    let dir = out_dir(cli)?;
    let file = File::open(input).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let reader = FrameReader::new(BufReader::new(file))?;
    let frames_digest = reader.header().config_digest.clone();
    if frames_digest.as_deref() != Some(digest.as_str()) {
        log::info!("frame file digest {frames_digest:?} differs from the analysis configuration {digest}");
    }
    let storage_time = reader.header().storage_schedule.first().copied().unwrap_or(0.0);
    let mut products = Products::new(&cfg)?;
    for frame in reader {
        products.observe(&frame?);
    }
    let sim = cfg.sim_config().ok();
    let mut lines = products::write_all(&products, &cfg, sim.as_ref(), storage_time, &digest, &dir)?;
    lines.insert(0, format!("frames_config_digest={}", frames_digest.unwrap_or_default()));
    print_lines(&lines);
    Ok(())
}

fn modes_report(sigma: f64, sigma_y: Option<f64>, kappa: f64, n: usize, check: bool, dir: Option<&Path>, digest: &str) -> Result<Vec<String>, CliError> {
    let bad = |e: schmidt::SchmidtError| CliError::Schema(e.to_string());
    let mut lines = Vec::new();
    let mut mode_numbers = Vec::new();
    for (axis, s) in std::iter::once(("x", sigma)).chain(sigma_y.map(|s| ("y", s))) {
        let grid = schmidt::build_amplitude_grid(s, kappa, n).map_err(bad)?;
        let result = schmidt::schmidt_decompose(&grid).map_err(bad)?;
        lines.push(format!("sigma_{axis}={s}"));
        lines.push(format!("M_{axis}={}", result.mode_number));
        lines.push(format!("scaling_{axis}={}", model::mode_number_scaling(kappa, s)));
        if check {
            let conv = schmidt::mode_number_convergence(s, kappa, n).map_err(bad)?;
            lines.push(format!("convergence_{axis}={}", conv.relative_change()));
        }
        if let Some(dir) = dir {
            let header = vec![format!("config_digest={digest}"), format!("sigma={s}"), format!("kappa={kappa}"), format!("grid_n={n}")];
            write_atomic(&dir.join(format!("spectrum_{axis}.csv")), |w| write_spectrum(w, &result, &header))?;
        }
        mode_numbers.push(result.mode_number);
    }
    lines.push(format!("kappa={kappa}"));
    lines.push(format!("grid_n={n}"));
    if let [mx, my] = mode_numbers[..] {
        lines.push(format!("M={}", schmidt::total_mode_number(mx, my)));
    }
    Ok(lines)
}

fn cmd_modes(cli: &Cli, sigma: Option<f64>, sigma_y: Option<f64>, kappa: Option<f64>, n: Option<usize>) -> Result<(), CliError> {
    let cfg = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let section = cfg.as_ref().and_then(|c| c.modes.clone());
    let sigma = sigma
        .or(section.as_ref().map(|s| s.sigma_x))
        .ok_or_else(|| CliError::Usage("--sigma or a [modes] section is required".into()))?;
    let sigma_y = sigma_y.or(section.as_ref().and_then(|s| s.sigma_y));
    let kappa = kappa
        .or(section.as_ref().map(|s| s.kappa))
        .ok_or_else(|| CliError::Usage("--kappa or a [modes] section is required".into()))?;
    let n = n.or(section.as_ref().map(|s| s.grid_n)).unwrap_or(schmidt::DEFAULT_GRID_N);
    let check = section.as_ref().is_some_and(|s| s.convergence_check);
    let digest = cfg.as_ref().map_or_else(|| "none".to_string(), |c| c.digest());
    let dir = cli.out.as_ref().map(|_| out_dir(cli)).transpose()?;
    let lines = modes_report(sigma, sigma_y, kappa, n, check, dir.as_deref(), &digest)?;
    if let Some(dir) = &dir {
        write_kv(&dir.join("modes.txt"), &digest, &lines)?;
    }
    print_lines(&lines);
    Ok(())
}

fn write_kv(path: &Path, digest: &str, lines: &[String]) -> Result<(), CliError> {
    write_atomic(path, |w| {
        writeln!(w, "# config_digest={digest}")?;
        lines.iter().try_for_each(|l| writeln!(w, "{l}"))
    })
}

fn read_lifetime_table(path: &Path) -> Result<Vec<LifetimePoint>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || t.starts_with("t,") {
            continue;
        }
        let v: Vec<f64> = t
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
        let [t, g2, stderr] = v[..] else {
            return Err(CliError::Data(format!("line {}: expected t,g2,stderr", i + 1)));
        };
        points.push(LifetimePoint { t, g2, stderr });
    }
    if points.is_empty() {
        return Err(CliError::Data("no data: the lifetime table is empty".into()));
    }
    Ok(points)
}

fn cmd_fit_lifetime(cli: &Cli, input: &Path) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let digest = cfg.digest();
    let section = cfg.lifetime.clone().ok_or_else(|| CliError::Schema("missing [lifetime] section".into()))?;
    let f_kappa = match section.f_kappa {
        Some(f) => f,
        None => {
            let s = cfg.source()?;
            model::roi_acceptance_anisotropic(cfg.analysis.roi_kappa, s.sigma_x, s.sigma_y).map_err(|e| CliError::Schema(e.to_string()))?
        }
    };
    let inputs = LifetimeInputs {
        p_mode: section.p_mode,
        eta_as: section.eta_as,
        f_kappa,
        region_k: section.region_k,
    };
    let opts = LifetimeOptions {
        xi: section.xi,
        fix_xi: section.fix_xi,
        alpha1: section.alpha1,
        force_alpha2_zero: section.force_alpha2_zero,
        ..LifetimeOptions::with_xi(section.xi)
    };
    let points = read_lifetime_table(input)?;
    let dir = out_dir(cli)?;
    let fit = match fit_lifetime(&points, &inputs, &opts) {
        Ok(f) => f,
        Err(AnalysisError::LifetimeNotConverged(best)) => {
            write_atomic(&dir.join("lifetime_fit.txt"), |w| {
                writeln!(w, "# INVALID: fit did not converge")?;
                write_lifetime_report(w, &best, &digest)
            })?;
            return Err(CliError::Data("lifetime fit did not converge; best parameters written, flagged invalid".into()));
        }
        Err(e @ (AnalysisError::Invalid(_) | AnalysisError::InsufficientData { .. } | AnalysisError::ShortSpan { .. })) => {
            return Err(CliError::Data(e.to_string()))
        }
        Err(e) => return Err(CliError::Data(e.to_string())),
    };
    write_atomic(&dir.join("lifetime_fit.txt"), |w| write_lifetime_report(w, &fit, &digest))?;
    write_atomic(&dir.join("lifetime_curve.csv"), |w| {
        writeln!(w, "# config_digest={digest}")?;
        writeln!(w, "# columns=t,g2,stderr,model")?;
        points
            .iter()
            .try_for_each(|p| writeln!(w, "{},{},{},{}", p.t, p.g2, p.stderr, fit.predict(&inputs, p.t)))
    })?;
    let mut buf = Vec::new();
    write_lifetime_report(&mut buf, &fit, &digest)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn protocol_report(cfg: &RunConfig, workers: usize, dir: &Path, digest: &str) -> Result<Vec<String>, CliError> {
    let (pc, runs) = cfg.protocol()?;
    let s = protocol_ensemble(&pc, runs, workers).map_err(|e| CliError::Schema(e.to_string()))?;
    let (p, p_err) = s.exact_n();
    let (lo, hi) = s.exact_n_ci95();
    let (t, t_err) = s.mean_trials();
    let lines = vec![
        format!("runs={}", s.runs),
        format!("n_target={}", pc.n_target),
        format!("exact_n_probability={p}"),
        format!("exact_n_stderr={p_err}"),
        format!("exact_n_ci95={lo},{hi}"),
        format!("mean_trials={t}"),
        format!("mean_trials_stderr={t_err}"),
        format!("pairs_per_trial={}", s.pairs_per_trial()),
        format!("heralds_per_trial={}", s.heralds_per_trial()),
        format!("double_occupancy_rate={}", s.double_occupancy_rate()),
        format!("overwrites={}", s.overwrites),
        format!("incomplete_runs={}", s.incomplete),
    ];
    write_kv(&dir.join("protocol_report.txt"), digest, &lines)?;
    write_atomic(&dir.join("protocol_distribution.csv"), |w| {
        writeln!(w, "# config_digest={digest}")?;
        writeln!(w, "# columns=photons,probability")?;
        (0..s.output.len()).try_for_each(|n| writeln!(w, "{n},{}", s.probability(n).0))
    })?;
    write_atomic(&dir.join("protocol_conditional.csv"), |w| {
        writeln!(w, "# config_digest={digest}")?;
        writeln!(w, "# columns=registry_size,photons,probability")?;
        for &size in s.by_registry.keys() {
            for (n, p) in s.conditional(size).unwrap_or_default().iter().enumerate() {
                writeln!(w, "{size},{n},{p}")?;
            }
        }
        Ok(())
    })?;
    Ok(lines)
}

fn cmd_protocol(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let digest = cfg.digest();
    let dir = out_dir(cli)?;
    print_lines(&protocol_report(&cfg, cli.workers, &dir, &digest)?);
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let digest = cfg.digest();
    let dir = out_dir(cli)?;
    let sim_cfg = cfg.sim_config()?;
    let sim = Simulator::new(sim_cfg.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    let empty = Products::new(&cfg)?;
    let products = accumulate_simulation(&sim, cli.workers, empty);
    let mut lines = products::write_all(&products, &cfg, Some(&sim_cfg), sim_cfg.storage.at(0), &digest, &dir)?;
    if let Some(m) = &cfg.modes {
        lines.extend(modes_report(m.sigma_x, m.sigma_y, m.kappa, m.grid_n, m.convergence_check, Some(&dir), &digest)?);
    }
    if cfg.protocol.is_some() {
        lines.extend(protocol_report(&cfg, cli.workers, &dir, &digest)?.into_iter().map(|l| format!("protocol_{l}")));
    }
    write_kv(&dir.join("report.txt"), &digest, &lines)?;
    print_lines(&lines);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.workers == 0 {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(cli),
        Command::Analyze { input } => cmd_analyze(cli, input),
        Command::Modes { sigma, sigma_y, kappa, n } => cmd_modes(cli, *sigma, *sigma_y, *kappa, *n),
        Command::FitLifetime { input } => cmd_fit_lifetime(cli, input),
        Command::Protocol => cmd_protocol(cli),
        Command::Report => cmd_report(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kmux: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

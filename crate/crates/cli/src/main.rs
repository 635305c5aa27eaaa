//! `rydberg`: scene synthesis, measurement simulation, estimation, CRLB and
//! Monte Carlo sweeps from the command line.
//!
//! Exit codes: 0 on success, 1 on any error, 3 when an estimator stops at
//! `max_iters` without meeting its tolerance.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rydberg_core::atomic_model::{slice_ranks, synth_channel, synth_reference};
use rydberg_core::bench::{nmse, run_sweep, write_table, ExperimentSpec};
use rydberg_core::crlb::{closed_form_crb_trace, consistent_crb_trace};
use rydberg_core::estimators::estimate;
use rydberg_core::formats::{
    read_json, read_toml, write_json, write_toml, ChannelFile, CrlbFile, MeasurementFile, ReportFile, SceneConfig,
    SceneFile, SweepManifest, CRLB_SCHEMA,
};
use rydberg_core::measurement::{measure, sigma_from_snr, MeasurementModel};
use rydberg_core::{EstimatorConfig, EstimatorKind};

const EXIT_MAX_ITERS: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "rydberg",
    version,
    about = "Channel estimation for Rydberg atomic MIMO receivers"
)]
struct Cli {
    /// More detail on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a scene and write the frozen scene plus its channel.
    Synth(SynthArgs),
    /// Measure a frozen scene under the exact or linearized model.
    Simulate(SimulateArgs),
    /// Run an estimator on a measurement bundle.
    Estimate(EstimateArgs),
    /// Cramer-Rao bounds for a measurement bundle.
    Crlb(CrlbArgs),
    /// Monte Carlo NMSE sweep; writes the results table and a run manifest.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene recipe (TOML: seed, users, paths, pilots, array, profile).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for scene.toml and channel.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Frozen scene written by `synth`.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "exact")]
    model: MeasurementModel,
    /// SNR of the user signal in dB (reference excluded).
    #[arg(long, conflicts_with = "sigma")]
    snr_db: Option<f64>,
    /// Complex noise standard deviation, instead of --snr-db.
    #[arg(long)]
    sigma: Option<f64>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for measurement.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write the columnar table (i, p, y, re_z, im_z, abs_b).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    measurements: PathBuf,
    /// True channel; enables the NMSE report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// gd, pgd or gs. Defaults to pgd on planar arrays and gd otherwise.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Estimator settings (TOML, unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    /// Seed for random initialization; implies `init = random`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CrlbArgs {
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "crlb.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// fig3, fig3-small, fig4 or fig5.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Experiment spec (TOML, unknown keys rejected), or a manifest JSON from
    /// an earlier sweep to rerun it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated subset of estimators, e.g. gd,pgd.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<EstimatorKind>>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated pilot lengths.
    #[arg(long, value_delimiter = ',')]
    pilots: Option<Vec<usize>>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Results table (CSV); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run manifest; defaults to `<out>.manifest.json` next to the table.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.verbose),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a, cli.verbose),
        Command::Crlb(a) => crlb(a),
        Command::Sweep(a) => sweep(a, cli.verbose),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(a: &SynthArgs, verbose: u8) -> Result<ExitCode> {
    let mut config = match &a.config {
        Some(path) => read_toml::<SceneConfig>(path).with_context(|| format!("reading {}", path.display()))?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let scene = config.draw()?;
    let channel = synth_channel(&scene)?;
    ensure_dir(&a.out)?;
    write_toml(&a.out.join("scene.toml"), &SceneFile::new(config.clone(), Some(&scene)))?;
    write_json(&a.out.join("channel.json"), &ChannelFile::from(&channel))?;

    println!(
        "scene: {} array {}, K={}, L={}, P={}, seed {}, profile {}",
        config.array.label(),
        shape_text(config.array),
        config.users,
        config.paths,
        config.pilots,
        config.seed,
        config.profile
    );
    if config.array.is_planar() {
        println!("slice ranks: {:?}", slice_ranks(&channel, 1e-10));
    }
    if verbose > 0 {
        eprintln!("channel power {:.6e}", channel.power());
    }
    println!(
        "wrote {} and {}",
        a.out.join("scene.toml").display(),
        a.out.join("channel.json").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn shape_text(dims: rydberg_core::ArrayDims) -> String {
    let (r, c) = dims.shape();
    if dims.is_planar() {
        format!("{r}x{c}")
    } else {
        format!("{}", r * c)
    }
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let file: SceneFile = read_toml(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let scene = file.scene()?;
    let channel = synth_channel(&scene)?;
    let refs = synth_reference(&scene)?;
    let sigma = match (a.sigma, a.snr_db) {
        (Some(s), _) => s,
        (None, Some(snr)) => sigma_from_snr(&channel, &scene.pilots, snr)?,
        (None, None) => bail!("one of --snr-db or --sigma is required"),
    };
    let m = measure(a.model, &channel, &scene.pilots, &refs, sigma, a.seed)?;
    ensure_dir(&a.out)?;
    let path = a.out.join("measurement.json");
    write_json(&path, &MeasurementFile::from(&m))?;
    if let Some(csv) = &a.csv {
        m.write_csv(BufWriter::new(File::create(csv)?))?;
    }
    println!(
        "measured {} cells x {} pilots, model {}, sigma {:.6e}; wrote {}",
        m.n_cells(),
        m.pilot_len(),
        a.model,
        sigma,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn estimate_cmd(a: &EstimateArgs, verbose: u8) -> Result<ExitCode> {
    let bundle: MeasurementFile =
        read_json(&a.measurements).with_context(|| format!("reading {}", a.measurements.display()))?;
    let m = bundle.measurements()?;
    let truth = match &a.truth {
        Some(path) => Some(
            read_json::<ChannelFile>(path)
                .with_context(|| format!("reading {}", path.display()))?
                .channel()?,
        ),
        None => None,
    };
    let mut cfg = match &a.config {
        Some(path) => read_toml::<EstimatorConfig>(path).with_context(|| format!("reading {}", path.display()))?,
        None => EstimatorConfig::default(),
    };
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.rank {
        cfg.rank_budget = v;
    }
    if let Some(seed) = a.seed {
        cfg.init = rydberg_core::estimators::Init::Random { seed };
    }
    let kind = a.estimator.unwrap_or(if m.dims.is_planar() {
        EstimatorKind::Pgd
    } else {
        EstimatorKind::Gd
    });
    let report = estimate(kind, &m, &cfg)?;
    let error = truth.as_ref().map(|g| nmse(&report.estimate, g)).transpose()?;
    write_json(&a.out, &ReportFile::new(kind, &report, error))?;

    println!("estimator: {kind}");
    println!("iterations: {}", report.iterations);
    println!("final loss: {:.6e}", report.final_loss);
    println!("converged: {}", report.converged);
    if let Some(e) = error {
        println!("nmse: {e:.6e}");
    }
    if verbose > 0 {
        let step = (report.loss_trace.len() / 10).max(1);
        for (i, l) in report.loss_trace.iter().enumerate().step_by(step) {
            eprintln!("  iter {i:>5}  loss {l:.6e}");
        }
    }
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "stopped at max_iters = {} before reaching tol = {:e}",
            cfg.max_iters, cfg.tol
        );
        Ok(ExitCode::from(EXIT_MAX_ITERS))
    }
}

fn crlb(a: &CrlbArgs) -> Result<ExitCode> {
    let bundle: MeasurementFile =
        read_json(&a.measurements).with_context(|| format!("reading {}", a.measurements.display()))?;
    let m = bundle.measurements()?;
    let closed = closed_form_crb_trace(&m.s, m.sigma, m.dims)?;
    let consistent = consistent_crb_trace(&m)?;
    let power = match &a.truth {
        Some(path) => Some(read_json::<ChannelFile>(path)?.channel()?.power()),
        None => None,
    };
    let out = CrlbFile {
        schema: CRLB_SCHEMA.into(),
        sigma: m.sigma,
        crb_trace_closed_form: closed,
        crb_trace_consistent: consistent,
        ratio: closed / consistent,
        nmse_floor_closed_form: power.map(|p| closed / p),
        nmse_floor: power.map(|p| consistent / p),
    };
    write_json(&a.out, &out)?;
    println!("tr(CRB) closed form: {closed:.6e}");
    println!("tr(CRB) consistent:  {consistent:.6e}");
    println!("ratio: {:.4}", out.ratio);
    if let (Some(fp), Some(fc)) = (out.nmse_floor_closed_form, out.nmse_floor) {
        println!("nmse floor closed form: {fp:.6e}");
        println!("nmse floor consistent:  {fc:.6e}");
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: &SweepArgs, verbose: u8) -> Result<ExitCode> {
    let mut spec = match (&a.preset, &a.config) {
        (Some(name), _) => ExperimentSpec::preset(name)?,
        (None, Some(path)) if path.extension().is_some_and(|e| e == "json") => read_json::<SweepManifest>(path)
            .with_context(|| format!("reading {}", path.display()))?
            .spec()?
            .clone(),
        (None, Some(path)) => {
            read_toml::<ExperimentSpec>(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, None) => bail!("one of --preset or --config is required"),
    };
    if let Some(list) = &a.estimators {
        spec.estimators = list.clone();
    }
    if let Some(seed) = a.seed {
        spec.base_seed = seed;
    }
    if let Some(trials) = a.trials {
        spec.trials = trials;
    }
    if let Some(grid) = &a.snr_db {
        spec.snr_db = grid.clone();
    }
    if let Some(pilots) = &a.pilots {
        spec.pilot_lengths = pilots.clone();
    }
    let started = std::time::Instant::now();
    let result = run_sweep(&spec, a.workers)?;

    match &a.out {
        Some(path) => write_table(&result, BufWriter::new(File::create(path)?))?,
        None => write_table(&result, io::stdout().lock())?,
    }
    let manifest = a
        .manifest
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("manifest.json")));
    if let Some(path) = &manifest {
        write_json(path, &SweepManifest::from(&result))?;
    }

    let mut err = io::stderr().lock();
    writeln!(
        err,
        "sweep {}: {} points x {} trials in {:.1} s",
        spec.name,
        result.points.len(),
        spec.trials,
        started.elapsed().as_secs_f64()
    )?;
    for p in &result.points {
        let cols: Vec<String> = p
            .estimators
            .iter()
            .map(|e| format!("{} {:.3e}", e.estimator, e.mean_nmse))
            .collect();
        writeln!(
            err,
            "  P={:<3} snr={:>5} dB  {}  floor {:.3e}",
            p.pilot_len,
            p.snr_db,
            cols.join("  "),
            p.crlb_floor
        )?;
        if verbose > 0 {
            for e in &p.estimators {
                writeln!(
                    err,
                    "      {}: stderr {:.2e}, mean iters {:.1}, converged {}/{}, failures {}",
                    e.estimator, e.stderr, e.mean_iterations, e.converged, p.trials, e.failures
                )?;
            }
        }
    }
    if let Some(path) = &manifest {
        writeln!(err, "manifest: {}", path.display())?;
    }
    Ok(ExitCode::SUCCESS)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use passive_ifir::experiment::{
    cmd_evaluate, cmd_probe, cmd_train, load_candidates, preset, set_jobs, ExperimentConfig,
    Summary, PRESETS,
};
use passive_ifir::report::write_report;
use passive_ifir::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "pifir", version, about = "Learn and evaluate passive iFIR velocity controllers")]
struct Cli {
    /// Experiment configuration (JSON, schema 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled configuration to use instead of --config.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory; every artifact is written below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Controller files to evaluate instead of <out>/controllers.
    #[arg(long, global = true, num_args = 1..)]
    controller: Vec<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Run the multisine experiment and write probe.csv.
    Probe,
    /// Fit the configured controller variants from probe data.
    Train,
    /// Run the evaluation scenarios and write summary.json.
    Evaluate,
    /// Render SVG tracking and Bode plots of an evaluated run.
    Report,
    /// Probe, train, evaluate and report in one run (joint_nominal by default).
    Demo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Json(_)
        | Error::Missing(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::RateMismatch(..)
        | Error::NonMinimumPhase(_)
        | Error::Csv(_) => EXIT_CONFIG,
        Error::Infeasible(_) | Error::IterationLimit(_) | Error::NotCertified(_) => EXIT_SOLVER,
        _ => EXIT_FAILURE,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --config or --preset, not both".into())),
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) if cli.command == Command::Demo => preset(PRESETS[0])?,
        (None, None) if cli.command == Command::Report => preset(PRESETS[0])?,
        (None, None) => return Err(Error::Config("no configuration: pass --config <file> or --preset <name>".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.controller.is_empty() {
        cfg.controllers = cli.controller.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    cli.out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out <dir>".into()))
}

fn run(cli: &Cli) -> Result<u8, Error> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        set_jobs(jobs)?;
    }
    let cfg = load_config(cli)?;
    let out = out_dir(cli, &cfg)?;
    match cli.command {
        Command::Probe => probe(&cfg, &out).map(|_| 0),
        Command::Train => train(&cfg, &out).map(|_| 0),
        Command::Evaluate => evaluate(&cfg, &out).map(|s| divergence_code(&s)),
        Command::Report => report(&out).map(|_| 0),
        Command::Demo => {
            probe(&cfg, &out)?;
            train(&cfg, &out)?;
            let summary = evaluate(&ExperimentConfig { controllers: Vec::new(), ..cfg }, &out)?;
            report(&out)?;
            Ok(divergence_code(&summary))
        }
    }
}

fn divergence_code(summary: &Summary) -> u8 {
    if summary.any_diverged {
        EXIT_DIVERGED
    } else {
        0
    }
}

fn probe(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let data = cmd_probe(cfg, out)?;
    println!(
        "probe: {} samples x {} channels at {} Hz -> {}",
        data.u.len(),
        data.u.channels(),
        cfg.loop_cfg.plant_rate_hz,
        out.join("probe.csv").display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    for (path, t) in cmd_train(cfg, out)? {
        let record = t.record();
        let passive = match (&t.file.certificate, record.certified_passive) {
            (None, _) => "n/a".to_string(),
            (Some(c), true) => format!("certified (min eig {:.3e})", c.dense_check_min_eig),
            (Some(c), false) => format!("NOT passive (min eig {:.3e})", c.dense_check_min_eig),
        };
        let solve = match (record.iterations, record.converged) {
            (Some(it), Some(true)) => format!(", {it} iterations"),
            (Some(it), Some(false)) => format!(", stopped at {it} iterations"),
            _ => String::new(),
        };
        println!(
            "train: {:<20} {:>8.2} s  passivity {passive}{solve} -> {}",
            t.file.name,
            t.wall_time_s,
            path.display()
        );
    }
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Summary, Error> {
    let candidates = load_candidates(&cfg.controllers, out)?;
    let summary = cmd_evaluate(cfg, candidates, out)?;
    for row in &summary.rows {
        for e in &row.entries {
            let score = match (e.nrmse, e.diverged_at_s) {
                (Some(v), _) => format!("nrmse {v:.4}"),
                (None, Some(t)) => format!("DIVERGED at {t:.3} s"),
                (None, None) => "DIVERGED".to_string(),
            };
            let gain = e
                .improvement_pct
                .map(|p| format!("  improvement {p:+.1}%"))
                .unwrap_or_default();
            let tag = if e.certified_passive { " [passive]" } else { "" };
            println!("evaluate: {:<28} {:<20}{tag} {score}{gain}", row.scenario, e.controller);
        }
    }
    for sweep in &summary.sweeps {
        for e in &sweep.entries {
            println!(
                "evaluate: {:<28} {:<20} worst gain error {:.4}, diverged tones {}",
                sweep.scenario, e.controller, e.worst_gain_error, e.diverged_tones
            );
        }
    }
    println!("evaluate: summary -> {}", out.join("summary.json").display());
    Ok(summary)
}

fn report(out: &Path) -> Result<(), Error> {
    for path in write_report(out)? {
        println!("report: {}", path.display());
    }
    Ok(())
}

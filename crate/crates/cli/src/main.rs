//! `cylscat`: scenario pipelines for multichannel scattering on cylinders.

mod output;
mod report;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};

use cylscat::scenario::config::ScenarioConfig;
use output::{scenario_hash, OutDir, RunManifest, StageRecord, Status};
use stages::{Context, Failure, MethodChoice, Stage};

#[derive(Parser)]
#[command(name = "cylscat", version, about = "Multichannel scattering on manifolds with cylindrical ends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the seed of the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run stages whose admissibility conditions fail, without certificates.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Transverse thresholds and bound states.
    Spectrum,
    /// S-matrix sweep.
    Smatrix {
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
    /// Limiting-absorption probe.
    Lap,
    /// Mourre commutator compression.
    Mourre,
    /// Wave-operator preparation series.
    Propagate,
    /// Symmetrized time delay against its spectral value.
    Timedelay,
    /// Render report.md and plots from the outputs in --out.
    Report,
    /// Several stages in dependency order (default: all).
    Run {
        #[arg(long, value_enum, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[arg(long, value_enum)]
        method: Option<MethodChoice>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| Failure::Internal(e.to_string()))?;
    }
    let (stages, method) = match cli.command {
        Command::Report => return report(&cli.out).map_err(internal),
        Command::Spectrum => (vec![Stage::Spectrum], None),
        Command::Smatrix { method } => (vec![Stage::Smatrix], method),
        Command::Lap => (vec![Stage::Lap], None),
        Command::Mourre => (vec![Stage::Mourre], None),
        Command::Propagate => (vec![Stage::Propagate], None),
        Command::Timedelay => (vec![Stage::Timedelay], None),
        Command::Run { stages, method } => (if stages.is_empty() { Stage::ALL.to_vec() } else { stages }, method),
    };
    let path = cli.config.as_deref().ok_or_else(|| Failure::Config("--config is required for this command".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("reading {}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::parse(&text, &path.display().to_string()).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let scenario = cfg.build(base).map_err(|e| Failure::Config(e.to_string()))?;
    let out = OutDir::create(&cli.out, scenario_hash(&text, cli.seed)).map_err(internal)?;
    let ctx = Context { seed: cfg.seed, cfg, scenario, out, force: cli.force, method };
    run(&ctx, &path.display().to_string(), stages, cli.jobs.unwrap_or_else(rayon::current_num_threads))
}

fn internal(e: anyhow::Error) -> Failure {
    Failure::Internal(format!("{e:#}"))
}

/// Run `stages` in dependency order and write the manifest last.
fn run(ctx: &Context, config: &str, mut stages: Vec<Stage>, jobs: usize) -> Result<u8, Failure> {
    stages.sort();
    stages.dedup();
    let mut records = Vec::new();
    let mut code = 0u8;
    for stage in &stages {
        let start = Instant::now();
        let outcome = ctx.run(*stage);
        let seconds = start.elapsed().as_secs_f64();
        let (status, message) = match &outcome.result {
            Ok(m) => (Status::Pass, m.clone()),
            Err(f) => {
                code = code.max(f.exit_code());
                (f.status(), f.to_string())
            }
        };
        println!("{:<10} {:<8} {message} [{seconds:.1} s]", stage.name(), format!("{status:?}").to_lowercase());
        records.push(StageRecord { stage: stage.name().into(), status, message, seconds, files: outcome.files });
    }
    // Records of earlier runs on the same scenario survive unless rerun.
    let previous = RunManifest::read(&ctx.out).ok().flatten().filter(|m| m.scenario_hash == ctx.out.hash);
    let mut all: Vec<StageRecord> = previous.map(|m| m.stages).unwrap_or_default();
    all.retain(|r| !records.iter().any(|n| n.stage == r.stage));
    all.extend(records);
    let order = |name: &str| Stage::ALL.iter().position(|s| s.name() == name).unwrap_or(usize::MAX);
    all.sort_by_key(|r| order(&r.stage));
    let mut files: Vec<String> = all.iter().flat_map(|r| r.files.iter().cloned()).collect();
    files.sort();
    files.dedup();
    let manifest = RunManifest {
        scenario_hash: ctx.out.hash.clone(),
        config: config.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: ctx.seed,
        jobs,
        stages_requested: stages.iter().map(|s| s.name().to_string()).collect(),
        stages: all,
        files,
    };
    manifest.write(&ctx.out).map_err(internal)?;
    Ok(code)
}

fn report(out: &Path) -> Result<u8> {
    let r = report::emit_report(out).with_context(|| format!("rendering the report in {}", out.display()))?;
    println!("wrote {} with {} plot(s)", out.join(&r.document).display(), r.plots.len());
    if r.gaps > 0 {
        println!("{} section(s) flagged as missing", r.gaps);
    }
    Ok(0)
}

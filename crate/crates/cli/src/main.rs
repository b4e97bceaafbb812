//! `slicefuzz`: run campaigns and inspect traces, slices and reports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slicefuzz_core::ast_index::{build_ast_index, AstIndex, CondId};
use slicefuzz_core::config::CampaignConfig;
use slicefuzz_core::orchestrator::{emit_report, load_metrics, run_campaign, Summary};
use slicefuzz_core::slicer::build_slice;
use slicefuzz_core::tracer::{
    instrument, render_trace, BuildOptions, TracedProgram, DEFAULT_TIMEOUT,
};
use slicefuzz_core::{Error, Result};

#[derive(Parser)]
#[command(name = "slicefuzz", version, about = "Greybox fuzzing with slice-guided roadblock solving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a traced binary once and print its trace.
    Trace {
        /// Binary built by slicefuzz (its `.sfmap.json` sidecar must exist).
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Stop at the first evaluation of this guard (`file@byte` or
        /// `name.c:LINE`).
        #[arg(long)]
        stop_at: Option<String>,
        /// Subject arguments; `@@` stands for the input file.
        #[arg(last = true)]
        args: Vec<String>,
    },
    /// Print the flattened slice for reaching one arm from a seed.
    Slice {
        #[arg(long)]
        target_cond: String,
        #[arg(long)]
        arm: u16,
        #[arg(long)]
        seed: PathBuf,
        /// Campaign file naming the subject sources.
        #[arg(long, required_unless_present = "source")]
        config: Option<PathBuf>,
        /// Subject source file; repeat for several.
        #[arg(long)]
        source: Vec<PathBuf>,
    },
    /// Re-emit and print the report of a finished or running campaign.
    Report { outdir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => run(&config),
        Command::Trace {
            target,
            input,
            stop_at,
            args,
        } => trace(&target, &input, stop_at.as_deref(), args),
        Command::Slice {
            target_cond,
            arm,
            seed,
            config,
            source,
        } => slice(&target_cond, arm, &seed, config.as_deref(), source),
        Command::Report { outdir } => report(&outdir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slicefuzz: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::SourceRead { .. } => 2,
        Error::Build { .. } => 3,
        _ => 1,
    }
}

fn print_summary(s: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(s)?;
    writeln!(std::io::stdout(), "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn run(config: &Path) -> Result<()> {
    let cfg = CampaignConfig::load(config)?;
    let out = cfg.campaign.out.clone();
    let metrics = run_campaign(cfg)?;
    print_summary(&emit_report(&metrics, &out)?)
}

fn trace(target: &Path, input: &Path, stop_at: Option<&str>, args: Vec<String>) -> Result<()> {
    let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let mut program = TracedProgram::load(target, work.path())?;
    program.args = args;
    let stop = match stop_at {
        Some(spec) => Some(
            program
                .manifest
                .find_guard(spec)
                .ok_or_else(|| Error::UnknownConditional(spec.to_string()))?
                .0,
        ),
        None => None,
    };
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let t = program.run_traced(&bytes, stop, DEFAULT_TIMEOUT)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    render_trace(&t, &program.manifest, &mut lock).map_err(|e| Error::io("<stdout>", e))
}

fn resolve_cond(index: &AstIndex, spec: &str) -> Result<CondId> {
    if let Ok(id) = spec.parse::<CondId>() {
        if index.conditional(id).is_some() {
            return Ok(id);
        }
    }
    index
        .find_conditional(spec)
        .map(|c| c.cond_id)
        .ok_or_else(|| Error::UnknownConditional(spec.to_string()))
}

fn slice(
    target_cond: &str,
    arm: u16,
    seed: &Path,
    config: Option<&Path>,
    sources: Vec<PathBuf>,
) -> Result<()> {
    let (sources, cc, cflags, args) = match config {
        Some(p) => {
            let c = CampaignConfig::load(p)?;
            (c.subject.sources, c.subject.cc, c.subject.cflags, c.subject.args)
        }
        None => {
            let d = BuildOptions::new(".");
            (sources, d.cc, d.cflags, Vec::new())
        }
    };
    let index = build_ast_index(&sources)?;
    let cond = resolve_cond(&index, target_cond)?;
    let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let mut opts = BuildOptions::new(work.path().join("build"));
    opts.cc = cc;
    opts.cflags = cflags;
    let mut program = instrument(&index, &opts)?;
    program.args = args;
    let bytes = std::fs::read(seed).map_err(|e| Error::io(seed, e))?;
    let t = program.run_traced(&bytes, Some(cond), DEFAULT_TIMEOUT)?;
    if t.truncated_at != Some(cond) {
        return Err(Error::Slice(format!(
            "{} does not reach {target_cond}",
            seed.display()
        )));
    }
    let s = build_slice(&index, &t, cond, arm)?;
    for w in &s.warnings {
        log::warn!("{w}");
    }
    print!("{}", s.flattened);
    Ok(())
}

fn report(outdir: &Path) -> Result<()> {
    let metrics = load_metrics(outdir)?;
    print_summary(&emit_report(&metrics, outdir)?)
}

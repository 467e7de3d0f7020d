//! Command-line interface. The parser definitions below are also the source
//! of `docs/CLI.md` (see [`cli_reference`]).

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use echosyn_core::{par, video};

use crate::config::ProtocolConfig;
use crate::error::{PipelineError, Result};
use crate::protocol::{self, run_stage};
use crate::store::{write_text, Run};

/// Synthetic echo video generation with privacy filtering and evaluation.
#[derive(Debug, Parser)]
#[command(name = "echosyn", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; overrides the `seed` key of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Protocol config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
    /// Worker threads for data-parallel work (0 = all cores).
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
    /// Skip stages whose recorded inputs are unchanged.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the toy echo dataset and its manifest.
    SynthData,
    /// Encode every real video to latents.
    Encode,
    /// Train the re-identification embedder on training latents.
    TrainReid,
    /// Calibrate the privacy threshold on train-vs-validation distances.
    Calibrate,
    /// Train the latent image model that samples anchor frames.
    TrainLidm,
    /// Train the EF-conditioned latent video model.
    TrainLvdm,
    /// Sample anchors and keep those that pass the privacy filter.
    Filter,
    /// Animate the filtered anchors into the synthetic dataset, or one
    /// video from `--anchor`.
    Generate(GenerateArgs),
    /// Image, video and reconstruction metrics.
    Metrics,
    /// EF regression trained on real and on synthetic videos.
    Downstream,
    /// Run every stage in order and write the report.
    Protocol,
    /// Time long-video sampling against the number of windows.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Frames in the generated video (must be stitchable).
    #[arg(long, value_name = "N", requires = "anchor")]
    pub frames: Option<usize>,
    /// Window of the video model; must match the trained model.
    #[arg(long, value_name = "M", requires = "anchor")]
    pub window: Option<usize>,
    /// Ejection fraction in percent.
    #[arg(long, value_name = "PCT", requires = "anchor")]
    pub ef: Option<f64>,
    /// EVT1 file holding a latent frame (1, 4, h, w) or a pixel frame
    /// (1, 1, H, W).
    #[arg(long, value_name = "PATH")]
    pub anchor: Option<PathBuf>,
    /// Where to write the video; defaults to `<out>/generated.evt`.
    #[arg(long, value_name = "PATH", requires = "anchor")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Video lengths to time, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16,48,112,240")]
    pub lengths: Vec<usize>,
    /// Repetitions per length; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Also time one window at twice the sampling steps.
    #[arg(long)]
    pub steps_doubling: bool,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::SynthData => "data",
            Command::Encode => "encode",
            Command::TrainReid => "reid",
            Command::Calibrate => "calibrate",
            Command::TrainLidm => "lidm",
            Command::TrainLvdm => "lvdm",
            Command::Filter => "anchors",
            Command::Generate(g) if g.anchor.is_none() => "videos",
            Command::Metrics => "metrics",
            Command::Downstream => "downstream",
            _ => return None,
        })
    }
}

pub fn load_config(global: &GlobalArgs) -> Result<ProtocolConfig> {
    let mut cfg = match &global.config {
        Some(p) => ProtocolConfig::load(p)?,
        None => ProtocolConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Execute a parsed command; returns what it printed on stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    let cfg = load_config(&cli.global)?;
    let run = Run::open(&cli.global.out, cfg, cli.global.resume)?;
    println!("config {}", run.hash);
    par::with_threads(cli.global.threads, || dispatch(cli, &run))
}

fn dispatch(cli: &Cli, run: &Run) -> Result<String> {
    if let Some(stage) = cli.command.stage() {
        run_stage(run, stage)?;
        return Ok(format!("{stage} done"));
    }
    match &cli.command {
        Command::Protocol => {
            let r = protocol::run_protocol(run)?;
            Ok(format!(
                "report {}\nrejection rate {:.4}\nR2 real->real {:?}, synthetic->real {:?}, synthetic->synthetic {:?}",
                run.path(crate::stages::REPORT).display(),
                r.rejection_rate(),
                r.real_on_real(),
                r.syn_on_real(),
                r.syn_on_syn()
            ))
        }
        Command::Bench(b) => {
            let t = protocol::bench_sampling(run, &b.lengths, b.reps, b.steps_doubling)?;
            let csv = t.to_csv();
            write_text(run, "reports/bench.csv", &csv)?;
            Ok(csv)
        }
        Command::Generate(g) => {
            let anchor = g.anchor.as_deref().expect("anchor-less generate is a stage");
            let frames = g.frames.unwrap_or(run.cfg.lvdm.window);
            let window = g.window.unwrap_or(run.cfg.lvdm.window);
            let ef = g.ef.unwrap_or(55.0);
            if !(0.0..=100.0).contains(&ef) {
                return Err(PipelineError::Config(format!("--ef {ef} is outside [0, 100]")));
            }
            let v = protocol::generate_one(run, anchor, ef, frames, window)?;
            let out = g.output.clone().unwrap_or_else(|| run.path("generated.evt"));
            video::save(&out, &v)?;
            Ok(format!("wrote {} ({frames} frames)", out.display()))
        }
        _ => unreachable!("stage commands handled above"),
    }
}

/// Markdown reference for every subcommand and flag, built from the parser.
pub fn cli_reference() -> String {
    let cmd = Cli::command();
    let mut s = String::from("# `echosyn` command reference\n\nGenerated from the argument parser; do not edit by hand.\n\n");
    s.push_str("## Global flags\n\n");
    for a in cmd.get_arguments().filter(|a| a.is_global_set()) {
        s.push_str(&arg_line(a));
    }
    for sub in cmd.get_subcommands() {
        s.push_str(&format!("\n## `echosyn {}`\n\n", sub.get_name()));
        if let Some(about) = sub.get_long_about().or(sub.get_about()) {
            let about = about.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            s.push_str(&format!("{about}{}\n", if about.ends_with('.') { "" } else { "." }));
        }
        let own: Vec<_> = sub
            .get_arguments()
            .filter(|a| !a.is_global_set() && a.get_long().is_some() && a.get_id() != "help" && a.get_id() != "version")
            .collect();
        if !own.is_empty() {
            s.push('\n');
        }
        for a in own {
            s.push_str(&arg_line(a));
        }
    }
    s
}

fn arg_line(a: &clap::Arg) -> String {
    let long = a.get_long().unwrap_or_default();
    let value = match a.get_action() {
        ArgAction::Set | ArgAction::Append => format!(
            " <{}>",
            a.get_value_names()
                .map(|v| v[0].to_string())
                .unwrap_or_else(|| a.get_id().as_str().to_uppercase())
        ),
        _ => String::new(),
    };
    let mut help = a
        .get_help()
        .map(|h| h.to_string().split_whitespace().collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    if !help.ends_with('.') {
        help.push('.');
    }
    let defaults: Vec<String> = a.get_default_values().iter().map(|d| d.to_string_lossy().into_owned()).collect();
    let default = if defaults.is_empty() || !a.get_action().takes_values() {
        String::new()
    } else {
        format!(" Default: `{}`.", defaults.join(","))
    };
    format!("- `--{long}{value}`: {help}{default}\n")
}

/// Every long flag the parser accepts, global ones included.
pub fn all_flags() -> Vec<String> {
    let cmd = Cli::command();
    let mut out: Vec<String> = cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    for sub in cmd.get_subcommands() {
        out.extend(sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)));
    }
    out.extend(["help".to_string(), "version".to_string()]);
    out.sort();
    out.dedup();
    out
}

pub fn subcommand_names() -> Vec<String> {
    Cli::command().get_subcommands().map(|s| s.get_name().to_string()).collect()
}

pub fn write_reference(path: &Path) -> std::io::Result<()> {
    std::fs::write(path, cli_reference())
}

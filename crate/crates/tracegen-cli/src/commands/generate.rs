use std::path::PathBuf;

use anyhow::Context;
use tracegen_core::fixture::DEFAULT_START;
use tracegen_core::generator::{
    generate, generate_two_stage, GenerationRequest, Horizon, RareMode, DEFAULT_MAX_EVENTS,
};
use tracegen_core::heads::SamplingMode;
use tracegen_core::ingest::{format_float, write_canonical_csv};
use tracegen_core::model::ModelCheckpoint;

use super::load_trace;
use crate::errors::{data, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Stochastic,
    Argmax,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum RareArg {
    /// Rare-bucket draws are emitted with the sentinel token (port 0)
    Emit,
    /// Rare-bucket mass is redistributed over the concrete tokens
    Resample,
}

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("horizon").required(true).multiple(false)))]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Attribute-stage checkpoint of a two-stage pair
    #[arg(long)]
    pub checkpoint2: Option<PathBuf>,
    /// Stop after exactly this many events
    #[arg(long, group = "horizon")]
    pub events: Option<u64>,
    /// Stop before this many seconds of simulated time elapse
    #[arg(long, group = "horizon")]
    pub duration: Option<f64>,
    /// First-event clock origin, epoch seconds
    #[arg(long, default_value_t = DEFAULT_START)]
    pub start: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Separate seed for the attribute stage (defaults to seed+1)
    #[arg(long)]
    pub stage2_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Stochastic)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = RareArg::Emit)]
    pub rare: RareArg,
    /// Safety cap on generated events under a duration horizon
    #[arg(long, default_value_t = DEFAULT_MAX_EVENTS)]
    pub max_events: u64,
    /// Observed trace run through the encoder before sampling starts
    #[arg(long)]
    pub warmup: Option<PathBuf>,
    #[arg(long, default_value = "synth.csv")]
    pub out: PathBuf,
}

fn load_checkpoint(path: &PathBuf) -> Result<ModelCheckpoint, CliError> {
    ModelCheckpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(data)
}

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let horizon = match (args.events, args.duration) {
        (Some(n), None) => Horizon::Events(n),
        (None, Some(secs)) => Horizon::Duration(secs),
        _ => unreachable!("clap enforces exactly one horizon flag"),
    };
    let mut req = GenerationRequest::new(args.start, horizon, args.seed);
    req.stage2_seed = args.stage2_seed;
    req.mode = match args.mode {
        ModeArg::Stochastic => SamplingMode::Stochastic,
        ModeArg::Argmax => SamplingMode::Argmax,
    };
    req.rare_mode = match args.rare {
        RareArg::Emit => RareMode::Emit,
        RareArg::Resample => RareMode::Resample,
    };
    req.max_events = args.max_events;
    if let Some(path) = &args.warmup {
        req.warmup = Some(load_trace(path, ckpt.config.kind)?);
    }

    let ds = match &args.checkpoint2 {
        Some(p2) => {
            let ckpt2 = load_checkpoint(p2)?;
            generate_two_stage(&ckpt, &ckpt2, &req).map_err(data)?
        }
        None => generate(&ckpt, &req).map_err(data)?,
    };

    let mut stamp = RunStamp::new("generate");
    stamp.push("checkpoint", args.checkpoint.display());
    stamp.push_opt("checkpoint2", args.checkpoint2.as_ref().map(|p| p.display()));
    match horizon {
        Horizon::Events(n) => stamp.push("events", n),
        Horizon::Duration(secs) => stamp.push("duration", format_float(secs)),
    }
    stamp.push("start", format_float(args.start));
    stamp.push("seed", args.seed);
    stamp.push_opt("stage2_seed", args.stage2_seed);
    stamp.push("mode", format!("{:?}", args.mode).to_lowercase());
    stamp.push("rare", format!("{:?}", args.rare).to_lowercase());
    stamp.push("max_events", args.max_events);
    stamp.push_opt("warmup", args.warmup.as_ref().map(|p| p.display()));

    let mut buf = Vec::new();
    write_canonical_csv(&mut buf, &ds, &stamp.comment_lines()).map_err(data)?;
    atomic_write(&args.out, &buf)?;
    println!("{} records -> {}", ds.len(), args.out.display());
    Ok(())
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use tracegen_core::config::ConfigFile;
use tracegen_core::ingest::format_float;
use tracegen_core::model::{train, train_two_stage, EpochStats, Task, TempoNetConfig};

use super::{load_trace, KindArg};
use crate::errors::{from_model, usage, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Training trace in canonical CSV layout
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Config file; `[model]` keys mirror the flags below, flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train the timing/pair model and the attribute model separately
    #[arg(long)]
    pub two_stage: bool,
    #[arg(long)]
    pub mixture_k: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub ip_dim: Option<usize>,
    #[arg(long)]
    pub port_dim: Option<usize>,
    #[arg(long)]
    pub proto_dim: Option<usize>,
    /// Truncated-backprop window length, in events
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tokens seen fewer times than this fold into the rare bucket
    #[arg(long)]
    pub rare_threshold: Option<usize>,
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Per-epoch loss log
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
}

const MODEL_KEYS: [&str; 14] = [
    "kind",
    "two_stage",
    "mixture_k",
    "hidden",
    "head_hidden",
    "ip_dim",
    "port_dim",
    "proto_dim",
    "tbptt_window",
    "batch_size",
    "learning_rate",
    "epochs",
    "seed",
    "rare_threshold",
];

/// Defaults, then config-file values, then flag overrides.
fn effective_config(args: &TrainArgs) -> Result<TempoNetConfig, CliError> {
    let mut cfg = TempoNetConfig::default();
    if let Some(path) = &args.config {
        let file = ConfigFile::from_path(path)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        for key in file.keys("model") {
            if !MODEL_KEYS.contains(&key) {
                return Err(usage(format!(
                    "{}: unknown key `{key}` in [model]",
                    path.display()
                )));
            }
        }
        let bad = |e: tracegen_core::config::ConfigError| usage(format!("{}: {e}", path.display()));
        if let Some(v) = file.get("model", "kind") {
            cfg.kind = v
                .parse()
                .map_err(|e: String| usage(format!("{}: {e}", path.display())))?;
        }
        if let Some(v) = file.get_bool("model", "two_stage").map_err(bad)? {
            cfg.stage_split = v;
        }
        let set_usize = |field: &mut usize, key: &str| -> Result<(), CliError> {
            if let Some(v) = file.get_usize("model", key).map_err(bad)? {
                *field = v;
            }
            Ok(())
        };
        set_usize(&mut cfg.mixture_k, "mixture_k")?;
        set_usize(&mut cfg.hidden, "hidden")?;
        set_usize(&mut cfg.head_hidden, "head_hidden")?;
        set_usize(&mut cfg.ip_dim, "ip_dim")?;
        set_usize(&mut cfg.port_dim, "port_dim")?;
        set_usize(&mut cfg.proto_dim, "proto_dim")?;
        set_usize(&mut cfg.tbptt_window, "tbptt_window")?;
        set_usize(&mut cfg.batch_size, "batch_size")?;
        set_usize(&mut cfg.epochs, "epochs")?;
        set_usize(&mut cfg.rare_threshold, "rare_threshold")?;
        if let Some(v) = file.get_f64("model", "learning_rate").map_err(bad)? {
            cfg.learning_rate = v;
        }
        if let Some(v) = file.get_u64("model", "seed").map_err(bad)? {
            cfg.seed = v;
        }
    }
    if let Some(k) = args.kind {
        cfg.kind = k.to_kind();
    }
    if args.two_stage {
        cfg.stage_split = true;
    }
    let over = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    over(&mut cfg.mixture_k, args.mixture_k);
    over(&mut cfg.hidden, args.hidden);
    over(&mut cfg.head_hidden, args.head_hidden);
    over(&mut cfg.ip_dim, args.ip_dim);
    over(&mut cfg.port_dim, args.port_dim);
    over(&mut cfg.proto_dim, args.proto_dim);
    over(&mut cfg.tbptt_window, args.window);
    over(&mut cfg.batch_size, args.batch_size);
    over(&mut cfg.epochs, args.epochs);
    over(&mut cfg.rare_threshold, args.rare_threshold);
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn stamp_config(stamp: &mut RunStamp, cfg: &TempoNetConfig) {
    stamp.push("kind", cfg.kind);
    stamp.push("two_stage", cfg.stage_split);
    stamp.push("mixture_k", cfg.mixture_k);
    stamp.push("hidden", cfg.hidden);
    stamp.push("head_hidden", cfg.head_hidden);
    stamp.push("ip_dim", cfg.ip_dim);
    stamp.push("port_dim", cfg.port_dim);
    stamp.push("proto_dim", cfg.proto_dim);
    stamp.push("tbptt_window", cfg.tbptt_window);
    stamp.push("batch_size", cfg.batch_size);
    stamp.push("learning_rate", format_float(cfg.learning_rate));
    stamp.push("epochs", cfg.epochs);
    stamp.push("seed", cfg.seed);
    stamp.push("rare_threshold", cfg.rare_threshold);
}

/// `model.ckpt` -> `model.stageN.ckpt`.
fn stage_path(base: &Path, n: u32) -> PathBuf {
    match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => base.with_extension(format!("stage{n}.{ext}")),
        None => base.with_extension(format!("stage{n}")),
    }
}

fn write_log(
    path: &Path,
    stamp: &RunStamp,
    stages: &[(&str, &[EpochStats])],
) -> Result<(), CliError> {
    let mut buf = stamp.header();
    buf.push_str("stage,epoch");
    for task in Task::ALL {
        buf.push(',');
        buf.push_str(task.name());
    }
    buf.push_str(",total,wall_secs\n");
    for (stage, epochs) in stages {
        for e in *epochs {
            buf.push_str(stage);
            buf.push_str(&format!(",{}", e.epoch));
            for task in Task::ALL {
                buf.push(',');
                if let Some(loss) = e.losses.get(task) {
                    buf.push_str(&format_float(loss));
                }
            }
            buf.push_str(&format!(
                ",{},{}\n",
                format_float(e.losses.total),
                format_float(e.wall_secs)
            ));
        }
    }
    atomic_write(path, buf.as_bytes())
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let cfg = effective_config(&args)?;
    let ds = load_trace(&args.data, cfg.kind)?;

    let mut stamp = RunStamp::new("train");
    stamp.push("data", args.data.display());
    stamp_config(&mut stamp, &cfg);

    let started = Instant::now();
    if cfg.stage_split {
        let (one, two) = train_two_stage(&ds, &cfg).map_err(from_model)?;
        let p1 = stage_path(&args.out, 1);
        let p2 = stage_path(&args.out, 2);
        atomic_write(&p1, &one.checkpoint.to_bytes())?;
        atomic_write(&p2, &two.checkpoint.to_bytes())?;
        write_log(
            &args.log,
            &stamp,
            &[("one", &one.epochs), ("two", &two.epochs)],
        )?;
        println!(
            "trained 2 stages on {} records in {:.1}s",
            ds.len(),
            started.elapsed().as_secs_f64()
        );
        println!("stage one -> {}", p1.display());
        println!("stage two -> {}", p2.display());
    } else {
        let report = train(&ds, &cfg).map_err(from_model)?;
        atomic_write(&args.out, &report.checkpoint.to_bytes())?;
        write_log(&args.log, &stamp, &[("single", &report.epochs)])?;
        println!(
            "trained on {} records in {:.1}s, final loss {}",
            ds.len(),
            started.elapsed().as_secs_f64(),
            format_float(report.checkpoint.meta.final_losses.total)
        );
        println!("checkpoint -> {}", args.out.display());
    }
    println!("log -> {}", args.log.display());
    Ok(())
}

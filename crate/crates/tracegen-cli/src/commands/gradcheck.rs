use anyhow::anyhow;
use tracegen_core::ingest::TraceKind;
use tracegen_core::model::{gradient_check, TempoNetConfig};

use crate::errors::{from_model, training, CliError};

#[derive(clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub mixture_k: usize,
    /// Random parameter coordinates probed
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also check both halves of the two-stage decomposition
    #[arg(long)]
    pub two_stage: bool,
}

pub fn run(args: GradcheckArgs) -> Result<(), CliError> {
    let cfg = TempoNetConfig {
        kind: TraceKind::Flow,
        stage_split: args.two_stage,
        mixture_k: args.mixture_k,
        hidden: args.hidden,
        head_hidden: args.hidden,
        ip_dim: 4,
        port_dim: 3,
        proto_dim: 2,
        tbptt_window: 16,
        epochs: 1,
        seed: args.seed,
        rare_threshold: 1,
        ..TempoNetConfig::default()
    };
    let err = gradient_check(&cfg, args.trials).map_err(from_model)?;
    println!(
        "max relative error {err:.3e} over {} coordinates (tolerance {:.1e})",
        args.trials, args.tolerance
    );
    if err < args.tolerance {
        println!("OK");
        Ok(())
    } else {
        Err(training(anyhow!(
            "gradient check failed: {err:.3e} >= {:.1e}",
            args.tolerance
        )))
    }
}

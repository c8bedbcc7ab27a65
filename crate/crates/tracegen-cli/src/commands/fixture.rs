use std::path::PathBuf;

use tracegen_core::config::ConfigFile;
use tracegen_core::fixture::{make_fixture, FixtureSpec};
use tracegen_core::ingest::write_canonical_csv;

use crate::errors::{data, usage, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(clap::Args)]
pub struct FixtureArgs {
    /// Fixture spec: kind/days/start, a `[rate]` profile, `[pair.N]` blocks
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "fixture.csv")]
    pub out: PathBuf,
}

pub fn run(args: FixtureArgs) -> Result<(), CliError> {
    let cfg = ConfigFile::from_path(&args.spec)
        .map_err(|e| usage(format!("{}: {e}", args.spec.display())))?;
    let spec = FixtureSpec::from_config(&cfg)
        .map_err(|e| usage(format!("{}: {e}", args.spec.display())))?;
    let ds = make_fixture(&spec, args.seed).map_err(|e| usage(e.to_string()))?;

    let mut stamp = RunStamp::new("fixture");
    stamp.push("spec", args.spec.display());
    stamp.push("seed", args.seed);
    stamp.push("records", ds.len());

    let mut buf = Vec::new();
    write_canonical_csv(&mut buf, &ds, &stamp.comment_lines()).map_err(data)?;
    atomic_write(&args.out, &buf)?;
    println!("{} records -> {}", ds.len(), args.out.display());
    Ok(())
}

use std::path::PathBuf;

use anyhow::Context;
use tracegen_core::config::ConfigFile;
use tracegen_core::ingest::{parse_trace, write_canonical_csv, Schema};

use super::KindArg;
use crate::errors::{data, usage, CliError};
use crate::output::{atomic_write, RunStamp};

#[derive(clap::Args)]
pub struct IngestArgs {
    /// Input CSV with a header row
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Flow)]
    pub kind: KindArg,
    /// Column-mapping config: optional `tolerance` plus a `[columns]`
    /// section renaming canonical columns to the input's headers
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value = "canonical.csv")]
    pub out: PathBuf,
}

pub fn run(args: IngestArgs) -> Result<(), CliError> {
    let schema = match &args.schema {
        Some(path) => {
            let cfg = ConfigFile::from_path(path)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Schema::from_config(&cfg).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Schema::default(),
    };
    let kind = args.kind.to_kind();
    let (ds, report) = parse_trace(&args.input, kind, &schema)
        .with_context(|| format!("reading {}", args.input.display()))
        .map_err(data)?;

    let mut stamp = RunStamp::new("ingest");
    stamp.push("input", args.input.display());
    stamp.push("kind", kind);
    stamp.push_opt("schema", args.schema.as_ref().map(|p| p.display()));
    stamp.push("rows_read", report.rows);
    stamp.push("rows_skipped", report.skipped);

    let mut buf = Vec::new();
    write_canonical_csv(&mut buf, &ds, &stamp.comment_lines()).map_err(data)?;
    atomic_write(&args.out, &buf)?;
    println!(
        "{} records -> {} ({} rows read, {} skipped)",
        ds.len(),
        args.out.display(),
        report.rows,
        report.skipped
    );
    Ok(())
}

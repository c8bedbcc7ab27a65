pub mod dkc;
pub mod evaluate;
pub mod fixture;
pub mod generate;
pub mod gradcheck;
pub mod ingest;
pub mod plot;
pub mod train;

use std::path::Path;

use anyhow::Context;
use tracegen_core::ingest::{parse_trace, Schema, TraceDataset, TraceKind};

use crate::errors::{data, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KindArg {
    Flow,
    Packet,
}

impl KindArg {
    pub fn to_kind(self) -> TraceKind {
        match self {
            KindArg::Flow => TraceKind::Flow,
            KindArg::Packet => TraceKind::Packet,
        }
    }
}

/// Reads a canonical-layout trace, reporting skipped rows on stderr.
pub fn load_trace(path: &Path, kind: TraceKind) -> Result<TraceDataset, CliError> {
    let (ds, report) = parse_trace(path, kind, &Schema::default())
        .with_context(|| format!("reading {}", path.display()))
        .map_err(data)?;
    if report.skipped > 0 {
        eprintln!(
            "note: skipped {} of {} rows in {}",
            report.skipped,
            report.rows,
            path.display()
        );
    }
    Ok(ds.with_provenance(path.display().to_string()))
}

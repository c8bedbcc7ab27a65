//! Output plumbing: atomic file writes and the reproducibility header
//! every artifact carries.

use std::path::Path;

use anyhow::Context;

use crate::errors::{data, CliError};

pub const TOOL: &str = concat!("tracegen ", env!("CARGO_PKG_VERSION"));

/// Writes via a sibling temp file and an atomic rename, so failures never
/// leave a partial artifact at `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let write = || -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        std::io::Write::write_all(&mut tmp, bytes)?;
        tmp.persist(path)?;
        Ok(())
    };
    write()
        .with_context(|| format!("writing {}", path.display()))
        .map_err(data)
}

/// The effective settings of a run, echoed into every output so the
/// artifact alone reproduces the command.
#[derive(Debug, Clone, Default)]
pub struct RunStamp {
    pairs: Vec<(String, String)>,
}

impl RunStamp {
    pub fn new(command: &str) -> RunStamp {
        let mut stamp = RunStamp::default();
        stamp.push("command", command);
        stamp
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }

    pub fn push_opt(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.push(key, v);
        }
    }

    /// Comment lines (no leading `#`) for the canonical CSV writer.
    pub fn comment_lines(&self) -> Vec<String> {
        let mut out = vec![TOOL.to_string()];
        out.extend(self.pairs.iter().map(|(k, v)| format!("{k} = {v}")));
        out
    }

    /// `# `-prefixed header block for non-CSV artifacts.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for line in self.comment_lines() {
            s.push_str("# ");
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}

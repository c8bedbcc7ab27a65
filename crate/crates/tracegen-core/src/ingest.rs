//! Trace records, CSV ingestion, vocabularies and event encoding.
//!
//! A trace is an ordered list of [`TraceRecord`]s, either NetFlow-style
//! flows or single packet headers. Ingestion reads a headered CSV (column
//! names remappable through a small config file), tolerates a bounded
//! fraction of malformed rows, and always returns records sorted by
//! timestamp. Encoding turns records into model-ready events: positive
//! inter-arrival times plus vocabulary indices for the categorical fields.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::config::ConfigFile;

/// Inter-arrival floor in seconds. Ties and clock-resolution duplicates
/// would otherwise produce zero gaps, which the log-normal density cannot
/// represent.
pub const EPS_TAU: f64 = 1e-6;

/// Tokens seen fewer than this many times collapse into the rare bucket.
pub const DEFAULT_RARE_THRESHOLD: usize = 5;

/// Vocabulary token for the rare bucket. Angle brackets keep it out of the
/// space of real IPs, ports and protocol names.
pub const RARE_TOKEN: &str = "<RARE>";

/// Canonical output column order. Parsers and writers agree on exactly
/// this header.
pub const CANONICAL_COLUMNS: [&str; 11] = [
    "timestamp",
    "src_ip",
    "dst_ip",
    "src_port",
    "dst_port",
    "protocol",
    "bytes_in",
    "bytes_out",
    "packets_in",
    "packets_out",
    "duration",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Flow,
    Packet,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::Flow => "flow",
            TraceKind::Packet => "packet",
        })
    }
}

impl FromStr for TraceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flow" => Ok(TraceKind::Flow),
            "packet" => Ok(TraceKind::Packet),
            other => Err(format!("unknown trace kind `{other}` (expected flow or packet)")),
        }
    }
}

/// One flow or one packet. Packet traces use `bytes_in` for the packet
/// size and leave `bytes_out`, `packets_*` and `duration` at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Epoch seconds, UTC.
    pub timestamp: f64,
    pub src_ip: String,
    pub dst_ip: String,
    pub protocol: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub packets_in: u64,
    pub packets_out: u64,
    /// Seconds; 0.0 for packets.
    pub duration: f64,
    /// Optional TCP flag letters (e.g. "SA", "F"), kept only when the
    /// input provides them; compliance rules about handshakes need this.
    pub tcp_flags: Option<String>,
}

impl TraceRecord {
    /// Total payload attributed to the event; the "size" modelling target.
    pub fn size(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }

    pub fn packets_total(&self) -> u64 {
        self.packets_in + self.packets_out
    }
}

#[derive(Debug, Clone)]
pub struct TraceDataset {
    pub kind: TraceKind,
    /// Sorted by timestamp, ascending (stable for ties).
    pub records: Vec<TraceRecord>,
    /// Free-text origin label ("fixture seed=7", a file path, ...).
    pub provenance: String,
}

impl TraceDataset {
    pub fn new(kind: TraceKind, mut records: Vec<TraceRecord>) -> Self {
        records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        TraceDataset {
            kind,
            records,
            provenance: String::new(),
        }
    }

    pub fn with_provenance(mut self, label: impl Into<String>) -> Self {
        self.provenance = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("reading trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace has no `{0}` column (after schema mapping)")]
    MissingColumn(String),
    #[error("schema maps unknown column `{0}`")]
    UnknownColumn(String),
    #[error("schema: {0}")]
    Schema(#[from] crate::config::ConfigError),
    #[error("{skipped} of {rows} rows malformed, above the tolerated fraction {tolerance}")]
    TooManyMalformed {
        skipped: usize,
        rows: usize,
        tolerance: f64,
    },
    #[error("trace contains no valid records")]
    EmptyTrace,
    #[error("split fraction {0} outside (0, 1)")]
    BadSplitFraction(f64),
    #[error("split leaves a side empty ({train} train / {test} test)")]
    DegenerateSplit { train: usize, test: usize },
}

/// Column remapping plus parse options, read from a key-value config:
///
/// ```text
/// tolerance = 0.01
/// [columns]
/// timestamp = ts
/// src_ip = source_address
/// ```
///
/// `[columns]` keys are canonical names, values are the CSV headers that
/// hold them. Unmapped columns fall back to their canonical name. The
/// extra canonical names `size` (single-size inputs, used when no
/// `bytes_in` column exists) and `tcp_flags` are accepted on input but are
/// not part of the canonical output.
#[derive(Debug, Clone)]
pub struct Schema {
    map: HashMap<String, String>,
    /// Malformed rows tolerated, as a fraction of all data rows.
    pub tolerance: f64,
}

const INPUT_COLUMNS: [&str; 13] = [
    "timestamp",
    "src_ip",
    "dst_ip",
    "protocol",
    "src_port",
    "dst_port",
    "bytes_in",
    "bytes_out",
    "packets_in",
    "packets_out",
    "duration",
    "size",
    "tcp_flags",
];

impl Default for Schema {
    fn default() -> Self {
        Schema {
            map: HashMap::new(),
            tolerance: 0.01,
        }
    }
}

impl Schema {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self, IngestError> {
        let mut schema = Schema::default();
        if let Some(t) = cfg.get_f64("", "tolerance")? {
            schema.tolerance = t;
        }
        for key in cfg.keys("columns") {
            if !INPUT_COLUMNS.contains(&key) {
                return Err(IngestError::UnknownColumn(key.to_string()));
            }
            let value = cfg.get("columns", key).expect("key came from this section");
            schema.map.insert(key.to_string(), value.to_string());
        }
        Ok(schema)
    }

    fn source_header<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.map.get(canonical).map(|s| s.as_str()).unwrap_or(canonical)
    }
}

/// Epoch seconds or ISO-8601, with or without timezone (naive times are
/// taken as UTC).
fn parse_timestamp(text: &str) -> Option<f64> {
    let text = text.trim();
    if let Ok(v) = text.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
            let dt = naive.and_utc();
            return Some(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9);
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
pub struct ParseReport {
    /// Data rows seen (excluding the header).
    pub rows: usize,
    /// Rows dropped as malformed.
    pub skipped: usize,
}

struct ColumnIndex {
    required: [usize; 6],
    optional: [Option<usize>; 7],
}

fn resolve_columns(headers: &csv::StringRecord, schema: &Schema) -> Result<ColumnIndex, IngestError> {
    let find = |canonical: &str| -> Option<usize> {
        let name = schema.source_header(canonical);
        headers.iter().position(|h| h.trim() == name)
    };
    let mut required = [0usize; 6];
    for (slot, canonical) in required.iter_mut().zip(&CANONICAL_COLUMNS[..6]) {
        *slot = find(canonical).ok_or_else(|| {
            IngestError::MissingColumn(schema.source_header(canonical).to_string())
        })?;
    }
    let optional_names = [
        "bytes_in",
        "bytes_out",
        "packets_in",
        "packets_out",
        "duration",
        "size",
        "tcp_flags",
    ];
    let mut optional = [None; 7];
    for (slot, canonical) in optional.iter_mut().zip(optional_names) {
        *slot = find(canonical);
    }
    Ok(ColumnIndex { required, optional })
}

fn parse_u64_opt(record: &csv::StringRecord, idx: Option<usize>) -> Result<u64, ()> {
    match idx.map(|i| record.get(i).unwrap_or("").trim()) {
        None | Some("") => Ok(0),
        Some(text) => text.parse::<u64>().map_err(|_| ()),
    }
}

fn record_from_row(
    row: &csv::StringRecord,
    cols: &ColumnIndex,
    kind: TraceKind,
) -> Result<TraceRecord, ()> {
    let field = |i: usize| row.get(i).map(str::trim).ok_or(());
    let timestamp = parse_timestamp(field(cols.required[0])?).ok_or(())?;
    let src_ip = field(cols.required[1])?;
    let dst_ip = field(cols.required[2])?;
    let src_port = field(cols.required[3])?.parse::<u16>().map_err(|_| ())?;
    let dst_port = field(cols.required[4])?.parse::<u16>().map_err(|_| ())?;
    let protocol = field(cols.required[5])?;
    if src_ip.is_empty() || dst_ip.is_empty() || protocol.is_empty() {
        return Err(());
    }

    let mut bytes_in = parse_u64_opt(row, cols.optional[0])?;
    let mut bytes_out = parse_u64_opt(row, cols.optional[1])?;
    let mut packets_in = parse_u64_opt(row, cols.optional[2])?;
    let mut packets_out = parse_u64_opt(row, cols.optional[3])?;
    if cols.optional[0].is_none() {
        if let Some(size_idx) = cols.optional[5] {
            bytes_in = row.get(size_idx).unwrap_or("").trim().parse::<u64>().map_err(|_| ())?;
            bytes_out = 0;
        }
    }
    let mut duration = match cols.optional[4].map(|i| row.get(i).unwrap_or("").trim()) {
        None | Some("") => 0.0,
        Some(text) => {
            let v = text.parse::<f64>().map_err(|_| ())?;
            if !v.is_finite() || v < 0.0 {
                return Err(());
            }
            v
        }
    };
    if kind == TraceKind::Packet {
        duration = 0.0;
        if packets_in == 0 {
            packets_in = 1;
        }
        packets_out = 0;
    }
    let tcp_flags = cols.optional[6].and_then(|i| {
        let v = row.get(i).unwrap_or("").trim();
        (!v.is_empty()).then(|| v.to_string())
    });
    Ok(TraceRecord {
        timestamp,
        src_ip: src_ip.to_string(),
        dst_ip: dst_ip.to_string(),
        protocol: protocol.to_string(),
        src_port,
        dst_port,
        bytes_in,
        bytes_out,
        packets_in,
        packets_out,
        duration,
        tcp_flags,
    })
}

/// Reads a headered CSV trace. `#` lines are comments (the canonical
/// writer emits run metadata that way). Malformed rows are skipped and
/// counted; more than `schema.tolerance` of them fails the whole parse.
pub fn parse_trace(
    path: &Path,
    kind: TraceKind,
    schema: &Schema,
) -> Result<(TraceDataset, ParseReport), IngestError> {
    let file = std::fs::File::open(path)?;
    parse_trace_reader(file, kind, schema)
}

pub fn parse_trace_reader<R: std::io::Read>(
    reader: R,
    kind: TraceKind,
    schema: &Schema,
) -> Result<(TraceDataset, ParseReport), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = resolve_columns(&headers, schema)?;
    let expected_len = headers.len();

    let mut records = Vec::new();
    let mut rows = 0usize;
    let mut skipped = 0usize;
    for row in rdr.records() {
        rows += 1;
        let parsed = match row {
            Ok(r) if r.len() == expected_len => record_from_row(&r, &cols, kind),
            _ => Err(()),
        };
        match parsed {
            Ok(rec) => records.push(rec),
            Err(()) => skipped += 1,
        }
    }
    if rows > 0 && (skipped as f64) > schema.tolerance * rows as f64 {
        return Err(IngestError::TooManyMalformed {
            skipped,
            rows,
            tolerance: schema.tolerance,
        });
    }
    if records.is_empty() {
        return Err(IngestError::EmptyTrace);
    }
    Ok((TraceDataset::new(kind, records), ParseReport { rows, skipped }))
}

/// Chronological split; the training half gets `ceil(n * frac)` records.
/// Fails rather than return an empty side.
pub fn split(
    dataset: &TraceDataset,
    train_frac: f64,
) -> Result<(TraceDataset, TraceDataset), IngestError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(IngestError::BadSplitFraction(train_frac));
    }
    let n = dataset.records.len();
    let cut = (((n as f64) * train_frac).ceil() as usize).min(n);
    if cut == 0 || cut == n {
        return Err(IngestError::DegenerateSplit {
            train: cut,
            test: n - cut,
        });
    }
    let train = TraceDataset {
        kind: dataset.kind,
        records: dataset.records[..cut].to_vec(),
        provenance: format!("{} [train]", dataset.provenance),
    };
    let test = TraceDataset {
        kind: dataset.kind,
        records: dataset.records[cut..].to_vec(),
        provenance: format!("{} [test]", dataset.provenance),
    };
    Ok((train, test))
}

/// Index over the observed values of one categorical field. The rare
/// bucket is always the last index, present even when nothing maps to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl FieldVocab {
    fn from_counts(counts: HashMap<String, usize>, rare_threshold: usize) -> Self {
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= rare_threshold)
            .collect();
        // Frequent first; ties resolved by token text so rebuilds are stable.
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
        tokens.push(RARE_TOKEN.to_string());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        FieldVocab { tokens, index }
    }

    /// Builds a vocab that maps exactly these tokens, rare bucket appended.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut tokens = tokens;
        if tokens.last().map(String::as_str) != Some(RARE_TOKEN) {
            tokens.push(RARE_TOKEN.to_string());
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        FieldVocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn rare_index(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Unknown tokens resolve to the rare bucket.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.rare_index())
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub src_ip: FieldVocab,
    pub dst_ip: FieldVocab,
    pub protocol: FieldVocab,
    pub src_port: FieldVocab,
    pub dst_port: FieldVocab,
    pub rare_threshold: usize,
}

impl Vocabularies {
    pub fn field(&self, name: &str) -> &FieldVocab {
        match name {
            "src_ip" => &self.src_ip,
            "dst_ip" => &self.dst_ip,
            "protocol" => &self.protocol,
            "src_port" => &self.src_port,
            "dst_port" => &self.dst_port,
            other => panic!("no vocabulary for field `{other}`"),
        }
    }
}

pub fn build_vocabularies(dataset: &TraceDataset, rare_threshold: usize) -> Vocabularies {
    let mut src_ip: HashMap<String, usize> = HashMap::new();
    let mut dst_ip: HashMap<String, usize> = HashMap::new();
    let mut protocol: HashMap<String, usize> = HashMap::new();
    let mut src_port: HashMap<String, usize> = HashMap::new();
    let mut dst_port: HashMap<String, usize> = HashMap::new();
    for r in &dataset.records {
        *src_ip.entry(r.src_ip.clone()).or_default() += 1;
        *dst_ip.entry(r.dst_ip.clone()).or_default() += 1;
        *protocol.entry(r.protocol.clone()).or_default() += 1;
        *src_port.entry(r.src_port.to_string()).or_default() += 1;
        *dst_port.entry(r.dst_port.to_string()).or_default() += 1;
    }
    Vocabularies {
        src_ip: FieldVocab::from_counts(src_ip, rare_threshold),
        dst_ip: FieldVocab::from_counts(dst_ip, rare_threshold),
        protocol: FieldVocab::from_counts(protocol, rare_threshold),
        src_port: FieldVocab::from_counts(src_port, rare_threshold),
        dst_port: FieldVocab::from_counts(dst_port, rare_threshold),
        rare_threshold,
    }
}

/// One event as the model sees it: a positive inter-arrival time, the
/// absolute timestamp, vocabulary indices, log-transformed numeric
/// targets, and the precomputed seasonal feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedEvent {
    pub tau: f64,
    pub timestamp: f64,
    pub src_ip: usize,
    pub dst_ip: usize,
    pub protocol: usize,
    pub src_port: usize,
    pub dst_port: usize,
    /// ln(total bytes + 1).
    pub log_size: f64,
    /// ln(duration + EPS_TAU); packets always encode ln(EPS_TAU).
    pub log_duration: f64,
    /// Time-of-day / day-of-week features of `timestamp`.
    pub seasonal: Vec<f64>,
}

/// The first event's inter-arrival is defined as `EPS_TAU`; later gaps are
/// floored there too.
pub fn encode(dataset: &TraceDataset, vocab: &Vocabularies) -> Vec<EncodedEvent> {
    let mut out = Vec::with_capacity(dataset.records.len());
    let mut prev_t: Option<f64> = None;
    for r in &dataset.records {
        let tau = match prev_t {
            None => EPS_TAU,
            Some(p) => (r.timestamp - p).max(EPS_TAU),
        };
        prev_t = Some(r.timestamp);
        out.push(EncodedEvent {
            tau,
            timestamp: r.timestamp,
            src_ip: vocab.src_ip.index_of(&r.src_ip),
            dst_ip: vocab.dst_ip.index_of(&r.dst_ip),
            protocol: vocab.protocol.index_of(&r.protocol),
            src_port: vocab.src_port.index_of(&r.src_port.to_string()),
            dst_port: vocab.dst_port.index_of(&r.dst_port.to_string()),
            log_size: ((r.size() as f64) + 1.0).ln(),
            log_duration: (r.duration + EPS_TAU).ln(),
            seasonal: crate::encoder::metadata_vector(r.timestamp, &[]),
        });
    }
    out
}

/// Hour of day in `0..24`, UTC.
pub fn hour_of_day(timestamp: f64) -> usize {
    (timestamp.rem_euclid(86_400.0) / 3_600.0) as usize % 24
}

/// Weekday in `0..7` with Monday = 0, UTC. Day zero of the epoch was a
/// Thursday.
pub fn weekday_of(timestamp: f64) -> usize {
    let days = (timestamp / 86_400.0).floor() as i64;
    ((days + 3).rem_euclid(7)) as usize
}

/// Canonical float rendering: fixed six decimal places, then trailing
/// zeros and a trailing point trimmed. `2.0` prints as `2`, `1.5` as
/// `1.5`, `0.0000001` as `0`.
pub fn format_float(v: f64) -> String {
    let mut s = format!("{:.6}", v);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Writes the canonical 11-column CSV: fixed header, LF line endings,
/// floats in canonical form. `comments` (one per line, no `#`) are emitted
/// first as `# ...` lines so readers can skip them.
pub fn write_canonical_csv<W: Write>(
    out: &mut W,
    dataset: &TraceDataset,
    comments: &[String],
) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", CANONICAL_COLUMNS.join(","))?;
    for r in &dataset.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            format_float(r.timestamp),
            r.src_ip,
            r.dst_ip,
            r.src_port,
            r.dst_port,
            r.protocol,
            r.bytes_in,
            r.bytes_out,
            r.packets_in,
            r.packets_out,
            format_float(r.duration),
        )?;
    }
    Ok(())
}

pub fn write_canonical_csv_file(
    path: &Path,
    dataset: &TraceDataset,
    comments: &[String],
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_canonical_csv(&mut buf, dataset, comments)?;
    std::fs::write(path, buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64, src: &str, dst: &str, proto: &str, sp: u16, dp: u16) -> TraceRecord {
        TraceRecord {
            timestamp: t,
            src_ip: src.to_string(),
            dst_ip: dst.to_string(),
            protocol: proto.to_string(),
            src_port: sp,
            dst_port: dp,
            bytes_in: 100,
            bytes_out: 40,
            packets_in: 2,
            packets_out: 1,
            duration: 0.5,
            tcp_flags: None,
        }
    }

    #[test]
    fn parses_remapped_columns_and_iso_timestamps() {
        let csv = "\
ts,saddr,daddr,proto,sport,dport,dur
2024-01-01T00:00:01Z,10.0.0.1,10.0.0.2,TCP,40000,443,0.25
1704067202.5,10.0.0.2,10.0.0.1,UDP,53,53,0
2024-01-01 00:00:00.5,10.0.0.1,10.0.0.3,TCP,40001,80,1
";
        let cfg = ConfigFile::parse(
            "[columns]\ntimestamp = ts\nsrc_ip = saddr\ndst_ip = daddr\nprotocol = proto\nsrc_port = sport\ndst_port = dport\nduration = dur\n",
        )
        .unwrap();
        let schema = Schema::from_config(&cfg).unwrap();
        let (ds, report) = parse_trace_reader(csv.as_bytes(), TraceKind::Flow, &schema).unwrap();
        assert_eq!(report.rows, 3);
        assert_eq!(report.skipped, 0);
        // sorted: 1704067200.5, 1704067201, 1704067202.5
        assert_eq!(ds.records[0].timestamp, 1704067200.5);
        assert_eq!(ds.records[0].dst_port, 80);
        assert_eq!(ds.records[1].timestamp, 1704067201.0);
        assert_eq!(ds.records[2].protocol, "UDP");
        // unmapped numeric columns default to zero
        assert_eq!(ds.records[0].bytes_in, 0);
    }

    #[test]
    fn tolerates_bounded_malformed_rows() {
        let mut csv = String::from("timestamp,src_ip,dst_ip,protocol,src_port,dst_port\n");
        for i in 0..99 {
            csv.push_str(&format!("{},a,b,TCP,1,2\n", 1000 + i));
        }
        csv.push_str("not-a-time,a,b,TCP,1,2\n");
        let (ds, report) =
            parse_trace_reader(csv.as_bytes(), TraceKind::Flow, &Schema::default()).unwrap();
        assert_eq!(ds.len(), 99);
        assert_eq!(report.skipped, 1);

        // two bad rows out of 101 exceeds the default 1% tolerance
        let mut csv2 = csv;
        csv2.push_str("also-bad,a,b,TCP,1,2\n");
        let err = parse_trace_reader(csv2.as_bytes(), TraceKind::Flow, &Schema::default());
        assert!(matches!(err, Err(IngestError::TooManyMalformed { skipped: 2, .. })));
    }

    #[test]
    fn missing_required_column_is_an_error() {
        let csv = "timestamp,src_ip,dst_ip,protocol,src_port\n1,a,b,TCP,1\n";
        let err = parse_trace_reader(csv.as_bytes(), TraceKind::Flow, &Schema::default());
        match err {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "dst_port"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn packet_kind_uses_size_column_and_zero_duration() {
        let csv = "timestamp,src_ip,dst_ip,protocol,src_port,dst_port,size,duration\n\
                   1,a,b,UDP,10,20,433,9.5\n";
        let (ds, _) =
            parse_trace_reader(csv.as_bytes(), TraceKind::Packet, &Schema::default()).unwrap();
        let r = &ds.records[0];
        assert_eq!(r.bytes_in, 433);
        assert_eq!(r.bytes_out, 0);
        assert_eq!(r.packets_in, 1);
        assert_eq!(r.duration, 0.0);
    }

    #[test]
    fn vocab_orders_by_count_then_token_with_rare_last() {
        let mut records = Vec::new();
        for _ in 0..10 {
            records.push(rec(1.0, "b", "x", "TCP", 1, 2));
        }
        for _ in 0..10 {
            records.push(rec(1.0, "a", "x", "TCP", 1, 2));
        }
        for _ in 0..20 {
            records.push(rec(1.0, "c", "x", "TCP", 1, 2));
        }
        records.push(rec(1.0, "seldom", "x", "TCP", 1, 2));
        let ds = TraceDataset::new(TraceKind::Flow, records);
        let vocab = build_vocabularies(&ds, 5);
        assert_eq!(vocab.src_ip.tokens(), &["c", "a", "b", RARE_TOKEN]);
        assert_eq!(vocab.src_ip.index_of("seldom"), vocab.src_ip.rare_index());
        assert_eq!(vocab.src_ip.index_of("never-seen"), 3);
        // single dst token plus the always-present rare bucket
        assert_eq!(vocab.dst_ip.len(), 2);
    }

    #[test]
    fn encode_floors_inter_arrivals_and_log_transforms() {
        let mut zero_bytes = rec(100.25, "a", "b", "TCP", 1, 2);
        zero_bytes.bytes_in = 0;
        zero_bytes.bytes_out = 0;
        let ds = TraceDataset::new(
            TraceKind::Flow,
            vec![
                rec(100.0, "a", "b", "TCP", 1, 2),
                rec(100.0, "a", "b", "TCP", 1, 2),
                zero_bytes,
            ],
        );
        let vocab = build_vocabularies(&ds, 1);
        let events = encode(&ds, &vocab);
        assert_eq!(events[0].tau, EPS_TAU);
        assert_eq!(events[1].tau, EPS_TAU);
        assert_eq!(events[2].tau, 0.25);
        assert_eq!(events[1].log_size, (141.0f64).ln());
        // zero bytes encode to ln(1) = 0 exactly
        assert_eq!(events[2].log_size, 0.0);
        assert_eq!(events[0].log_duration, (0.5 + EPS_TAU).ln());
        assert_eq!(events[0].seasonal.len(), 11);
    }

    #[test]
    fn split_gives_train_the_ceiling_and_rejects_empty_sides() {
        let records: Vec<_> = (0..5).map(|i| rec(i as f64, "a", "b", "TCP", 1, 2)).collect();
        let ds = TraceDataset::new(TraceKind::Flow, records);
        let (train, test) = split(&ds, 0.7).unwrap();
        assert_eq!(train.len(), 4); // ceil(3.5)
        assert_eq!(test.len(), 1);
        assert!(train.records.last().unwrap().timestamp <= test.records[0].timestamp);
        // f = 0.5 on 3 records: ceiling gives 2/1
        let ds3 = TraceDataset::new(
            TraceKind::Flow,
            (0..3).map(|i| rec(i as f64, "a", "b", "TCP", 1, 2)).collect(),
        );
        let (tr3, te3) = split(&ds3, 0.5).unwrap();
        assert_eq!((tr3.len(), te3.len()), (2, 1));
        assert!(matches!(split(&ds, 0.0), Err(IngestError::BadSplitFraction(_))));
        assert!(matches!(split(&ds, 1.0), Err(IngestError::BadSplitFraction(_))));
        // 2 records at f=0.99: ceil gives all of them to train
        let ds2 = TraceDataset::new(
            TraceKind::Flow,
            (0..2).map(|i| rec(i as f64, "a", "b", "TCP", 1, 2)).collect(),
        );
        assert!(matches!(
            split(&ds2, 0.99),
            Err(IngestError::DegenerateSplit { train: 2, test: 0 })
        ));
    }

    #[test]
    fn time_features_match_known_dates() {
        // 1970-01-01 was a Thursday.
        assert_eq!(weekday_of(0.0), 3);
        // 2024-01-01T00:00:00Z was a Monday.
        assert_eq!(weekday_of(1_704_067_200.0), 0);
        assert_eq!(hour_of_day(1_704_067_200.0), 0);
        // 2024-01-06 (Saturday) 23:59:59
        assert_eq!(weekday_of(1_704_585_599.0), 5);
        assert_eq!(hour_of_day(1_704_585_599.0), 23);
        // negative timestamps stay in range
        assert_eq!(weekday_of(-1.0), 2);
        assert_eq!(hour_of_day(-1.0), 23);
    }

    #[test]
    fn canonical_float_format() {
        assert_eq!(format_float(2.0), "2");
        assert_eq!(format_float(1.5), "1.5");
        assert_eq!(format_float(0.25), "0.25");
        assert_eq!(format_float(1704067200.125), "1704067200.125");
        assert_eq!(format_float(0.0000001), "0");
        assert_eq!(format_float(-0.0000001), "0");
        assert_eq!(format_float(3.000001), "3.000001");
    }

    #[test]
    fn canonical_csv_roundtrips_and_skips_comments() {
        let ds = TraceDataset::new(
            TraceKind::Flow,
            vec![
                rec(1704067200.5, "10.0.0.1", "10.0.0.2", "TCP", 40000, 443),
                rec(1704067201.0, "10.0.0.2", "10.0.0.1", "UDP", 53, 53),
            ],
        );
        let mut buf = Vec::new();
        write_canonical_csv(&mut buf, &ds, &[String::from("seed = 7")]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed = 7\ntimestamp,src_ip"));
        assert!(!text.contains('\r'));
        let (back, report) =
            parse_trace_reader(&buf[..], TraceKind::Flow, &Schema::default()).unwrap();
        assert_eq!(report.skipped, 0);
        assert_eq!(back.records.len(), 2);
        // tcp_flags is not part of the canonical columns, so compare the rest
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.src_ip, b.src_ip);
            assert_eq!(a.duration, b.duration);
            assert_eq!(a.bytes_in, b.bytes_in);
        }
    }

    #[test]
    fn writer_emits_exactly_eleven_columns() {
        let ds = TraceDataset::new(TraceKind::Flow, vec![rec(1.0, "a", "b", "TCP", 1, 2)]);
        let mut buf = Vec::new();
        write_canonical_csv(&mut buf, &ds, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 11);
        assert_eq!(header, CANONICAL_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "1,a,b,1,2,TCP,100,40,2,1,0.5");
    }
}

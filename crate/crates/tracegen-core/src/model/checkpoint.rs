//! Checkpoint serialization.
//!
//! Little-endian binary: magic `TPNT`, a u32 format version, four
//! length-prefixed UTF-8 blobs (config, vocabularies, feature scalers,
//! training metadata), a tensor manifest (name, shape, FNV-1a checksum),
//! then the raw f64 payloads in manifest order. Floats in the text blobs
//! use Rust's shortest-round-trip formatting, so the whole file
//! round-trips bit-exactly.

use std::path::Path;

use crate::config::ConfigFile;
use crate::encoder::FeatureScaler;
use crate::ingest::{FieldVocab, TraceKind, Vocabularies};

use super::{
    ModelError, Net, ParamStore, Stage, Task, TaskLosses, TempoNetConfig, TensorMeta,
};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TPNT";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub seed: u64,
    pub final_losses: TaskLosses,
}

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: TempoNetConfig,
    pub stage: Stage,
    pub vocabs: Vocabularies,
    pub scaler: FeatureScaler,
    pub store: ParamStore,
    pub meta: TrainMeta,
}

impl Net {
    pub(crate) fn into_checkpoint(self, meta: TrainMeta) -> ModelCheckpoint {
        ModelCheckpoint {
            config: self.cfg,
            stage: self.stage,
            vocabs: self.vocabs,
            scaler: self.scaler,
            store: self.store,
            meta,
        }
    }

    pub(crate) fn from_checkpoint(ckpt: &ModelCheckpoint) -> Net {
        let mut net = Net::build(
            ckpt.config.clone(),
            ckpt.stage,
            ckpt.vocabs.clone(),
            ckpt.scaler.clone(),
        );
        assert_eq!(
            net.store.entries(),
            ckpt.store.entries(),
            "checkpoint layout does not match its config"
        );
        net.store.data.copy_from_slice(&ckpt.store.data);
        net
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn config_text(cfg: &TempoNetConfig, stage: Stage) -> String {
    format!(
        "kind = {}\nstage = {}\nstage_split = {}\nmixture_k = {}\nhidden = {}\n\
         head_hidden = {}\nip_dim = {}\nport_dim = {}\nproto_dim = {}\n\
         tbptt_window = {}\nbatch_size = {}\nlearning_rate = {}\nepochs = {}\n\
         seed = {}\nrare_threshold = {}\n",
        cfg.kind,
        stage.name(),
        cfg.stage_split,
        cfg.mixture_k,
        cfg.hidden,
        cfg.head_hidden,
        cfg.ip_dim,
        cfg.port_dim,
        cfg.proto_dim,
        cfg.tbptt_window,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.epochs,
        cfg.seed,
        cfg.rare_threshold,
    )
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

fn parse_config_text(text: &str) -> Result<(TempoNetConfig, Stage), ModelError> {
    let cfg = ConfigFile::parse(text).map_err(|e| corrupt(format!("config blob: {e}")))?;
    let need = |key: &str| -> Result<&str, ModelError> {
        cfg.get("", key)
            .ok_or_else(|| corrupt(format!("config blob missing `{key}`")))
    };
    let usize_of = |key: &str| -> Result<usize, ModelError> {
        need(key)?
            .parse::<usize>()
            .map_err(|_| corrupt(format!("config blob: bad `{key}`")))
    };
    let kind: TraceKind = need("kind")?
        .parse()
        .map_err(|_| corrupt("config blob: bad `kind`"))?;
    let stage = Stage::from_name(need("stage")?)
        .ok_or_else(|| corrupt("config blob: bad `stage`"))?;
    let stage_split = need("stage_split")? == "true";
    let learning_rate: f64 = need("learning_rate")?
        .parse()
        .map_err(|_| corrupt("config blob: bad `learning_rate`"))?;
    let seed: u64 = need("seed")?
        .parse()
        .map_err(|_| corrupt("config blob: bad `seed`"))?;
    Ok((
        TempoNetConfig {
            kind,
            stage_split,
            mixture_k: usize_of("mixture_k")?,
            hidden: usize_of("hidden")?,
            head_hidden: usize_of("head_hidden")?,
            ip_dim: usize_of("ip_dim")?,
            port_dim: usize_of("port_dim")?,
            proto_dim: usize_of("proto_dim")?,
            tbptt_window: usize_of("tbptt_window")?,
            batch_size: usize_of("batch_size")?,
            learning_rate,
            epochs: usize_of("epochs")?,
            seed,
            rare_threshold: usize_of("rare_threshold")?,
        },
        stage,
    ))
}

const VOCAB_FIELDS: [&str; 5] = ["src_ip", "dst_ip", "protocol", "src_port", "dst_port"];

fn vocab_text(v: &Vocabularies) -> String {
    let mut out = format!("rare_threshold {}\n", v.rare_threshold);
    for name in VOCAB_FIELDS {
        let field = v.field(name);
        out.push_str(&format!("{name} {}\n", field.len()));
        for tok in field.tokens() {
            out.push_str(tok);
            out.push('\n');
        }
    }
    out
}

fn parse_vocab_text(text: &str) -> Result<Vocabularies, ModelError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| corrupt("empty vocab blob"))?;
    let rare_threshold: usize = first
        .strip_prefix("rare_threshold ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("vocab blob: bad rare_threshold line"))?;
    let mut fields = Vec::with_capacity(5);
    for name in VOCAB_FIELDS {
        let header = lines
            .next()
            .ok_or_else(|| corrupt(format!("vocab blob: missing `{name}`")))?;
        let count: usize = header
            .strip_prefix(name)
            .and_then(|s| s.strip_prefix(' '))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(format!("vocab blob: bad `{name}` header")))?;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            tokens.push(
                lines
                    .next()
                    .ok_or_else(|| corrupt(format!("vocab blob: `{name}` truncated")))?
                    .to_string(),
            );
        }
        fields.push(FieldVocab::from_tokens(tokens));
    }
    let mut it = fields.into_iter();
    Ok(Vocabularies {
        src_ip: it.next().unwrap(),
        dst_ip: it.next().unwrap(),
        protocol: it.next().unwrap(),
        src_port: it.next().unwrap(),
        dst_port: it.next().unwrap(),
        rare_threshold,
    })
}

fn scaler_text(s: &FeatureScaler) -> String {
    format!(
        "lntau_mean = {}\nlntau_std = {}\nlog_size_mean = {}\nlog_size_std = {}\n\
         log_duration_mean = {}\nlog_duration_std = {}\n",
        s.lntau_mean,
        s.lntau_std,
        s.log_size_mean,
        s.log_size_std,
        s.log_duration_mean,
        s.log_duration_std,
    )
}

fn parse_scaler_text(text: &str) -> Result<FeatureScaler, ModelError> {
    let cfg = ConfigFile::parse(text).map_err(|e| corrupt(format!("scaler blob: {e}")))?;
    let f = |key: &str| -> Result<f64, ModelError> {
        cfg.get("", key)
            .ok_or_else(|| corrupt(format!("scaler blob missing `{key}`")))?
            .parse()
            .map_err(|_| corrupt(format!("scaler blob: bad `{key}`")))
    };
    Ok(FeatureScaler {
        lntau_mean: f("lntau_mean")?,
        lntau_std: f("lntau_std")?,
        log_size_mean: f("log_size_mean")?,
        log_size_std: f("log_size_std")?,
        log_duration_mean: f("log_duration_mean")?,
        log_duration_std: f("log_duration_std")?,
    })
}

fn meta_text(meta: &TrainMeta) -> String {
    let mut out = format!("epochs = {}\nseed = {}\n", meta.epochs, meta.seed);
    for (task, loss) in &meta.final_losses.per_task {
        out.push_str(&format!("loss.{} = {}\n", task.name(), loss));
    }
    out.push_str(&format!("loss.total = {}\n", meta.final_losses.total));
    out
}

fn parse_meta_text(text: &str) -> Result<TrainMeta, ModelError> {
    let cfg = ConfigFile::parse(text).map_err(|e| corrupt(format!("meta blob: {e}")))?;
    let epochs: usize = cfg
        .get("", "epochs")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("meta blob: bad `epochs`"))?;
    let seed: u64 = cfg
        .get("", "seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("meta blob: bad `seed`"))?;
    let mut per_task = std::collections::BTreeMap::new();
    for task in Task::ALL {
        if let Some(v) = cfg.get("", &format!("loss.{}", task.name())) {
            let loss: f64 = v
                .parse()
                .map_err(|_| corrupt(format!("meta blob: bad loss for {task}")))?;
            per_task.insert(task, loss);
        }
    }
    let total: f64 = cfg
        .get("", "loss.total")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("meta blob: bad `loss.total`"))?;
    let m = per_task.len();
    Ok(TrainMeta {
        epochs,
        seed,
        final_losses: TaskLosses { per_task, m, total },
    })
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_blob(out: &mut Vec<u8>, text: &str) {
    push_u64(out, text.len() as u64);
    out.extend_from_slice(text.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a str, ModelError> {
        let len = self.u64()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| corrupt("blob is not UTF-8"))
    }
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        push_blob(&mut out, &config_text(&self.config, self.stage));
        push_blob(&mut out, &vocab_text(&self.vocabs));
        push_blob(&mut out, &scaler_text(&self.scaler));
        push_blob(&mut out, &meta_text(&self.meta));
        push_u64(&mut out, self.store.entries().len() as u64);
        let mut payload = Vec::with_capacity(self.store.data.len() * 8);
        for e in self.store.entries() {
            push_u64(&mut out, e.name.len() as u64);
            out.extend_from_slice(e.name.as_bytes());
            push_u64(&mut out, e.shape.len() as u64);
            for d in &e.shape {
                push_u64(&mut out, *d as u64);
            }
            let start = payload.len();
            for v in &self.store.data[e.offset..e.offset + e.len] {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            push_u64(&mut out, fnv1a(&payload[start..]));
        }
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint, ModelError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let (config, stage) = parse_config_text(r.blob()?)?;
        let vocabs = parse_vocab_text(r.blob()?)?;
        let scaler = parse_scaler_text(r.blob()?)?;
        let meta = parse_meta_text(r.blob()?)?;

        let count = r.u64()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u64()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let checksum = r.u64()?;
            manifest.push((name, shape, checksum));
        }

        // the expected layout is a pure function of config + vocab sizes
        let expected = Net::build(config.clone(), stage, vocabs.clone(), scaler.clone());
        let entries: Vec<TensorMeta> = expected.store.entries().to_vec();
        if entries.len() != manifest.len() {
            return Err(corrupt(format!(
                "manifest has {} tensors, config implies {}",
                manifest.len(),
                entries.len()
            )));
        }
        for (e, (name, shape, _)) in entries.iter().zip(&manifest) {
            if &e.name != name || &e.shape != shape {
                return Err(corrupt(format!(
                    "tensor `{name}` {shape:?} does not match expected `{}` {:?}",
                    e.name, e.shape
                )));
            }
        }

        let mut store = expected.store.clone();
        for (e, (_, _, checksum)) in entries.iter().zip(&manifest) {
            let raw = r.take(e.len * 8)?;
            if fnv1a(raw) != *checksum {
                return Err(corrupt(format!("checksum mismatch in `{}`", e.name)));
            }
            for (i, chunk) in raw.chunks_exact(8).enumerate() {
                store.data[e.offset + i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(ModelCheckpoint {
            config,
            stage,
            vocabs,
            scaler,
            store,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelCheckpoint, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{train, TempoNetConfig};
    use super::*;
    use crate::ingest::{encode, TraceDataset, TraceRecord};

    fn sample_checkpoint() -> (ModelCheckpoint, TraceDataset) {
        let records: Vec<TraceRecord> = (0..60)
            .map(|i| TraceRecord {
                timestamp: 1_704_067_200.0 + 2.0 * i as f64,
                src_ip: format!("10.0.0.{}", i % 3),
                dst_ip: "10.0.1.1".into(),
                protocol: if i % 2 == 0 { "TCP" } else { "UDP" }.into(),
                src_port: 40000 + (i % 4) as u16,
                dst_port: if i % 2 == 0 { 443 } else { 53 },
                bytes_in: 500 + 10 * (i as u64 % 7),
                bytes_out: 200,
                packets_in: 2,
                packets_out: 1,
                duration: 0.1 + 0.01 * (i % 5) as f64,
                tcp_flags: None,
            })
            .collect();
        let ds = TraceDataset::new(TraceKind::Flow, records);
        let cfg = TempoNetConfig {
            mixture_k: 2,
            hidden: 6,
            head_hidden: 4,
            ip_dim: 2,
            port_dim: 2,
            proto_dim: 2,
            tbptt_window: 20,
            epochs: 2,
            rare_threshold: 1,
            ..TempoNetConfig::default()
        };
        let report = train(&ds, &cfg).unwrap();
        (report.checkpoint, ds)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ckpt, ds) = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ckpt.store.data, back.store.data);
        assert_eq!(ckpt.store.entries(), back.store.entries());
        assert_eq!(ckpt.config, back.config);
        assert_eq!(ckpt.stage, back.stage);
        assert_eq!(ckpt.scaler, back.scaler);
        assert_eq!(ckpt.meta, back.meta);
        assert_eq!(
            ckpt.vocabs.src_ip.tokens(),
            back.vocabs.src_ip.tokens()
        );
        // and the serialization itself is stable
        assert_eq!(bytes, back.to_bytes());

        // forward pass identical through the round trip
        let events = encode(&ds, &ckpt.vocabs);
        let a = super::super::forward_loss(&ckpt, &[&events]).unwrap();
        let b = super::super::forward_loss(&back, &[&events]).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        for (t, v) in &a.per_task {
            assert_eq!(v.to_bits(), b.per_task[t].to_bits());
        }
    }

    #[test]
    fn save_load_files() {
        let (ckpt, _) = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.tpnt");
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(ckpt.store.data, back.store.data);
    }

    #[test]
    fn truncation_is_detected() {
        let (ckpt, _) = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            match ModelCheckpoint::from_bytes(&bytes[..cut]) {
                Err(ModelError::CorruptCheckpoint(_)) => {}
                other => panic!("cut at {cut}: expected CorruptCheckpoint, got {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_payload_bit_fails_the_checksum() {
        let (ckpt, _) = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        let n = bytes.len();
        bytes[n - 5] ^= 0x40;
        match ModelCheckpoint::from_bytes(&bytes) {
            Err(ModelError::CorruptCheckpoint(msg)) => {
                assert!(msg.contains("checksum"), "{msg}");
            }
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn version_bump_is_rejected_not_misread() {
        let (ckpt, _) = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        bytes[4] = 2; // little-endian version field
        match ModelCheckpoint::from_bytes(&bytes) {
            Err(ModelError::VersionMismatch { expected, found }) => {
                assert_eq!(expected, FORMAT_VERSION);
                assert_eq!(found, 2);
            }
            other => panic!("expected VersionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let (ckpt, _) = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes),
            Err(ModelError::CorruptCheckpoint(_))
        ));
    }
}

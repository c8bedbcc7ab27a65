//! Autoregressive trace synthesis from trained checkpoints.
//!
//! Generation rolls a clock forward one event at a time. The next
//! inter-arrival is sampled with the context built from the history state
//! and the clock before the event; once the clock advances, the remaining
//! fields are sampled in conditioning order with the context rebuilt at
//! the new timestamp. The completed event is then embedded and pushed
//! through the encoder exactly as a training event would be, so every
//! feedback value (tau, size, duration) is requantized first and the
//! encoder sees what re-ingesting the emitted CSV would produce.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::encoder::{embed_event, init_state, metadata_vector, step, HistoryState};
use crate::heads::{categorical_sample, SamplingMode};
use crate::ingest::{
    encode, EncodedEvent, FieldVocab, TraceDataset, TraceKind, TraceRecord, EPS_TAU,
};
use crate::model::{HeadLayout, ModelCheckpoint, Net, Stage, Task};
use crate::tpp;

/// Ceiling on emitted events unless the request overrides it.
pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

/// Nominal payload bytes per packet when deriving packet counts for flow
/// records; the model itself carries only a total size per event.
const BYTES_PER_PACKET: u64 = 1_200;

const US: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("horizon must request at least one event or a positive duration")]
    EmptyHorizon,
    #[error("horizon exceeds the cap of {cap} events")]
    HorizonTooLarge { cap: u64 },
    #[error("expected a {expected} checkpoint, found {found}")]
    StageMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("checkpoint generates {expected} traces but the warmup data is {found}")]
    WarmupKindMismatch { expected: TraceKind, found: TraceKind },
    #[error("stage checkpoints disagree on the {field} vocabulary")]
    VocabMismatch { field: &'static str },
}

/// How far to run the clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Emit exactly this many events.
    Events(u64),
    /// Emit until the next inter-arrival would pass `start + secs`.
    Duration(f64),
}

/// What to do when a categorical head draws the rare bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RareMode {
    /// Emit the sentinel token; ports decode to 0.
    #[default]
    Emit,
    /// Mask the rare bucket out of the logits before sampling.
    Resample,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub start_timestamp: f64,
    pub horizon: Horizon,
    pub seed: u64,
    /// Separate stream for the attribute stage of two-stage generation,
    /// so ports and sizes can be redrawn without moving the skeleton.
    /// `seed + 1` when unset.
    pub stage2_seed: Option<u64>,
    pub mode: SamplingMode,
    pub rare_mode: RareMode,
    pub max_events: u64,
    /// Events run through the encoder before the first sample, so the
    /// rollout continues an observed trace instead of starting cold.
    pub warmup: Option<TraceDataset>,
}

impl GenerationRequest {
    pub fn new(start_timestamp: f64, horizon: Horizon, seed: u64) -> GenerationRequest {
        GenerationRequest {
            start_timestamp,
            horizon,
            seed,
            stage2_seed: None,
            mode: SamplingMode::Stochastic,
            rare_mode: RareMode::Emit,
            max_events: DEFAULT_MAX_EVENTS,
            warmup: None,
        }
    }

    fn validate(&self) -> Result<(), GenerateError> {
        match self.horizon {
            Horizon::Events(0) => Err(GenerateError::EmptyHorizon),
            Horizon::Events(n) if n > self.max_events => Err(GenerateError::HorizonTooLarge {
                cap: self.max_events,
            }),
            Horizon::Events(_) => Ok(()),
            Horizon::Duration(d) if d > 0.0 && d.is_finite() => Ok(()),
            Horizon::Duration(_) => Err(GenerateError::EmptyHorizon),
        }
    }
}

/// Samples a complete trace from a single-stage checkpoint.
pub fn generate(
    ckpt: &ModelCheckpoint,
    req: &GenerationRequest,
) -> Result<TraceDataset, GenerateError> {
    req.validate()?;
    if ckpt.stage != Stage::Single {
        return Err(GenerateError::StageMismatch {
            expected: "single",
            found: ckpt.stage.name(),
        });
    }
    let net = Net::from_checkpoint(ckpt);
    let mut rng = ChaCha12Rng::seed_from_u64(req.seed);
    let events = rollout(&net, req, &mut rng)?;
    let records = events.iter().map(|ev| decode_event(&net, ev)).collect();
    Ok(TraceDataset::new(net.cfg.kind, records))
}

/// Samples a skeleton of (timestamp, hosts, duration) from the stage-1
/// checkpoint, then fills protocol, ports, and size per event from the
/// stage-2 checkpoint conditioned on the skeleton's host pair. Rerunning
/// with a different `stage2_seed` redraws the attributes only.
pub fn generate_two_stage(
    stage1: &ModelCheckpoint,
    stage2: &ModelCheckpoint,
    req: &GenerationRequest,
) -> Result<TraceDataset, GenerateError> {
    req.validate()?;
    if stage1.stage != Stage::One {
        return Err(GenerateError::StageMismatch {
            expected: "stage1",
            found: stage1.stage.name(),
        });
    }
    if stage2.stage != Stage::Two {
        return Err(GenerateError::StageMismatch {
            expected: "stage2",
            found: stage2.stage.name(),
        });
    }
    // Stage 2 reuses the skeleton's host indices verbatim, so the two
    // checkpoints must agree on host vocabularies.
    for (field, a, b) in [
        ("src_ip", &stage1.vocabs.src_ip, &stage2.vocabs.src_ip),
        ("dst_ip", &stage1.vocabs.dst_ip, &stage2.vocabs.dst_ip),
    ] {
        if a.tokens() != b.tokens() {
            return Err(GenerateError::VocabMismatch { field });
        }
    }

    let net1 = Net::from_checkpoint(stage1);
    let mut rng1 = ChaCha12Rng::seed_from_u64(req.seed);
    let skeleton = rollout(&net1, req, &mut rng1)?;

    let net2 = Net::from_checkpoint(stage2);
    let mut rng2 =
        ChaCha12Rng::seed_from_u64(req.stage2_seed.unwrap_or(req.seed.wrapping_add(1)));
    let events = fill_attributes(&net2, &skeleton, req, &mut rng2)?;
    let records = events.iter().map(|ev| decode_event(&net2, ev)).collect();
    Ok(TraceDataset::new(TraceKind::Flow, records))
}

/// Clock roll for plans that own the inter-arrival head (single stage or
/// stage 1).
fn rollout(
    net: &Net,
    req: &GenerationRequest,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<EncodedEvent>, GenerateError> {
    let tables = net.event_tables();
    let mut state = warmup_state(net, req)?;
    let tau_head = net
        .heads
        .iter()
        .find(|(t, _)| *t == Task::InterArrival)
        .map(|(_, hl)| hl)
        .expect("rollout plans include the inter-arrival head");

    let (want, end_us) = match req.horizon {
        Horizon::Events(n) => (Some(n), None),
        Horizon::Duration(d) => (None, Some(to_us(req.start_timestamp + d))),
    };
    let mut clock_us = to_us(req.start_timestamp);
    let mut out: Vec<EncodedEvent> = Vec::new();
    loop {
        if want == Some(out.len() as u64) {
            break;
        }
        if out.len() as u64 >= req.max_events {
            return Err(GenerateError::HorizonTooLarge {
                cap: req.max_events,
            });
        }

        // The inter-arrival head sees the clock before the event.
        let mut ev = blank_event(from_us(clock_us));
        let base = net.base_context(&state.hidden, &ev);
        let ctx = net.task_context(&base, &ev, Task::InterArrival);
        let tau = tpp::sample(&net.mixture_head(tau_head).params(&ctx), rng);
        // Quantize to the microsecond grid, one tick minimum; NaN and
        // infinity from a degenerate checkpoint land on 1 tick / i64::MAX.
        let dt_us = (tau * US).round().max(1.0) as i64;
        if let Some(end) = end_us {
            if clock_us.saturating_add(dt_us) > end {
                break;
            }
        }
        clock_us = clock_us.saturating_add(dt_us);

        ev.tau = from_us(dt_us);
        ev.timestamp = from_us(clock_us);
        ev.seasonal = metadata_vector(ev.timestamp, &[]);
        let base = net.base_context(&state.hidden, &ev);
        sample_fields(net, &base, &mut ev, rng, req);

        let x = embed_event(&ev, &tables, &net.scaler);
        state = step(&net.lstm(), &state, &x);
        out.push(ev);
    }
    Ok(out)
}

/// Attribute fill for stage 2: walks the skeleton timestamps, samples the
/// stage-2 heads per event, and advances the stage-2 encoder.
fn fill_attributes(
    net: &Net,
    skeleton: &[EncodedEvent],
    req: &GenerationRequest,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<EncodedEvent>, GenerateError> {
    let tables = net.event_tables();
    let mut state = warmup_state(net, req)?;
    let mut out = Vec::with_capacity(skeleton.len());
    for sk in skeleton {
        let mut ev = sk.clone();
        let base = net.base_context(&state.hidden, &ev);
        sample_fields(net, &base, &mut ev, rng, req);
        let x = embed_event(&ev, &tables, &net.scaler);
        state = step(&net.lstm(), &state, &x);
        out.push(ev);
    }
    Ok(out)
}

/// Samples every head except the inter-arrival, in conditioning order,
/// writing requantized values back into the event.
fn sample_fields(
    net: &Net,
    base: &[f64],
    ev: &mut EncodedEvent,
    rng: &mut ChaCha12Rng,
    req: &GenerationRequest,
) {
    for (task, hl) in &net.heads {
        if *task == Task::InterArrival {
            continue;
        }
        let ctx = net.task_context(base, ev, *task);
        match *task {
            Task::Duration => {
                let v = tpp::sample(&net.mixture_head(hl).params(&ctx), rng);
                // the head models duration + EPS_TAU
                let secs = quantize_us((v - EPS_TAU).max(0.0));
                ev.log_duration = (secs + EPS_TAU).ln();
            }
            Task::Size => {
                let v = tpp::sample(&net.mixture_head(hl).params(&ctx), rng);
                // the head models total bytes + 1
                let bytes = (v.round() - 1.0).max(0.0);
                ev.log_size = (bytes + 1.0).ln();
            }
            cat => {
                let idx = draw_categorical(net, hl, &ctx, task_vocab(net, cat), rng, req);
                match cat {
                    Task::SrcIp => ev.src_ip = idx,
                    Task::DstIp => ev.dst_ip = idx,
                    Task::Protocol => ev.protocol = idx,
                    Task::SrcPort => ev.src_port = idx,
                    Task::DstPort => ev.dst_port = idx,
                    _ => unreachable!(),
                }
            }
        }
    }
}

fn draw_categorical(
    net: &Net,
    hl: &HeadLayout,
    ctx: &[f64],
    vocab: &FieldVocab,
    rng: &mut ChaCha12Rng,
    req: &GenerationRequest,
) -> usize {
    let mut logits = net.cat_head(hl).logits(ctx);
    if req.rare_mode == RareMode::Resample && vocab.len() > 1 {
        logits[vocab.rare_index()] = f64::NEG_INFINITY;
    }
    categorical_sample(&logits, rng, req.mode)
}

fn task_vocab<'n>(net: &'n Net, task: Task) -> &'n FieldVocab {
    match task {
        Task::SrcIp => &net.vocabs.src_ip,
        Task::DstIp => &net.vocabs.dst_ip,
        Task::Protocol => &net.vocabs.protocol,
        Task::SrcPort => &net.vocabs.src_port,
        Task::DstPort => &net.vocabs.dst_port,
        _ => panic!("no vocabulary for task `{task}`"),
    }
}

fn warmup_state(net: &Net, req: &GenerationRequest) -> Result<HistoryState, GenerateError> {
    let mut state = init_state(net.cfg.hidden);
    if let Some(ds) = &req.warmup {
        if ds.kind != net.cfg.kind {
            return Err(GenerateError::WarmupKindMismatch {
                expected: net.cfg.kind,
                found: ds.kind,
            });
        }
        let tables = net.event_tables();
        for ev in encode(ds, &net.vocabs) {
            let x = embed_event(&ev, &tables, &net.scaler);
            state = step(&net.lstm(), &state, &x);
        }
    }
    Ok(state)
}

/// An event with nothing sampled yet. Unused numeric slots carry the
/// same values training would encode for them.
fn blank_event(t: f64) -> EncodedEvent {
    EncodedEvent {
        tau: EPS_TAU,
        timestamp: t,
        src_ip: 0,
        dst_ip: 0,
        protocol: 0,
        src_port: 0,
        dst_port: 0,
        log_size: 0.0,
        log_duration: EPS_TAU.ln(),
        seasonal: metadata_vector(t, &[]),
    }
}

/// Turns a sampled event back into a canonical record. The model carries
/// one size per event, so flow byte counts are split evenly across the
/// two directions and packet counts follow at a nominal packet size.
fn decode_event(net: &Net, ev: &EncodedEvent) -> TraceRecord {
    let vocabs = &net.vocabs;
    let bytes_total = (ev.log_size.exp() - 1.0).round().max(0.0) as u64;
    let (bytes_in, bytes_out, packets_in, packets_out, duration) = match net.cfg.kind {
        TraceKind::Flow => {
            let bytes_in = bytes_total - bytes_total / 2;
            let bytes_out = bytes_total / 2;
            (
                bytes_in,
                bytes_out,
                bytes_in.div_ceil(BYTES_PER_PACKET),
                bytes_out.div_ceil(BYTES_PER_PACKET),
                quantize_us((ev.log_duration.exp() - EPS_TAU).max(0.0)),
            )
        }
        TraceKind::Packet => (bytes_total, 0, 1, 0, 0.0),
    };
    TraceRecord {
        timestamp: ev.timestamp,
        src_ip: vocabs.src_ip.token(ev.src_ip).to_string(),
        dst_ip: vocabs.dst_ip.token(ev.dst_ip).to_string(),
        protocol: vocabs.protocol.token(ev.protocol).to_string(),
        src_port: decode_port(&vocabs.src_port, ev.src_port),
        dst_port: decode_port(&vocabs.dst_port, ev.dst_port),
        bytes_in,
        bytes_out,
        packets_in,
        packets_out,
        duration,
        tcp_flags: None,
    }
}

/// The rare sentinel has no numeric value; it decodes to port 0.
fn decode_port(vocab: &FieldVocab, idx: usize) -> u16 {
    vocab.token(idx).parse().unwrap_or(0)
}

fn to_us(t: f64) -> i64 {
    (t * US).round() as i64
}

fn from_us(t: i64) -> f64 {
    t as f64 / US
}

fn quantize_us(secs: f64) -> f64 {
    (secs * US).round().max(0.0) / US
}

//! Full model assembly: parameter store, multi-task loss, training loop,
//! and end-to-end gradient checking.
//!
//! One network covers all variants. A plan derived from (kind, stage)
//! decides which tasks exist, which fields feed the encoder, and whether
//! the host pair rides along in the head context (the stage-2 case). The
//! parameter store is a single flat buffer with a name/shape manifest in
//! registration order; gradients live in a parallel buffer with the same
//! offsets, which keeps the optimizer and the checkpoint format trivial.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::encoder::{
    embed_event, init_state, metadata_vector, step_backward, step_cached, EmbeddingTable,
    EventTables, FeatureScaler, HistoryState, LstmGrads, LstmWeights, StepCache, METADATA_DIM,
};
use crate::heads::{
    categorical_nll, categorical_nll_backward, conditional_context, CategoricalHead,
    CategoricalHeadGrads, HiddenLayer,
};
use crate::ingest::{
    build_vocabularies, encode, EncodedEvent, FieldVocab, TraceDataset, TraceKind, Vocabularies,
};
use crate::tpp::{self, MixtureHead, MixtureHeadGrads, MixtureParams};

mod checkpoint;

pub use checkpoint::{ModelCheckpoint, TrainMeta, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset kind `{found}` does not match configured kind `{expected}`")]
    WrongKind { expected: TraceKind, found: TraceKind },
    #[error("non-finite loss in window {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The prediction tasks, in sampling order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    InterArrival,
    SrcIp,
    DstIp,
    Duration,
    Protocol,
    DstPort,
    SrcPort,
    Size,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::InterArrival,
        Task::SrcIp,
        Task::DstIp,
        Task::Duration,
        Task::Protocol,
        Task::DstPort,
        Task::SrcPort,
        Task::Size,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::InterArrival => "inter_arrival",
            Task::SrcIp => "src_ip",
            Task::DstIp => "dst_ip",
            Task::Duration => "duration",
            Task::Protocol => "protocol",
            Task::DstPort => "dst_port",
            Task::SrcPort => "src_port",
            Task::Size => "size",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-task mean NLLs plus the 1/m-weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLosses {
    pub per_task: BTreeMap<Task, f64>,
    pub m: usize,
    pub total: f64,
}

impl TaskLosses {
    fn from_sums(sums: &BTreeMap<Task, f64>, n: usize) -> TaskLosses {
        assert!(n > 0);
        let per_task: BTreeMap<Task, f64> =
            sums.iter().map(|(t, s)| (*t, s / n as f64)).collect();
        let m = per_task.len();
        let total = per_task.values().sum::<f64>() / m as f64;
        TaskLosses { per_task, m, total }
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        self.per_task.get(&task).copied()
    }
}

/// Which model a checkpoint holds: the single-stage net, or one half of
/// the two-stage decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Single,
    One,
    Two,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Single => "single",
            Stage::One => "stage1",
            Stage::Two => "stage2",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        [Stage::Single, Stage::One, Stage::Two]
            .into_iter()
            .find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempoNetConfig {
    pub kind: TraceKind,
    pub stage_split: bool,
    /// Log-normal mixture components per numeric head.
    pub mixture_k: usize,
    /// Encoder hidden dimension.
    pub hidden: usize,
    /// Hidden width of the two-layer source-IP head.
    pub head_hidden: usize,
    pub ip_dim: usize,
    pub port_dim: usize,
    pub proto_dim: usize,
    pub tbptt_window: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Tokens seen fewer times than this fold into the rare bucket.
    pub rare_threshold: usize,
}

impl Default for TempoNetConfig {
    fn default() -> Self {
        TempoNetConfig {
            kind: TraceKind::Flow,
            stage_split: false,
            mixture_k: 8,
            hidden: 64,
            head_hidden: 64,
            ip_dim: 16,
            port_dim: 8,
            proto_dim: 4,
            tbptt_window: 128,
            batch_size: 1,
            learning_rate: 1e-3,
            epochs: 10,
            seed: 1,
            rare_threshold: 5,
        }
    }
}

impl TempoNetConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("mixture_k", self.mixture_k),
            ("hidden", self.hidden),
            ("head_hidden", self.head_hidden),
            ("ip_dim", self.ip_dim),
            ("port_dim", self.port_dim),
            ("proto_dim", self.proto_dim),
            ("tbptt_window", self.tbptt_window),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in dims {
            if v < 1 {
                return Err(ModelError::BadConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::BadConfig(
                "learning_rate must be > 0".to_string(),
            ));
        }
        if self.stage_split && self.kind != TraceKind::Flow {
            return Err(ModelError::BadConfig(
                "stage_split requires flow traces".to_string(),
            ));
        }
        Ok(())
    }
}

/// Categorical fields by fixed index: src_ip, dst_ip, protocol,
/// src_port, dst_port.
const FIELDS: usize = 5;
const F_SRC: usize = 0;
const F_DST: usize = 1;
const F_PROTO: usize = 2;
const F_SPORT: usize = 3;
const F_DPORT: usize = 4;

fn field_name(f: usize) -> &'static str {
    ["src_ip", "dst_ip", "protocol", "src_port", "dst_port"][f]
}

/// What a (kind, stage) pair actually models.
#[derive(Debug, Clone)]
pub(crate) struct NetPlan {
    pub tasks: Vec<Task>,
    /// Stage 2: src/dst embeddings appended to every head context.
    pub pair_in_context: bool,
    /// Fields whose embeddings feed the encoder input.
    pub enc_fields: [bool; FIELDS],
    pub enc_lntau: bool,
    pub enc_log_size: bool,
    pub enc_log_duration: bool,
}

pub(crate) fn plan_for(kind: TraceKind, stage: Stage) -> NetPlan {
    match (kind, stage) {
        (TraceKind::Flow, Stage::Single) => NetPlan {
            tasks: Task::ALL.to_vec(),
            pair_in_context: false,
            enc_fields: [true; FIELDS],
            enc_lntau: true,
            enc_log_size: true,
            enc_log_duration: true,
        },
        (TraceKind::Packet, Stage::Single) => NetPlan {
            tasks: Task::ALL
                .into_iter()
                .filter(|t| *t != Task::Duration)
                .collect(),
            pair_in_context: false,
            enc_fields: [true; FIELDS],
            enc_lntau: true,
            enc_log_size: true,
            enc_log_duration: false,
        },
        (TraceKind::Flow, Stage::One) => NetPlan {
            tasks: vec![Task::InterArrival, Task::SrcIp, Task::DstIp, Task::Duration],
            pair_in_context: false,
            enc_fields: [true, true, false, false, false],
            enc_lntau: true,
            enc_log_size: false,
            enc_log_duration: true,
        },
        (TraceKind::Flow, Stage::Two) => NetPlan {
            tasks: vec![Task::Protocol, Task::DstPort, Task::SrcPort, Task::Size],
            pair_in_context: true,
            enc_fields: [false, false, true, true, true],
            enc_lntau: false,
            enc_log_size: true,
            enc_log_duration: false,
        },
        (TraceKind::Packet, _) => {
            unreachable!("stage split is rejected for packet traces by validate()")
        }
    }
}

/// Already-sampled fields each head conditions on, beyond the shared
/// context. With the pair in the context (stage 2) the pair conditions
/// disappear and only the protocol link for dst_port remains.
fn conditions(task: Task, pair_in_context: bool) -> &'static [usize] {
    if pair_in_context {
        match task {
            Task::DstPort => &[F_PROTO],
            _ => &[],
        }
    } else {
        match task {
            Task::InterArrival | Task::SrcIp => &[],
            Task::DstIp => &[F_SRC],
            Task::Duration | Task::Protocol | Task::SrcPort | Task::Size => &[F_SRC, F_DST],
            Task::DstPort => &[F_SRC, F_DST, F_PROTO],
        }
    }
}

/// Flat parameter buffer plus a name/shape manifest in registration
/// order. Gradient buffers reuse the same offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<TensorMeta>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate tensor {name}"
        );
        let len: usize = shape.iter().product();
        let offset = self.data.len();
        self.data.resize(offset + len, 0.0);
        self.entries.push(TensorMeta {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
            len,
        });
        offset..offset + len
    }

    pub fn entries(&self) -> &[TensorMeta] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum HeadLayout {
    Mixture {
        vo: Range<usize>,
        bo: Range<usize>,
        vm: Range<usize>,
        bm: Range<usize>,
        vs: Range<usize>,
        bs: Range<usize>,
        ctx: usize,
    },
    TwoLayer {
        w1: Range<usize>,
        b1: Range<usize>,
        w2: Range<usize>,
        b2: Range<usize>,
        hidden: usize,
        vocab: usize,
        ctx: usize,
    },
    Linear {
        w: Range<usize>,
        b: Range<usize>,
        vocab: usize,
        ctx: usize,
    },
}

/// The assembled network: config, plan, layout, and the parameter store.
pub(crate) struct Net {
    pub cfg: TempoNetConfig,
    pub stage: Stage,
    pub vocabs: Vocabularies,
    pub scaler: FeatureScaler,
    pub plan: NetPlan,
    emb: [Option<Range<usize>>; FIELDS],
    enc_wx: Range<usize>,
    enc_wh: Range<usize>,
    enc_b: Range<usize>,
    input_dim: usize,
    base_ctx: usize,
    pub(crate) heads: Vec<(Task, HeadLayout)>,
    pub store: ParamStore,
}

impl Net {
    pub fn build(
        cfg: TempoNetConfig,
        stage: Stage,
        vocabs: Vocabularies,
        scaler: FeatureScaler,
    ) -> Net {
        let plan = plan_for(cfg.kind, stage);
        let mut store = ParamStore::new();

        let vocab_of = |f: usize| -> &FieldVocab { vocabs.field(field_name(f)) };
        let dim_of = |f: usize| -> usize {
            match f {
                F_SRC | F_DST => cfg.ip_dim,
                F_PROTO => cfg.proto_dim,
                _ => cfg.port_dim,
            }
        };

        // a table exists if the field feeds the encoder, rides in the
        // stage-2 context, or conditions some head
        let mut used = plan.enc_fields;
        if plan.pair_in_context {
            used[F_SRC] = true;
            used[F_DST] = true;
        }
        for t in &plan.tasks {
            for f in conditions(*t, plan.pair_in_context) {
                used[*f] = true;
            }
        }
        let mut emb: [Option<Range<usize>>; FIELDS] = Default::default();
        for f in 0..FIELDS {
            if used[f] {
                let name = format!("emb.{}", field_name(f));
                emb[f] = Some(store.register(&name, &[vocab_of(f).len(), dim_of(f)]));
            }
        }

        let input_dim: usize = (0..FIELDS)
            .filter(|f| plan.enc_fields[*f])
            .map(dim_of)
            .sum::<usize>()
            + usize::from(plan.enc_lntau)
            + usize::from(plan.enc_log_size)
            + usize::from(plan.enc_log_duration)
            + METADATA_DIM;
        let h = cfg.hidden;
        let enc_wx = store.register("enc.w_x", &[4 * h, input_dim]);
        let enc_wh = store.register("enc.w_h", &[4 * h, h]);
        let enc_b = store.register("enc.b", &[4 * h]);

        let base_ctx = h
            + METADATA_DIM
            + if plan.pair_in_context {
                2 * cfg.ip_dim
            } else {
                0
            };

        let mut heads = Vec::new();
        for task in &plan.tasks {
            let ctx = base_ctx
                + conditions(*task, plan.pair_in_context)
                    .iter()
                    .map(|f| dim_of(*f))
                    .sum::<usize>();
            let n = task.name();
            let layout = match task {
                Task::InterArrival | Task::Duration | Task::Size => {
                    let k = cfg.mixture_k;
                    HeadLayout::Mixture {
                        vo: store.register(&format!("head.{n}.v_omega"), &[k, ctx]),
                        bo: store.register(&format!("head.{n}.b_omega"), &[k]),
                        vm: store.register(&format!("head.{n}.v_mu"), &[k, ctx]),
                        bm: store.register(&format!("head.{n}.b_mu"), &[k]),
                        vs: store.register(&format!("head.{n}.v_sigma"), &[k, ctx]),
                        bs: store.register(&format!("head.{n}.b_sigma"), &[k]),
                        ctx,
                    }
                }
                Task::SrcIp => {
                    let d = cfg.head_hidden;
                    let v = vocab_of(F_SRC).len();
                    HeadLayout::TwoLayer {
                        w1: store.register(&format!("head.{n}.w1"), &[d, ctx]),
                        b1: store.register(&format!("head.{n}.b1"), &[d]),
                        w2: store.register(&format!("head.{n}.w2"), &[v, d]),
                        b2: store.register(&format!("head.{n}.b2"), &[v]),
                        hidden: d,
                        vocab: v,
                        ctx,
                    }
                }
                Task::DstIp | Task::Protocol | Task::DstPort | Task::SrcPort => {
                    let f = match task {
                        Task::DstIp => F_DST,
                        Task::Protocol => F_PROTO,
                        Task::DstPort => F_DPORT,
                        _ => F_SPORT,
                    };
                    let v = vocab_of(f).len();
                    HeadLayout::Linear {
                        w: store.register(&format!("head.{n}.w"), &[v, ctx]),
                        b: store.register(&format!("head.{n}.b"), &[v]),
                        vocab: v,
                        ctx,
                    }
                }
            };
            heads.push((*task, layout));
        }

        Net {
            cfg,
            stage,
            vocabs,
            scaler,
            plan,
            emb,
            enc_wx,
            enc_wh,
            enc_b,
            input_dim,
            base_ctx,
            heads,
            store,
        }
    }

    /// Seeded initialization. Categorical output layers start at zero so
    /// untrained heads are exactly uniform; mixture biases start on the
    /// fitted feature statistics; the forget gate bias starts at 1.
    pub fn init_params(&mut self, rng: &mut ChaCha12Rng) {
        let h = self.cfg.hidden;
        let stats = |task: Task, s: &FeatureScaler| -> (f64, f64) {
            match task {
                Task::InterArrival => (s.lntau_mean, s.lntau_std),
                Task::Duration => (s.log_duration_mean, s.log_duration_std),
                Task::Size => (s.log_size_mean, s.log_size_std),
                _ => unreachable!(),
            }
        };
        // borrow dance: collect fills first, then write
        let entries = self.store.entries.clone();
        for e in &entries {
            let slot = &mut self.store.data[e.offset..e.offset + e.len];
            if e.name.starts_with("emb.") {
                for v in slot {
                    *v = (rng.random::<f64>() * 2.0 - 1.0) * 0.1;
                }
            } else if e.name == "enc.w_x" || e.name == "enc.w_h" {
                let scale = 1.0 / (h as f64).sqrt();
                for v in slot {
                    *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
                }
            } else if e.name == "enc.b" {
                // forget-gate rows start open so early gradients reach
                // back through time
                for v in &mut slot[h..2 * h] {
                    *v = 1.0;
                }
            } else if e.name.ends_with(".w1") {
                let cols = e.shape[1];
                let scale = 1.0 / (cols as f64).sqrt();
                for v in slot {
                    *v = (rng.random::<f64>() * 2.0 - 1.0) * scale;
                }
            } else if e.name.ends_with(".b_mu") {
                let task = Task::from_name(
                    e.name.trim_start_matches("head.").trim_end_matches(".b_mu"),
                )
                .expect("mixture tensor names a task");
                let (mean, std) = stats(task, &self.scaler);
                let k = e.len;
                for (i, v) in slot.iter_mut().enumerate() {
                    let off = if k == 1 {
                        0.0
                    } else {
                        -1.0 + 2.0 * i as f64 / (k - 1) as f64
                    };
                    *v = mean + std * off;
                }
            } else if e.name.ends_with(".b_sigma") {
                let task = Task::from_name(
                    e.name
                        .trim_start_matches("head.")
                        .trim_end_matches(".b_sigma"),
                )
                .expect("mixture tensor names a task");
                let (_, std) = stats(task, &self.scaler);
                for v in slot {
                    *v = std.ln();
                }
            }
            // everything else stays zero
        }
    }

    fn dim_of(&self, f: usize) -> usize {
        match f {
            F_SRC | F_DST => self.cfg.ip_dim,
            F_PROTO => self.cfg.proto_dim,
            _ => self.cfg.port_dim,
        }
    }

    fn table(&self, f: usize) -> Option<EmbeddingTable<'_>> {
        self.emb[f].clone().map(|r| EmbeddingTable {
            rows: self.vocabs.field(field_name(f)).len(),
            dim: self.dim_of(f),
            data: &self.store.data[r],
        })
    }

    pub(crate) fn event_tables(&self) -> EventTables<'_> {
        let pick = |f: usize| {
            if self.plan.enc_fields[f] {
                self.table(f)
            } else {
                None
            }
        };
        EventTables {
            src_ip: pick(F_SRC),
            dst_ip: pick(F_DST),
            protocol: pick(F_PROTO),
            src_port: pick(F_SPORT),
            dst_port: pick(F_DPORT),
            use_lntau: self.plan.enc_lntau,
            use_log_size: self.plan.enc_log_size,
            use_log_duration: self.plan.enc_log_duration,
        }
    }

    pub(crate) fn lstm(&self) -> LstmWeights<'_> {
        LstmWeights {
            input_dim: self.input_dim,
            hidden: self.cfg.hidden,
            w_x: &self.store.data[self.enc_wx.clone()],
            w_h: &self.store.data[self.enc_wh.clone()],
            b: &self.store.data[self.enc_b.clone()],
        }
    }

    fn field_index(&self, ev: &EncodedEvent, f: usize) -> usize {
        match f {
            F_SRC => ev.src_ip,
            F_DST => ev.dst_ip,
            F_PROTO => ev.protocol,
            F_SPORT => ev.src_port,
            _ => ev.dst_port,
        }
    }

    /// Offsets of the embedding slices inside the encoder input vector.
    fn x_slots(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for f in 0..FIELDS {
            if self.plan.enc_fields[f] {
                out.push((f, off, self.dim_of(f)));
                off += self.dim_of(f);
            }
        }
        out
    }

    pub(crate) fn base_context(&self, hidden: &[f64], ev: &EncodedEvent) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.base_ctx);
        c.extend_from_slice(hidden);
        c.extend_from_slice(&ev.seasonal);
        if self.plan.pair_in_context {
            c.extend_from_slice(self.table(F_SRC).unwrap().row(ev.src_ip));
            c.extend_from_slice(self.table(F_DST).unwrap().row(ev.dst_ip));
        }
        debug_assert_eq!(c.len(), self.base_ctx);
        c
    }

    pub(crate) fn task_context(&self, base: &[f64], ev: &EncodedEvent, task: Task) -> Vec<f64> {
        let conds: Vec<&[f64]> = conditions(task, self.plan.pair_in_context)
            .iter()
            .map(|f| self.table(*f).unwrap().row(self.field_index(ev, *f)))
            .collect();
        conditional_context(base, &conds)
    }

    fn mixture_target(task: Task, ev: &EncodedEvent) -> f64 {
        match task {
            Task::InterArrival => ev.tau,
            Task::Duration => ev.log_duration.exp(),
            Task::Size => ev.log_size.exp(),
            _ => unreachable!(),
        }
    }

    pub fn forward_window(&self, events: &[EncodedEvent], state0: &HistoryState) -> WindowRun {
        assert!(!events.is_empty());
        let tables = self.event_tables();
        let lstm = self.lstm();
        let mut state = state0.clone();
        let mut sums: BTreeMap<Task, f64> =
            self.plan.tasks.iter().map(|t| (*t, 0.0)).collect();
        let mut steps = Vec::with_capacity(events.len());
        let mut evals = Vec::with_capacity(events.len());
        let mut idx = Vec::with_capacity(events.len());
        for ev in events {
            let base = self.base_context(&state.hidden, ev);
            let mut per_task = Vec::with_capacity(self.heads.len());
            for (task, hl) in &self.heads {
                let ctx = self.task_context(&base, ev, *task);
                let (nll, kind) = match hl {
                    HeadLayout::Mixture { .. } => {
                        let head = self.mixture_head(hl);
                        let params = head.params(&ctx);
                        let target = Net::mixture_target(*task, ev);
                        (
                            tpp::nll_one(&params, target),
                            HeadEvalKind::Mixture { params, target },
                        )
                    }
                    _ => {
                        let head = self.cat_head(hl);
                        let (logits, tanh) = head.logits_cached(&ctx);
                        let target = self.field_index(ev, Net::task_field(*task));
                        (
                            categorical_nll(&logits, target),
                            HeadEvalKind::Cat {
                                logits,
                                tanh,
                                target,
                            },
                        )
                    }
                };
                *sums.get_mut(task).unwrap() += nll;
                per_task.push(HeadEval { ctx, kind });
            }
            evals.push(per_task);
            idx.push([
                ev.src_ip,
                ev.dst_ip,
                ev.protocol,
                ev.src_port,
                ev.dst_port,
            ]);
            let x = embed_event(ev, &tables, &self.scaler);
            let (next, cache) = step_cached(&lstm, &state, &x);
            steps.push(cache);
            state = next;
        }
        WindowRun {
            n: events.len(),
            sums,
            steps,
            evals,
            idx,
            state_out: state,
        }
    }

    fn task_field(task: Task) -> usize {
        match task {
            Task::SrcIp => F_SRC,
            Task::DstIp => F_DST,
            Task::Protocol => F_PROTO,
            Task::SrcPort => F_SPORT,
            Task::DstPort => F_DPORT,
            _ => unreachable!(),
        }
    }

    pub(crate) fn mixture_head<'a>(&'a self, hl: &HeadLayout) -> MixtureHead<'a> {
        match hl {
            HeadLayout::Mixture {
                vo,
                bo,
                vm,
                bm,
                vs,
                bs,
                ctx,
            } => MixtureHead {
                k: self.cfg.mixture_k,
                ctx_dim: *ctx,
                v_omega: &self.store.data[vo.clone()],
                b_omega: &self.store.data[bo.clone()],
                v_mu: &self.store.data[vm.clone()],
                b_mu: &self.store.data[bm.clone()],
                v_sigma: &self.store.data[vs.clone()],
                b_sigma: &self.store.data[bs.clone()],
            },
            _ => unreachable!(),
        }
    }

    pub(crate) fn cat_head<'a>(&'a self, hl: &HeadLayout) -> CategoricalHead<'a> {
        match hl {
            HeadLayout::TwoLayer {
                w1,
                b1,
                w2,
                b2,
                hidden,
                vocab,
                ctx,
            } => CategoricalHead {
                input_dim: *ctx,
                vocab: *vocab,
                hidden: Some(HiddenLayer {
                    dim: *hidden,
                    w: &self.store.data[w1.clone()],
                    b: &self.store.data[b1.clone()],
                }),
                w: &self.store.data[w2.clone()],
                b: &self.store.data[b2.clone()],
            },
            HeadLayout::Linear { w, b, vocab, ctx } => CategoricalHead {
                input_dim: *ctx,
                vocab: *vocab,
                hidden: None,
                w: &self.store.data[w.clone()],
                b: &self.store.data[b.clone()],
            },
            _ => unreachable!(),
        }
    }

    /// Accumulates d(sum of all task NLL sums)/d(params) into `scratch`;
    /// the caller applies the 1/(n·m) scale.
    pub fn backward_window(&self, run: &WindowRun, scratch: &mut [f64]) {
        assert_eq!(scratch.len(), self.store.len());
        let h = self.cfg.hidden;
        let lstm = self.lstm();
        let slots = self.x_slots();
        let mut dh = vec![0.0; h];
        let mut dc = vec![0.0; h];
        for i in (0..run.n).rev() {
            // encoder step i: consumes gradient at (h_i, c_i)
            let mut dx = vec![0.0; self.input_dim];
            let (mut dh_prev, dc_prev) = {
                let [gwx, gwh, gb] = take3(
                    scratch,
                    self.enc_wx.clone(),
                    self.enc_wh.clone(),
                    self.enc_b.clone(),
                );
                let mut grads = LstmGrads {
                    w_x: gwx,
                    w_h: gwh,
                    b: gb,
                };
                step_backward(&lstm, &run.steps[i], &dh, &dc, &mut grads, &mut dx)
            };
            for (f, off, dim) in &slots {
                self.scatter_emb(scratch, *f, run.idx[i][*f], &dx[*off..*off + *dim]);
            }
            // heads of event i used h_{i-1}
            for (j, (task, hl)) in self.heads.iter().enumerate() {
                let eval = &run.evals[i][j];
                let mut dctx = vec![0.0; eval.ctx.len()];
                match (&eval.kind, hl) {
                    (
                        HeadEvalKind::Mixture { params, target },
                        HeadLayout::Mixture {
                            vo,
                            bo,
                            vm,
                            bm,
                            vs,
                            bs,
                            ..
                        },
                    ) => {
                        let head = self.mixture_head(hl);
                        let [gvo, gbo, gvm, gbm, gvs, gbs] = take6(
                            scratch,
                            vo.clone(),
                            bo.clone(),
                            vm.clone(),
                            bm.clone(),
                            vs.clone(),
                            bs.clone(),
                        );
                        let mut grads = MixtureHeadGrads {
                            v_omega: gvo,
                            b_omega: gbo,
                            v_mu: gvm,
                            b_mu: gbm,
                            v_sigma: gvs,
                            b_sigma: gbs,
                        };
                        tpp::grad_nll(&head, &eval.ctx, params, *target, &mut grads, &mut dctx);
                    }
                    (
                        HeadEvalKind::Cat {
                            logits,
                            tanh,
                            target,
                        },
                        _,
                    ) => {
                        let head = self.cat_head(hl);
                        let d_logits = categorical_nll_backward(logits, *target);
                        match hl {
                            HeadLayout::TwoLayer { w1, b1, w2, b2, .. } => {
                                let [gw1, gb1, gw2, gb2] = take4(
                                    scratch,
                                    w1.clone(),
                                    b1.clone(),
                                    w2.clone(),
                                    b2.clone(),
                                );
                                let mut grads = CategoricalHeadGrads {
                                    hidden_w: Some(gw1),
                                    hidden_b: Some(gb1),
                                    w: gw2,
                                    b: gb2,
                                };
                                head.backward(
                                    &eval.ctx,
                                    tanh.as_deref(),
                                    &d_logits,
                                    &mut grads,
                                    &mut dctx,
                                );
                            }
                            HeadLayout::Linear { w, b, .. } => {
                                let [gw, gb] = take2(scratch, w.clone(), b.clone());
                                let mut grads = CategoricalHeadGrads {
                                    hidden_w: None,
                                    hidden_b: None,
                                    w: gw,
                                    b: gb,
                                };
                                head.backward(
                                    &eval.ctx,
                                    tanh.as_deref(),
                                    &d_logits,
                                    &mut grads,
                                    &mut dctx,
                                );
                            }
                            _ => unreachable!(),
                        }
                    }
                    _ => unreachable!("eval kind matches head layout"),
                }
                self.route_dctx(scratch, &run.idx[i], *task, &dctx, &mut dh_prev);
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        // dh now holds d/d(state0), which is detached between windows
    }

    fn scatter_emb(&self, scratch: &mut [f64], f: usize, row: usize, d: &[f64]) {
        let r = self.emb[f].as_ref().expect("table registered");
        let dim = self.dim_of(f);
        let start = r.start + row * dim;
        for (g, v) in scratch[start..start + dim].iter_mut().zip(d) {
            *g += v;
        }
    }

    /// Splits a head-context gradient back into its parts: hidden state,
    /// metadata (constants, dropped), stage-2 pair embeddings, and
    /// condition embeddings.
    fn route_dctx(
        &self,
        scratch: &mut [f64],
        idx: &[usize; FIELDS],
        task: Task,
        dctx: &[f64],
        dh_prev: &mut [f64],
    ) {
        let h = self.cfg.hidden;
        for (a, d) in dh_prev.iter_mut().zip(&dctx[..h]) {
            *a += d;
        }
        let mut off = h + METADATA_DIM;
        if self.plan.pair_in_context {
            let ip = self.cfg.ip_dim;
            self.scatter_emb(scratch, F_SRC, idx[F_SRC], &dctx[off..off + ip]);
            off += ip;
            self.scatter_emb(scratch, F_DST, idx[F_DST], &dctx[off..off + ip]);
            off += ip;
        }
        for f in conditions(task, self.plan.pair_in_context) {
            let dim = self.dim_of(*f);
            self.scatter_emb(scratch, *f, idx[*f], &dctx[off..off + dim]);
            off += dim;
        }
        debug_assert_eq!(off, dctx.len());
    }
}

struct HeadEval {
    ctx: Vec<f64>,
    kind: HeadEvalKind,
}

enum HeadEvalKind {
    Mixture { params: MixtureParams, target: f64 },
    Cat {
        logits: Vec<f64>,
        tanh: Option<Vec<f64>>,
        target: usize,
    },
}

pub(crate) struct WindowRun {
    n: usize,
    sums: BTreeMap<Task, f64>,
    steps: Vec<StepCache>,
    evals: Vec<Vec<HeadEval>>,
    idx: Vec<[usize; FIELDS]>,
    pub state_out: HistoryState,
}

fn take2(buf: &mut [f64], a: Range<usize>, b: Range<usize>) -> [&mut [f64]; 2] {
    debug_assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    [&mut left[a], &mut right[..b.end - b.start]]
}

fn take3(
    buf: &mut [f64],
    a: Range<usize>,
    b: Range<usize>,
    c: Range<usize>,
) -> [&mut [f64]; 3] {
    let (left, right) = buf.split_at_mut(c.start);
    let [x, y] = take2(left, a, b);
    [x, y, &mut right[..c.end - c.start]]
}

fn take4(
    buf: &mut [f64],
    a: Range<usize>,
    b: Range<usize>,
    c: Range<usize>,
    d: Range<usize>,
) -> [&mut [f64]; 4] {
    let (left, right) = buf.split_at_mut(d.start);
    let [x, y, z] = take3(left, a, b, c);
    [x, y, z, &mut right[..d.end - d.start]]
}

fn take6(
    buf: &mut [f64],
    a: Range<usize>,
    b: Range<usize>,
    c: Range<usize>,
    d: Range<usize>,
    e: Range<usize>,
    f: Range<usize>,
) -> [&mut [f64]; 6] {
    let (left, right) = buf.split_at_mut(e.start);
    let [x, y, z, u] = take4(left, a, b, c, d);
    let [v, w] = take2(right, 0..e.end - e.start, f.start - e.start..f.end - e.start);
    [x, y, z, u, v, w]
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const GRAD_CLIP: f64 = 5.0;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &mut [f64]) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > GRAD_CLIP {
            let s = GRAD_CLIP / norm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub losses: TaskLosses,
    pub wall_secs: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint: ModelCheckpoint,
    pub epochs: Vec<EpochStats>,
}

/// Trains the single-stage model.
pub fn train(ds: &TraceDataset, cfg: &TempoNetConfig) -> Result<TrainReport, ModelError> {
    cfg.validate()?;
    if cfg.stage_split {
        return Err(ModelError::BadConfig(
            "stage_split is on; use train_two_stage".to_string(),
        ));
    }
    if ds.kind != cfg.kind {
        return Err(ModelError::WrongKind {
            expected: cfg.kind,
            found: ds.kind,
        });
    }
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let vocabs = build_vocabularies(ds, cfg.rare_threshold);
    let events = encode(ds, &vocabs);
    train_encoded(cfg, Stage::Single, vocabs, &events, cfg.seed)
}

/// Trains the two-stage decomposition: timing and host pair first, then
/// the per-pair attributes.
pub fn train_two_stage(
    ds: &TraceDataset,
    cfg: &TempoNetConfig,
) -> Result<(TrainReport, TrainReport), ModelError> {
    cfg.validate()?;
    if !cfg.stage_split {
        return Err(ModelError::BadConfig(
            "train_two_stage requires stage_split".to_string(),
        ));
    }
    if ds.kind != TraceKind::Flow {
        return Err(ModelError::WrongKind {
            expected: TraceKind::Flow,
            found: ds.kind,
        });
    }
    if ds.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let vocabs = build_vocabularies(ds, cfg.rare_threshold);
    let events = encode(ds, &vocabs);
    let one = train_encoded(cfg, Stage::One, vocabs.clone(), &events, cfg.seed)?;
    let two = train_encoded(cfg, Stage::Two, vocabs, &events, cfg.seed.wrapping_add(1))?;
    Ok((one, two))
}

fn train_encoded(
    cfg: &TempoNetConfig,
    stage: Stage,
    vocabs: Vocabularies,
    events: &[EncodedEvent],
    seed: u64,
) -> Result<TrainReport, ModelError> {
    let scaler = FeatureScaler::fit(events);
    let mut net = Net::build(cfg.clone(), stage, vocabs, scaler);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    net.init_params(&mut rng);
    let epochs = fit(&mut net, events)?;
    let final_losses = epochs.last().expect("at least one epoch").losses.clone();
    let meta = TrainMeta {
        epochs: cfg.epochs,
        seed,
        final_losses,
    };
    Ok(TrainReport {
        checkpoint: net.into_checkpoint(meta),
        epochs,
    })
}

fn fit(net: &mut Net, events: &[EncodedEvent]) -> Result<Vec<EpochStats>, ModelError> {
    assert!(!events.is_empty());
    let cfg = net.cfg.clone();
    let m = net.plan.tasks.len() as f64;
    let plen = net.store.len();
    let mut adam = Adam::new(plen, cfg.learning_rate);
    let mut accum = vec![0.0; plen];
    let mut scratch = vec![0.0; plen];
    let mut window_index = 0usize;
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut state = init_state(cfg.hidden);
        let mut sums: BTreeMap<Task, f64> =
            net.plan.tasks.iter().map(|t| (*t, 0.0)).collect();
        let mut n_total = 0usize;
        let mut in_batch = 0usize;
        for window in events.chunks(cfg.tbptt_window) {
            let run = net.forward_window(window, &state);
            let window_total: f64 = run.sums.values().sum();
            if !window_total.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    batch: window_index,
                });
            }
            for (t, s) in &run.sums {
                *sums.get_mut(t).unwrap() += s;
            }
            n_total += run.n;
            scratch.fill(0.0);
            net.backward_window(&run, &mut scratch);
            let scale = 1.0 / (run.n as f64 * m);
            for (a, s) in accum.iter_mut().zip(&scratch) {
                *a += s * scale;
            }
            in_batch += 1;
            state = run.state_out;
            window_index += 1;
            if in_batch == cfg.batch_size {
                for g in accum.iter_mut() {
                    *g /= in_batch as f64;
                }
                adam.step(&mut net.store.data, &mut accum);
                accum.fill(0.0);
                in_batch = 0;
            }
        }
        if in_batch > 0 {
            for g in accum.iter_mut() {
                *g /= in_batch as f64;
            }
            adam.step(&mut net.store.data, &mut accum);
            accum.fill(0.0);
        }
        out.push(EpochStats {
            epoch,
            losses: TaskLosses::from_sums(&sums, n_total),
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

/// Teacher-forced loss of a checkpoint over encoded windows. Each window
/// starts from the zero state.
pub fn forward_loss(
    ckpt: &ModelCheckpoint,
    windows: &[&[EncodedEvent]],
) -> Result<TaskLosses, ModelError> {
    let net = Net::from_checkpoint(ckpt);
    let mut sums: BTreeMap<Task, f64> = net.plan.tasks.iter().map(|t| (*t, 0.0)).collect();
    let mut n = 0usize;
    for w in windows {
        if w.is_empty() {
            continue;
        }
        let run = net.forward_window(w, &init_state(net.cfg.hidden));
        for (t, s) in &run.sums {
            *sums.get_mut(t).unwrap() += s;
        }
        n += run.n;
    }
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(TaskLosses::from_sums(&sums, n))
}

/// Compares the full-model analytic gradient against central finite
/// differences on `trials` random coordinates; returns the max relative
/// error (relative to the sampled gradient's infinity norm).
pub fn gradient_check(cfg: &TempoNetConfig, trials: usize) -> Result<f64, ModelError> {
    gradient_check_impl(cfg, trials, 1.0)
}

/// Same check with the analytic gradient deliberately scaled by 5%; used
/// to demonstrate the checker actually detects wrong gradients.
pub fn gradient_check_corrupted(
    cfg: &TempoNetConfig,
    trials: usize,
) -> Result<f64, ModelError> {
    gradient_check_impl(cfg, trials, 1.05)
}

fn gradient_check_impl(
    cfg: &TempoNetConfig,
    trials: usize,
    corruption: f64,
) -> Result<f64, ModelError> {
    cfg.validate()?;
    let stages: &[Stage] = if cfg.stage_split {
        &[Stage::One, Stage::Two]
    } else {
        &[Stage::Single]
    };
    let mut worst = 0.0f64;
    for stage in stages {
        worst = worst.max(gradient_check_stage(cfg, *stage, trials, corruption));
    }
    Ok(worst)
}

fn synthetic_vocab(tokens: &[&str]) -> FieldVocab {
    let mut v: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    v.push(crate::ingest::RARE_TOKEN.to_string());
    FieldVocab::from_tokens(v)
}

fn gradient_check_stage(cfg: &TempoNetConfig, stage: Stage, trials: usize, corruption: f64) -> f64 {
    let vocabs = Vocabularies {
        src_ip: synthetic_vocab(&["10.0.0.1", "10.0.0.2", "10.0.0.3", "10.0.0.4"]),
        dst_ip: synthetic_vocab(&["10.0.1.1", "10.0.1.2", "10.0.1.3", "10.0.1.4"]),
        protocol: synthetic_vocab(&["TCP", "UDP"]),
        src_port: synthetic_vocab(&["40000", "40001", "40002"]),
        dst_port: synthetic_vocab(&["80", "443", "53"]),
        rare_threshold: cfg.rare_threshold,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let n_events = 24usize;
    let mut t = 1_704_067_200.0;
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let z: f64 = StandardNormal.sample(&mut rng);
        let tau = z.exp().max(crate::ingest::EPS_TAU);
        t += tau;
        let zs: f64 = StandardNormal.sample(&mut rng);
        let zd: f64 = StandardNormal.sample(&mut rng);
        events.push(EncodedEvent {
            tau,
            timestamp: t,
            src_ip: rng.random_range(0..vocabs.src_ip.len()),
            dst_ip: rng.random_range(0..vocabs.dst_ip.len()),
            protocol: rng.random_range(0..vocabs.protocol.len()),
            src_port: rng.random_range(0..vocabs.src_port.len()),
            dst_port: rng.random_range(0..vocabs.dst_port.len()),
            log_size: 4.0 + zs,
            log_duration: 0.5 * zd,
            seasonal: metadata_vector(t, &[]),
        });
    }
    let scaler = FeatureScaler::fit(&events);
    let mut net = Net::build(cfg.clone(), stage, vocabs, scaler);
    net.init_params(&mut rng);
    // wiggle every parameter so zero-initialized paths carry signal too
    for v in net.store.data.iter_mut() {
        *v += (rng.random::<f64>() * 2.0 - 1.0) * 0.05;
    }

    let m = net.plan.tasks.len() as f64;
    let n = events.len() as f64;
    let zero = init_state(net.cfg.hidden);
    let run = net.forward_window(&events, &zero);
    let mut grad = vec![0.0; net.store.len()];
    net.backward_window(&run, &mut grad);
    for g in grad.iter_mut() {
        *g *= corruption / (n * m);
    }

    let loss = |net: &Net| -> f64 {
        let run = net.forward_window(&events, &zero);
        run.sums.values().sum::<f64>() / (n * m)
    };
    let h = 1e-5;
    let coords: Vec<usize> = (0..trials)
        .map(|_| rng.random_range(0..net.store.len()))
        .collect();
    let mut fds = Vec::with_capacity(coords.len());
    for &j in &coords {
        let orig = net.store.data[j];
        net.store.data[j] = orig + h;
        let plus = loss(&net);
        net.store.data[j] = orig - h;
        let minus = loss(&net);
        net.store.data[j] = orig;
        fds.push((plus - minus) / (2.0 * h));
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let sampled: Vec<f64> = coords.iter().map(|j| grad[*j]).collect();
    let denom = inf(&sampled).max(inf(&fds)).max(1e-8);
    coords
        .iter()
        .zip(&fds)
        .map(|(j, fd)| (grad[*j] - fd).abs() / denom)
        .fold(0.0, f64::max)
}

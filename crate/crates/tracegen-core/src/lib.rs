//! Synthetic network trace generation.
//!
//! The crate trains an autoregressive model over flow or packet header
//! traces and samples new traces from it. Event timing is modelled as a
//! temporal point process with a log-normal mixture over inter-arrival
//! times; header fields (addresses, ports, protocol, sizes, duration) are
//! modelled by categorical and mixture heads conditioned on a recurrent
//! history encoder. Everything runs on plain `f64` buffers, single
//! threaded, with hand-derived gradients.
//!
//! Module layout:
//!
//! * [`ingest`]: trace records, CSV parsing, vocabularies, encoding, splits
//! * [`fixture`]: seeded synthetic ground-truth traces for testing
//! * [`tpp`]: the log-normal mixture density, its sampler and gradients
//! * [`encoder`]: LSTM history encoder and event embedding
//! * [`heads`]: categorical output heads and conditioning contexts
//! * [`model`]: parameter store, training loop, checkpoints, gradient checks
//! * [`generator`]: autoregressive sampling of synthetic traces
//! * [`metrics`]: fidelity, diversity and disclosure metrics
//! * [`compliance`]: protocol compliance rules and the DKC score
//! * [`config`]: key-value config files shared by the CLI and fixtures

pub mod compliance;
pub mod config;
pub mod encoder;
pub mod fixture;
pub mod generator;
pub mod heads;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod tpp;

pub use compliance::{check_record, dkc_score, RuleConfig, RuleId, ViolationReport};
pub use generator::{generate, generate_two_stage, GenerationRequest, Horizon, RareMode};
pub use heads::SamplingMode;
pub use ingest::{EncodedEvent, TraceDataset, TraceKind, TraceRecord, Vocabularies};
pub use metrics::{evaluate, MetricError, MetricReport};
pub use model::{train, train_two_stage, ModelCheckpoint, TempoNetConfig};

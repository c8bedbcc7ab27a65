//! Seeded synthetic ground-truth traces.
//!
//! Fixtures give the test suite (and users kicking the tires) a trace
//! whose true structure is known exactly: event times follow an
//! inhomogeneous Poisson process with an hour-of-day rate profile and a
//! weekday multiplier, and each event draws a host pair, a service
//! (protocol and destination port) and log-normal sizes and durations
//! from per-pair tables. Sampling uses thinning against the peak rate, so
//! the time distribution is exact, not binned.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use thiserror::Error;

use crate::config::ConfigFile;
use crate::ingest::{hour_of_day, weekday_of, TraceDataset, TraceKind, TraceRecord};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error("fixture config: {0}")]
    Config(#[from] crate::config::ConfigError),
}

/// One service a host pair speaks: protocol, destination port, and its
/// share of the pair's traffic.
#[derive(Debug, Clone)]
pub struct ServiceSpec {
    pub protocol: String,
    pub dst_port: u16,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct PairSpec {
    pub src: String,
    pub dst: String,
    /// Share of all events carried by this pair.
    pub weight: f64,
    pub services: Vec<ServiceSpec>,
    /// Source ports drawn uniformly; empty means ephemeral 32768..=60999.
    pub src_ports: Vec<u16>,
    /// ln-space parameters of the bytes_in draw.
    pub size_mu: f64,
    pub size_sigma: f64,
    /// ln-space parameters of the flow duration draw (ignored for packets).
    pub dur_mu: f64,
    pub dur_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub kind: TraceKind,
    /// Epoch seconds of the first instant covered.
    pub start: f64,
    pub days: f64,
    /// Base rate per hour of day, events per hour.
    pub hour_rate: [f64; 24],
    /// Multiplier per weekday, Monday = 0.
    pub weekday_mult: [f64; 7],
    pub pairs: Vec<PairSpec>,
}

/// 2024-01-01T00:00:00Z, a Monday. Starting fixtures on a week boundary
/// keeps weekday effects aligned with whole weeks.
pub const DEFAULT_START: f64 = 1_704_067_200.0;

impl FixtureSpec {
    fn validate(&self) -> Result<(), FixtureError> {
        let fail = |msg: String| Err(FixtureError::InvalidSpec(msg));
        if !(self.days > 0.0) || !self.days.is_finite() {
            return fail(format!("days must be positive, got {}", self.days));
        }
        if !self.start.is_finite() {
            return fail("start must be finite".into());
        }
        if self.hour_rate.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return fail("hour rates must be finite and non-negative".into());
        }
        if self.weekday_mult.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return fail("weekday multipliers must be finite and non-negative".into());
        }
        let peak = self.peak_rate_per_sec();
        if peak <= 0.0 {
            return fail("rate profile is identically zero".into());
        }
        if self.pairs.is_empty() {
            return fail("at least one host pair is required".into());
        }
        let wsum: f64 = self.pairs.iter().map(|p| p.weight).sum();
        if (wsum - 1.0).abs() > 1e-6 {
            return fail(format!("pair weights sum to {wsum}, expected 1"));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if p.weight < 0.0 {
                return fail(format!("pair {i} has negative weight"));
            }
            if p.services.is_empty() {
                return fail(format!("pair {i} has no services"));
            }
            let sw: f64 = p.services.iter().map(|s| s.weight).sum();
            if (sw - 1.0).abs() > 1e-6 {
                return fail(format!("pair {i} service weights sum to {sw}, expected 1"));
            }
            if p.services.iter().any(|s| s.weight < 0.0) {
                return fail(format!("pair {i} has a negative service weight"));
            }
            if p.size_sigma < 0.0 || p.dur_sigma < 0.0 {
                return fail(format!("pair {i} has a negative sigma"));
            }
        }
        Ok(())
    }

    /// Events per second at time `t`.
    fn rate_per_sec(&self, t: f64) -> f64 {
        self.hour_rate[hour_of_day(t)] * self.weekday_mult[weekday_of(t)] / 3600.0
    }

    fn peak_rate_per_sec(&self) -> f64 {
        let max_hour = self.hour_rate.iter().cloned().fold(0.0, f64::max);
        let max_mult = self.weekday_mult.iter().cloned().fold(0.0, f64::max);
        max_hour * max_mult / 3600.0
    }

    /// Reads the config-file form:
    ///
    /// ```text
    /// kind = flow
    /// days = 21
    /// start = 1704067200
    /// [rate]
    /// hours = 70, 70, ... (1 value for all hours, or 24 values)
    /// weekdays = 1, 1, 1, 1, 1, 0.5, 0.5   (1 or 7 values, default 1)
    /// [pair.0]
    /// src = 10.0.0.1
    /// dst = 10.0.9.9
    /// weight = 0.6
    /// services = TCP:443:0.7, UDP:53:0.3
    /// src_ports = 40000, 40001
    /// size_mu = 6.0
    /// size_sigma = 1.0
    /// dur_mu = -1.0
    /// dur_sigma = 0.5
    /// ```
    pub fn from_config(cfg: &ConfigFile) -> Result<Self, FixtureError> {
        let bad = |msg: String| FixtureError::InvalidSpec(msg);
        let kind = cfg
            .get("", "kind")
            .unwrap_or("flow")
            .parse::<TraceKind>()
            .map_err(bad)?;
        let days = cfg
            .get_f64("", "days")?
            .ok_or_else(|| bad("missing `days`".into()))?;
        let start = cfg.get_f64("", "start")?.unwrap_or(DEFAULT_START);

        let hour_values: Vec<f64> = parse_numbers(cfg.get_list("rate", "hours"))
            .map_err(|v| bad(format!("bad hour rate `{v}`")))?;
        let hour_rate: [f64; 24] = match hour_values.len() {
            1 => [hour_values[0]; 24],
            24 => hour_values.try_into().expect("checked length"),
            0 => return Err(bad("missing `hours` in [rate]".into())),
            n => return Err(bad(format!("`hours` needs 1 or 24 values, got {n}"))),
        };
        let weekday_values: Vec<f64> = parse_numbers(cfg.get_list("rate", "weekdays"))
            .map_err(|v| bad(format!("bad weekday multiplier `{v}`")))?;
        let weekday_mult: [f64; 7] = match weekday_values.len() {
            0 => [1.0; 7],
            1 => [weekday_values[0]; 7],
            7 => weekday_values.try_into().expect("checked length"),
            n => return Err(bad(format!("`weekdays` needs 1 or 7 values, got {n}"))),
        };

        let mut pairs = Vec::new();
        for i in 0.. {
            let section = format!("pair.{i}");
            if !cfg.has_section(&section) {
                break;
            }
            let get = |key: &str| -> Result<&str, FixtureError> {
                Ok(cfg.require(&section, key)?)
            };
            let num = |key: &str| -> Result<f64, FixtureError> {
                cfg.get_f64(&section, key)?
                    .ok_or_else(|| bad(format!("[{section}] missing `{key}`")))
            };
            let mut services = Vec::new();
            for item in cfg.get_list(&section, "services") {
                let parts: Vec<&str> = item.split(':').collect();
                let [proto, port, weight] = parts[..] else {
                    return Err(bad(format!(
                        "[{section}] service `{item}` is not protocol:port:weight"
                    )));
                };
                services.push(ServiceSpec {
                    protocol: proto.to_string(),
                    dst_port: port
                        .parse()
                        .map_err(|_| bad(format!("[{section}] bad port in `{item}`")))?,
                    weight: weight
                        .parse()
                        .map_err(|_| bad(format!("[{section}] bad weight in `{item}`")))?,
                });
            }
            let mut src_ports = Vec::new();
            for p in cfg.get_list(&section, "src_ports") {
                src_ports.push(
                    p.parse::<u16>()
                        .map_err(|_| bad(format!("[{section}] bad src port `{p}`")))?,
                );
            }
            pairs.push(PairSpec {
                src: get("src")?.to_string(),
                dst: get("dst")?.to_string(),
                weight: num("weight")?,
                services,
                src_ports,
                size_mu: num("size_mu")?,
                size_sigma: num("size_sigma")?,
                dur_mu: cfg.get_f64(&section, "dur_mu")?.unwrap_or(0.0),
                dur_sigma: cfg.get_f64(&section, "dur_sigma")?.unwrap_or(0.0),
            });
        }
        let spec = FixtureSpec {
            kind,
            start,
            days,
            hour_rate,
            weekday_mult,
            pairs,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_numbers(items: Vec<String>) -> Result<Vec<f64>, String> {
    items
        .into_iter()
        .map(|s| s.parse::<f64>().map_err(|_| s))
        .collect()
}

fn pick_weighted<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        last = i;
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    last
}

/// Samples a fixture trace. The same spec and seed always produce the
/// identical dataset.
pub fn make_fixture(spec: &FixtureSpec, seed: u64) -> Result<TraceDataset, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let end = spec.start + spec.days * 86_400.0;
    let peak = spec.peak_rate_per_sec();

    let mut records = Vec::new();
    let mut t = spec.start;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / peak;
        if t >= end {
            break;
        }
        if rng.random::<f64>() * peak > spec.rate_per_sec(t) {
            continue;
        }
        let pair = &spec.pairs[pick_weighted(&mut rng, spec.pairs.iter().map(|p| p.weight))];
        let service =
            &pair.services[pick_weighted(&mut rng, pair.services.iter().map(|s| s.weight))];
        let src_port = if pair.src_ports.is_empty() {
            rng.random_range(32768..=60999)
        } else {
            pair.src_ports[rng.random_range(0..pair.src_ports.len())]
        };
        let size_dist = LogNormal::new(pair.size_mu, pair.size_sigma)
            .map_err(|e| FixtureError::InvalidSpec(format!("size distribution: {e}")))?;
        let bytes_in = (size_dist.sample(&mut rng).round() as u64).max(1);
        let (bytes_in, bytes_out, packets_in, packets_out, duration) = match spec.kind {
            TraceKind::Packet => {
                let size = bytes_in.min(65_535);
                (size, 0, 1, 0, 0.0)
            }
            TraceKind::Flow => {
                let dur_dist = LogNormal::new(pair.dur_mu, pair.dur_sigma)
                    .map_err(|e| FixtureError::InvalidSpec(format!("duration distribution: {e}")))?;
                let duration = (dur_dist.sample(&mut rng) * 1e6).round() / 1e6;
                let bytes_out = bytes_in / 2;
                let packets_in = bytes_in.div_ceil(1200).max(1);
                let packets_out = if bytes_out > 0 {
                    bytes_out.div_ceil(1200).max(1)
                } else {
                    0
                };
                (bytes_in, bytes_out, packets_in, packets_out, duration)
            }
        };
        // timestamps on the microsecond grid match the canonical CSV precision
        let timestamp = (t * 1e6).round() / 1e6;
        records.push(TraceRecord {
            timestamp,
            src_ip: pair.src.clone(),
            dst_ip: pair.dst.clone(),
            protocol: service.protocol.clone(),
            src_port,
            dst_port: service.dst_port,
            bytes_in,
            bytes_out,
            packets_in,
            packets_out,
            duration,
            tcp_flags: None,
        });
    }
    if records.is_empty() {
        return Err(FixtureError::InvalidSpec(
            "spec produced no events; raise the rates or the span".into(),
        ));
    }
    Ok(TraceDataset::new(spec.kind, records))
}

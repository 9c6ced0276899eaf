//! Seeded synthetic traffic with heavy-tailed flow lengths.
//!
//! Flows arrive as a Poisson process. Each flow gets a unique 5-tuple and a
//! packet count drawn from a discretized Pareto law,
//! `floor(xmin * (1 - u)^(-1 / alpha))` with `u` uniform on `[0, 1)`. Packets
//! inside a flow are spaced by exponential gaps (at least 1 us) and take one
//! of two sizes. A flow is truncated at the end of the trace.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, split into one
//! ChaCha stream per purpose (see the `STREAM_*` constants) so that, for
//! example, the flow-length sequence depends only on the seed.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{FlowKey, PacketRecord, PROTO_TCP, PROTO_UDP, TCP_ACK, TCP_FIN, TCP_SYN};

pub const STREAM_ARRIVALS: u64 = 0;
pub const STREAM_LENGTHS: u64 = 1;
pub const STREAM_KEYS: u64 = 2;
pub const STREAM_PACKETS: u64 = 3;

const WELL_KNOWN_PORTS: [u16; 8] = [80, 443, 53, 25, 22, 110, 8080, 123];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub duration_s: f64,
    /// Poisson flow arrivals per second.
    pub flow_arrival_rate: f64,
    /// Pareto shape of the packets-per-flow law.
    pub pareto_alpha: f64,
    /// Minimum packets per flow.
    pub pareto_xmin: f64,
    pub pkt_size_small: u16,
    pub pkt_size_large: u16,
    pub large_pkt_prob: f64,
    /// Mean exponential gap between packets of one flow.
    pub mean_ipg_ms: f64,
    /// Fraction of flows that are TCP; the rest are UDP.
    pub tcp_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// One hour of traffic, roughly 3 million packets.
    fn default() -> Self {
        SyntheticConfig {
            duration_s: 3600.0,
            flow_arrival_rate: 150.0,
            pareto_alpha: 1.2,
            pareto_xmin: 1.0,
            pkt_size_small: 40,
            pkt_size_large: 1500,
            large_pkt_prob: 0.3,
            mean_ipg_ms: 100.0,
            tcp_fraction: 0.85,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        positive(self.duration_s, "duration_s")?;
        positive(self.flow_arrival_rate, "flow_arrival_rate")?;
        positive(self.pareto_alpha, "pareto_alpha")?;
        positive(self.mean_ipg_ms, "mean_ipg_ms")?;
        if !(self.pareto_xmin.is_finite() && self.pareto_xmin >= 1.0) {
            return Err(Error::Config(format!(
                "pareto_xmin must be at least 1, got {}",
                self.pareto_xmin
            )));
        }
        unit(self.large_pkt_prob, "large_pkt_prob")?;
        unit(self.tcp_fraction, "tcp_fraction")?;
        if self.pkt_size_small == 0 || self.pkt_size_large == 0 {
            return Err(Error::Config(
                "packet sizes must be at least 1 octet".into(),
            ));
        }
        Ok(())
    }

    fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }
}

/// A flow before its packets are laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPlan {
    pub start_us: u64,
    pub key: FlowKey,
    /// Drawn length; the realized count can be smaller if the trace ends first.
    pub packets: u64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a discretized Pareto flow length by inverse transform.
pub fn pareto_length<R: Rng>(rng: &mut R, alpha: f64, xmin: f64) -> u64 {
    let u: f64 = rng.random();
    let x = xmin * (1.0 - u).powf(-1.0 / alpha);
    // Beyond ~1e15 packets the trace end truncates anyway.
    x.min(1e15).floor() as u64
}

fn random_key<R: Rng>(rng: &mut R, tcp_fraction: f64) -> FlowKey {
    let proto = if rng.random_bool(tcp_fraction) {
        PROTO_TCP
    } else {
        PROTO_UDP
    };
    let dst_port = if rng.random_bool(0.9) {
        WELL_KNOWN_PORTS[rng.random_range(0..WELL_KNOWN_PORTS.len())]
    } else {
        rng.random_range(1..1024)
    };
    FlowKey {
        src_ip: Ipv4Addr::from(0x0a00_0000 | rng.random_range(1..0x00ff_ffffu32)),
        dst_ip: Ipv4Addr::from(rng.random_range(0x0100_0000..0xdfff_ffffu32)),
        src_port: rng.random_range(1024..=u16::MAX),
        dst_port,
        proto,
    }
}

/// Flow arrivals, keys and drawn lengths, in arrival order.
pub fn plan_flows(config: &SyntheticConfig) -> Result<Vec<FlowPlan>> {
    config.validate()?;
    let mut arrivals = rng_for(config.seed, STREAM_ARRIVALS);
    let mut lengths = rng_for(config.seed, STREAM_LENGTHS);
    let mut keys = rng_for(config.seed, STREAM_KEYS);
    let gap = Exp::new(config.flow_arrival_rate)
        .map_err(|e| Error::Config(format!("flow_arrival_rate: {e}")))?;

    let mut seen = HashSet::new();
    let mut plans = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += gap.sample(&mut arrivals);
        if t >= config.duration_s {
            break;
        }
        let key = loop {
            let k = random_key(&mut keys, config.tcp_fraction);
            if seen.insert(k) {
                break k;
            }
        };
        plans.push(FlowPlan {
            start_us: (t * 1e6) as u64,
            key,
            packets: pareto_length(&mut lengths, config.pareto_alpha, config.pareto_xmin),
        });
    }
    Ok(plans)
}

/// Generates a timestamp-sorted synthetic trace.
///
/// TCP flows open with SYN, carry ACK, and their last emitted packet has FIN
/// set (SYN|FIN for a single-packet flow). Output is sorted by
/// `(ts_us, src_ip, src_port)` with a stable sort, so equal keys keep flow
/// generation order.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<PacketRecord>> {
    let plans = plan_flows(config)?;
    let end_us = config.duration_us();
    let mut rng = rng_for(config.seed, STREAM_PACKETS);
    let ipg = Exp::new(1.0 / (config.mean_ipg_ms * 1e3))
        .map_err(|e| Error::Config(format!("mean_ipg_ms: {e}")))?;

    let mut packets = Vec::new();
    for plan in &plans {
        let key = plan.key;
        let mut ts = plan.start_us;
        let mut i = 0u64;
        while i < plan.packets && ts < end_us {
            let next_ts = ts + (ipg.sample(&mut rng).round() as u64).max(1);
            let last = i + 1 == plan.packets || next_ts >= end_us;
            let byte_len = if rng.random_bool(config.large_pkt_prob) {
                config.pkt_size_large
            } else {
                config.pkt_size_small
            };
            let tcp_flags = if key.proto == PROTO_TCP {
                let mut f = if i == 0 { TCP_SYN } else { TCP_ACK };
                if last {
                    f |= TCP_FIN;
                }
                f
            } else {
                0
            };
            packets.push(PacketRecord {
                ts_us: ts,
                src_ip: key.src_ip,
                dst_ip: key.dst_ip,
                src_port: key.src_port,
                dst_port: key.dst_port,
                proto: key.proto,
                byte_len,
                tcp_flags,
            });
            ts = next_ts;
            i += 1;
        }
    }
    packets.sort_by_key(|p| (p.ts_us, p.src_ip, p.src_port));
    Ok(packets)
}

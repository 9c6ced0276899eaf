//! NetFlow-style flow cache emulation.
//!
//! Packets are classified by 5-tuple into cache entries, and entries are
//! exported as [`FlowRecord`]s under four rules: inactivity, active age, TCP
//! stream end (FIN/RST), and capacity pressure. Expiry is evaluated lazily at
//! each offered packet's timestamp, so a replay over the same trace always
//! produces the same records.
//!
//! With `capacity: None` the cache never runs out of room, which models an
//! emulation with the router's memory limit lifted.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{parse_field, parse_hex_u8, FlowKey, PacketRecord};

pub const FLOW_HEADER: &str =
    "src_ip,dst_ip,src_port,dst_port,proto,first_ts_us,last_ts_us,packets,bytes,flags_or,export_reason";

const US_PER_S: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub inactive_timeout_s: f64,
    pub active_timeout_s: f64,
    /// Maximum resident entries; `None` is unlimited.
    pub capacity: Option<usize>,
    pub high_watermark: f64,
    pub evict_fraction: f64,
    pub tcp_end_expiry: bool,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            inactive_timeout_s: 15.0,
            active_timeout_s: 1800.0,
            capacity: None,
            high_watermark: 0.9,
            evict_fraction: 0.1,
            tcp_end_expiry: true,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(self.inactive_timeout_s.is_finite() && self.inactive_timeout_s > 0.0) {
            return err(format!(
                "inactive timeout {} must be positive",
                self.inactive_timeout_s
            ));
        }
        if !(self.active_timeout_s.is_finite() && self.active_timeout_s > self.inactive_timeout_s) {
            return err(format!(
                "active timeout {} must exceed inactive timeout {}",
                self.active_timeout_s, self.inactive_timeout_s
            ));
        }
        if !(self.high_watermark > 0.0 && self.high_watermark <= 1.0) {
            return err(format!(
                "high watermark {} outside (0, 1]",
                self.high_watermark
            ));
        }
        if !(self.evict_fraction > 0.0 && self.evict_fraction < 1.0) {
            return err(format!(
                "evict fraction {} outside (0, 1)",
                self.evict_fraction
            ));
        }
        if self.capacity == Some(0) {
            return err("capacity must be at least 1".into());
        }
        Ok(())
    }

    fn inactive_us(&self) -> u64 {
        (self.inactive_timeout_s * US_PER_S).round() as u64
    }

    fn active_us(&self) -> u64 {
        (self.active_timeout_s * US_PER_S).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportReason {
    Inactive,
    Active,
    TcpEnd,
    Pressure,
    Flush,
}

impl ExportReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExportReason::Inactive => "inactive",
            ExportReason::Active => "active",
            ExportReason::TcpEnd => "tcp_end",
            ExportReason::Pressure => "pressure",
            ExportReason::Flush => "flush",
        }
    }
}

impl std::str::FromStr for ExportReason {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "inactive" => ExportReason::Inactive,
            "active" => ExportReason::Active,
            "tcp_end" => ExportReason::TcpEnd,
            "pressure" => ExportReason::Pressure,
            "flush" => ExportReason::Flush,
            _ => return Err(format!("unknown export reason `{s}`")),
        })
    }
}

/// An exported flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub packets: u64,
    pub bytes: u64,
    pub flags_or: u8,
    pub export_reason: ExportReason,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    first_ts_us: u64,
    last_ts_us: u64,
    packets: u64,
    bytes: u64,
    flags_or: u8,
}

impl Entry {
    fn export(self, key: FlowKey, export_reason: ExportReason) -> FlowRecord {
        FlowRecord {
            key,
            first_ts_us: self.first_ts_us,
            last_ts_us: self.last_ts_us,
            packets: self.packets,
            bytes: self.bytes,
            flags_or: self.flags_or,
            export_reason,
        }
    }
}

/// A single-threaded flow cache. Feed packets in timestamp order with
/// [`FlowCache::offer`] and drain at the end with [`FlowCache::flush`].
#[derive(Debug, Clone)]
pub struct FlowCache {
    config: CacheConfig,
    inactive_us: u64,
    active_us: u64,
    entries: HashMap<FlowKey, Entry>,
    // (last_ts_us, key): oldest-idle first.
    by_last: BTreeSet<(u64, FlowKey)>,
    // (first_ts_us, key): oldest-started first.
    by_first: BTreeSet<(u64, FlowKey)>,
    clock_us: Option<u64>,
}

impl FlowCache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        Ok(FlowCache {
            inactive_us: config.inactive_us(),
            active_us: config.active_us(),
            config,
            entries: HashMap::new(),
            by_last: BTreeSet::new(),
            by_first: BTreeSet::new(),
            clock_us: None,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// Number of resident entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn remove(&mut self, key: &FlowKey) -> Entry {
        let e = self.entries.remove(key).expect("indexed entry is resident");
        self.by_last.remove(&(e.last_ts_us, *key));
        self.by_first.remove(&(e.first_ts_us, *key));
        e
    }

    /// Processes one packet and returns every record it caused to be exported,
    /// ordered by first timestamp then key.
    pub fn offer(&mut self, packet: &PacketRecord) -> Result<Vec<FlowRecord>> {
        let now = packet.ts_us;
        if let Some(last) = self.clock_us {
            if now < last {
                return Err(Error::OutOfOrder {
                    ts_us: now,
                    last_ts_us: last,
                });
            }
        }
        self.clock_us = Some(now);
        let mut out = Vec::new();

        // Idle for at least the inactive timeout.
        while let Some(&(last_ts, key)) = self.by_last.first() {
            if now - last_ts < self.inactive_us {
                break;
            }
            let e = self.remove(&key);
            out.push(e.export(key, ExportReason::Inactive));
        }
        // Alive for at least the active timeout.
        while let Some(&(first_ts, key)) = self.by_first.first() {
            if now - first_ts < self.active_us {
                break;
            }
            let e = self.remove(&key);
            out.push(e.export(key, ExportReason::Active));
        }

        let key = packet.key();
        let entry = match self.entries.get_mut(&key) {
            Some(e) => {
                self.by_last.remove(&(e.last_ts_us, key));
                e.last_ts_us = now;
                e.packets += 1;
                e.bytes += u64::from(packet.byte_len);
                e.flags_or |= packet.tcp_flags;
                *e
            }
            None => {
                let e = Entry {
                    first_ts_us: now,
                    last_ts_us: now,
                    packets: 1,
                    bytes: u64::from(packet.byte_len),
                    flags_or: packet.tcp_flags,
                };
                self.entries.insert(key, e);
                self.by_first.insert((now, key));
                e
            }
        };
        self.by_last.insert((entry.last_ts_us, key));

        if self.config.tcp_end_expiry && packet.ends_tcp_stream() {
            let e = self.remove(&key);
            out.push(e.export(key, ExportReason::TcpEnd));
        }

        if let Some(capacity) = self.config.capacity {
            let occupancy = self.entries.len();
            if occupancy as f64 > self.config.high_watermark * capacity as f64 {
                let evict = ((self.config.evict_fraction * occupancy as f64).ceil() as usize)
                    .clamp(1, occupancy);
                for _ in 0..evict {
                    let (_, key) = *self.by_last.first().expect("occupancy > 0");
                    let e = self.remove(&key);
                    out.push(e.export(key, ExportReason::Pressure));
                }
            }
        }

        sort_records(&mut out);
        Ok(out)
    }

    /// Exports every resident entry with reason `flush`, leaving the cache empty.
    pub fn flush(&mut self) -> Vec<FlowRecord> {
        let mut out: Vec<FlowRecord> = self
            .entries
            .drain()
            .map(|(key, e)| e.export(key, ExportReason::Flush))
            .collect();
        self.by_last.clear();
        self.by_first.clear();
        sort_records(&mut out);
        out
    }
}

fn sort_records(records: &mut [FlowRecord]) {
    records.sort_by_key(|r| (r.first_ts_us, r.key));
}

/// Offers every packet in order, then flushes.
pub fn build_flows(trace: &[PacketRecord], config: &CacheConfig) -> Result<Vec<FlowRecord>> {
    let mut cache = FlowCache::new(config.clone())?;
    let mut out = Vec::new();
    for p in trace {
        out.extend(cache.offer(p)?);
    }
    out.extend(cache.flush());
    Ok(out)
}

pub fn write_flows(records: &[FlowRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_flows_to(records, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_flows_to<W: Write>(records: &[FlowRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{FLOW_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:#04x},{}",
            r.key.src_ip,
            r.key.dst_ip,
            r.key.src_port,
            r.key.dst_port,
            r.key.proto,
            r.first_ts_us,
            r.last_ts_us,
            r.packets,
            r.bytes,
            r.flags_or,
            r.export_reason.as_str()
        )?;
    }
    Ok(())
}

pub fn read_flows(path: impl AsRef<Path>) -> Result<Vec<FlowRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != FLOW_HEADER {
        return Err(parse_err(1, format!("expected header `{FLOW_HEADER}`")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row =
            row.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let rec = parse_flow_row(&row).map_err(|m| parse_err(line, m))?;
        out.push(rec);
    }
    Ok(out)
}

fn parse_flow_row(row: &csv::StringRecord) -> std::result::Result<FlowRecord, String> {
    if row.len() != 11 {
        return Err(format!("expected 11 columns, found {}", row.len()));
    }
    let rec = FlowRecord {
        key: FlowKey {
            src_ip: parse_field(&row[0], "src_ip")?,
            dst_ip: parse_field(&row[1], "dst_ip")?,
            src_port: parse_field(&row[2], "src_port")?,
            dst_port: parse_field(&row[3], "dst_port")?,
            proto: parse_field(&row[4], "proto")?,
        },
        first_ts_us: parse_field(&row[5], "first_ts_us")?,
        last_ts_us: parse_field(&row[6], "last_ts_us")?,
        packets: parse_field(&row[7], "packets")?,
        bytes: parse_field(&row[8], "bytes")?,
        flags_or: parse_hex_u8(&row[9]).ok_or_else(|| format!("bad flags_or `{}`", &row[9]))?,
        export_reason: row[10].parse()?,
    };
    if rec.first_ts_us > rec.last_ts_us || rec.packets == 0 || rec.bytes < rec.packets {
        return Err("inconsistent flow record".into());
    }
    Ok(rec)
}

//! Packet and flow-key records, and the canonical trace CSV format.
//!
//! A trace file is LF-terminated CSV with the header
//! `ts_us,src_ip,dst_ip,src_port,dst_port,proto,byte_len,tcp_flags`,
//! dotted-quad IPv4 addresses and `0x`-prefixed hex TCP flags. No quoting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "ts_us,src_ip,dst_ip,src_port,dst_port,proto,byte_len,tcp_flags";

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

pub const TCP_FIN: u8 = 0x01;
pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_PSH: u8 = 0x08;
pub const TCP_ACK: u8 = 0x10;

/// The unidirectional 5-tuple identifying a flow.
///
/// `a -> b` and `b -> a` are distinct keys. The derived ordering (by source
/// address, then destination, ports and protocol) is used to break ties
/// wherever records must be emitted deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

/// One observed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    /// Microseconds since the trace epoch.
    pub ts_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
    /// IP-layer length in octets, at least 1.
    pub byte_len: u16,
    /// Only meaningful for TCP; zero for every other protocol.
    pub tcp_flags: u8,
}

impl PacketRecord {
    pub fn key(&self) -> FlowKey {
        FlowKey {
            src_ip: self.src_ip,
            dst_ip: self.dst_ip,
            src_port: self.src_port,
            dst_port: self.dst_port,
            proto: self.proto,
        }
    }

    /// True for a TCP packet carrying FIN or RST.
    pub fn ends_tcp_stream(&self) -> bool {
        self.proto == PROTO_TCP && self.tcp_flags & (TCP_FIN | TCP_RST) != 0
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.byte_len == 0 {
            return Err("byte_len must be at least 1".into());
        }
        if self.proto != PROTO_TCP && self.tcp_flags != 0 {
            return Err(format!(
                "tcp_flags {:#04x} set on non-TCP protocol {}",
                self.tcp_flags, self.proto
            ));
        }
        Ok(())
    }
}

/// Checks the per-record invariants and that timestamps never decrease.
pub fn validate_trace(records: &[PacketRecord]) -> Result<()> {
    let mut last_ts = 0u64;
    for (index, rec) in records.iter().enumerate() {
        rec.check()
            .map_err(|message| Error::InvalidRecord { index, message })?;
        if rec.ts_us < last_ts {
            return Err(Error::InvalidRecord {
                index,
                message: format!("timestamp {} precedes {}", rec.ts_us, last_ts),
            });
        }
        last_ts = rec.ts_us;
    }
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<PacketRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(file);

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    let mut last_ts = 0u64;
    let mut row = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = reader.read_record(&mut row).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if first {
            first = false;
            let header = row.iter().collect::<Vec<_>>().join(",");
            if header != TRACE_HEADER {
                return Err(parse_err(line, format!("expected header `{TRACE_HEADER}`")));
            }
            continue;
        }
        let rec = parse_packet_row(&row).map_err(|m| parse_err(line, m))?;
        if rec.ts_us < last_ts {
            return Err(parse_err(
                line,
                format!("timestamp {} precedes {}", rec.ts_us, last_ts),
            ));
        }
        last_ts = rec.ts_us;
        records.push(rec);
    }
    if first {
        return Err(parse_err(1, "missing header".into()));
    }
    Ok(records)
}

fn parse_packet_row(row: &csv::StringRecord) -> std::result::Result<PacketRecord, String> {
    if row.len() != 8 {
        return Err(format!("expected 8 columns, found {}", row.len()));
    }
    let rec = PacketRecord {
        ts_us: parse_field(&row[0], "ts_us")?,
        src_ip: parse_field(&row[1], "src_ip")?,
        dst_ip: parse_field(&row[2], "dst_ip")?,
        src_port: parse_field(&row[3], "src_port")?,
        dst_port: parse_field(&row[4], "dst_port")?,
        proto: parse_field(&row[5], "proto")?,
        byte_len: parse_field(&row[6], "byte_len")?,
        tcp_flags: parse_hex_u8(&row[7]).ok_or_else(|| format!("bad tcp_flags `{}`", &row[7]))?,
    };
    rec.check()?;
    Ok(rec)
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    s: &str,
    name: &str,
) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad {name} `{s}`"))
}

pub(crate) fn parse_hex_u8(s: &str) -> Option<u8> {
    let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    u8::from_str_radix(digits, 16).ok()
}

/// Writes `records` as trace CSV. The records are validated first, so nothing
/// is created on an invariant violation.
pub fn write_trace(records: &[PacketRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    validate_trace(records)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace_to(records, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Serializes without validating.
pub fn write_trace_to<W: Write>(records: &[PacketRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:#04x}",
            r.ts_us, r.src_ip, r.dst_ip, r.src_port, r.dst_port, r.proto, r.byte_len, r.tcp_flags
        )?;
    }
    Ok(())
}

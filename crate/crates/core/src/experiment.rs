//! End-to-end experiment: trace -> sampling -> flows -> binned rates,
//! moment tables, error summaries, CDFs and per-interval KS tests, written
//! as a directory of CSV files plus `manifest.json`.
//!
//! Every output is a pure function of the [`ExperimentConfig`], so two runs
//! with the same configuration produce byte-identical directories.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::{
    flow_size_cdf, interval_ks, interval_ks_csv, packet_size_cdf, Ecdf, FlowMetric, IntervalKs,
};
use crate::error::{Error, Result};
use crate::flow_cache::{build_flows, CacheConfig, FlowRecord};
use crate::sampler::SamplingSpec;
use crate::stats::{
    error_table_csv, moment_table_csv, BinComparison, ErrorSummary, MomentRow, Quantity,
};
use crate::synthetic::{generate_synthetic, SyntheticConfig};
use crate::trace::{read_trace, write_trace_to, PacketRecord};

pub const DEFAULT_BINS_S: [f64; 3] = [30.0, 120.0, 300.0];
pub const DEFAULT_KS_INTERVAL_S: f64 = 30.0;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    File(PathBuf),
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: TraceSource,
    pub sampling: SamplingSpec,
    pub cache: CacheConfig,
    pub bin_widths_s: Vec<f64>,
    /// Width of the windows used for per-interval KS tests.
    pub ks_interval_s: f64,
    pub alpha: f64,
    /// Not echoed into the manifest, so a report is independent of where it is written.
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(source: TraceSource, sampling: SamplingSpec, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            source,
            sampling,
            cache: CacheConfig::default(),
            bin_widths_s: DEFAULT_BINS_S.to_vec(),
            ks_interval_s: DEFAULT_KS_INTERVAL_S,
            alpha: DEFAULT_ALPHA,
            out_dir: out_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_widths_s.is_empty() {
            return Err(Error::Config("at least one bin width is required".into()));
        }
        if let Some(w) = self
            .bin_widths_s
            .iter()
            .find(|w| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::Config(format!("bin width {w} must be positive")));
        }
        if !(self.ks_interval_s.is_finite() && self.ks_interval_s * 1e6 >= 1.0) {
            return Err(Error::Config(format!(
                "KS interval {} must be positive",
                self.ks_interval_s
            )));
        }
        crate::distributions::ks_coefficient(self.alpha)?;
        self.sampling.validate()?;
        self.cache.validate()?;
        if let TraceSource::Synthetic(s) = &self.source {
            s.validate()?;
        }
        Ok(())
    }
}

/// Everything computed from one (original, sampled) pair of streams.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// `[start, end)` in microseconds.
    pub window: (u64, u64),
    pub q: f64,
    pub bins: Vec<BinComparison>,
    pub moment_rows: Vec<MomentRow>,
    pub error_rows: Vec<ErrorSummary>,
    pub unsampled_flows: Vec<FlowRecord>,
    pub sampled_flows: Vec<FlowRecord>,
    pub packet_size: (Ecdf, Ecdf),
    pub flow_packets: (Ecdf, Ecdf),
    pub flow_bytes: (Ecdf, Ecdf),
    pub ks: Vec<IntervalKs>,
}

impl Analysis {
    /// Fraction of defined KS rows for `metric` that reject.
    pub fn ks_reject_fraction(&self, metric: FlowMetric) -> Option<f64> {
        let defined: Vec<bool> = self
            .ks
            .iter()
            .filter(|r| r.metric == metric)
            .filter_map(|r| r.result.map(|k| k.reject))
            .collect();
        (!defined.is_empty())
            .then(|| defined.iter().filter(|&&r| r).count() as f64 / defined.len() as f64)
    }

    pub fn error_summary(&self, bin_s: f64, quantity: Quantity) -> Option<&ErrorSummary> {
        self.error_rows
            .iter()
            .find(|e| e.bin_s == bin_s && e.quantity == quantity)
    }

    pub fn bins_at(&self, bin_s: f64) -> Option<&BinComparison> {
        self.bins.iter().find(|b| b.original.bin_width_s == bin_s)
    }
}

/// `[first_ts, last_ts + 1)` of a non-empty trace.
pub fn trace_window(trace: &[PacketRecord]) -> Result<(u64, u64)> {
    match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => Ok((a.ts_us, b.ts_us + 1)),
        _ => Err(Error::TooFewSamples { needed: 1, got: 0 }),
    }
}

/// Runs every analysis stage on an original trace and its sampled subset.
pub fn analyze(
    trace: &[PacketRecord],
    sampled: &[PacketRecord],
    q: f64,
    window: (u64, u64),
    config: &ExperimentConfig,
) -> Result<Analysis> {
    let (start, end) = window;
    let unsampled_flows =
        build_flows(trace, &config.cache).map_err(|e| e.in_stage("flows (unsampled)"))?;
    let sampled_flows =
        build_flows(sampled, &config.cache).map_err(|e| e.in_stage("flows (sampled)"))?;

    let mut bins = Vec::new();
    let mut moment_rows = Vec::new();
    let mut error_rows = Vec::new();
    for &w in &config.bin_widths_s {
        let cmp =
            BinComparison::new(trace, sampled, q, w, start, end).map_err(|e| e.in_stage("bins"))?;
        moment_rows.extend(cmp.table_rows().map_err(|e| e.in_stage("moments"))?);
        error_rows.push(cmp.error_summary(Quantity::Data));
        error_rows.push(cmp.error_summary(Quantity::Packets));
        bins.push(cmp);
    }

    let cdf = |r: Result<Ecdf>| r.map_err(|e| e.in_stage("cdf"));
    let packet_size = (cdf(packet_size_cdf(trace))?, cdf(packet_size_cdf(sampled))?);
    let flow_packets = (
        cdf(flow_size_cdf(&unsampled_flows, FlowMetric::Packets))?,
        cdf(flow_size_cdf(&sampled_flows, FlowMetric::Packets))?,
    );
    let flow_bytes = (
        cdf(flow_size_cdf(&unsampled_flows, FlowMetric::Bytes))?,
        cdf(flow_size_cdf(&sampled_flows, FlowMetric::Bytes))?,
    );

    let ks_width = (config.ks_interval_s * 1e6).round() as u64;
    let intervals = (end - start).div_ceil(ks_width) as usize;
    let ks = interval_ks(
        &unsampled_flows,
        &sampled_flows,
        &[FlowMetric::Packets, FlowMetric::Bytes],
        start,
        ks_width,
        intervals,
        config.alpha,
    )
    .map_err(|e| e.in_stage("ks"))?;

    Ok(Analysis {
        window,
        q,
        bins,
        moment_rows,
        error_rows,
        unsampled_flows,
        sampled_flows,
        packet_size,
        flow_packets,
        flow_bytes,
        ks,
    })
}

/// Loads or generates the trace named by the source, with its analysis window.
pub fn load_source(source: &TraceSource) -> Result<(Vec<PacketRecord>, (u64, u64))> {
    match source {
        TraceSource::File(path) => {
            let trace = read_trace(path).map_err(|e| e.in_stage("load trace"))?;
            let window = trace_window(&trace).map_err(|e| e.in_stage("load trace"))?;
            Ok((trace, window))
        }
        TraceSource::Synthetic(cfg) => {
            let trace = generate_synthetic(cfg).map_err(|e| e.in_stage("generate"))?;
            let end = (cfg.duration_s * 1e6).round() as u64;
            Ok((trace, (0, end)))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub analysis: Analysis,
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

fn input_digest(source: &TraceSource, trace: &[PacketRecord]) -> Result<String> {
    let mut h = HashWriter(Sha256::new());
    match source {
        TraceSource::File(path) => {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            io::copy(&mut BufReader::new(f), &mut h).map_err(|e| Error::io(path, e))?;
        }
        TraceSource::Synthetic(_) => {
            write_trace_to(trace, &mut h).expect("hashing never fails");
        }
    }
    Ok(hex(&h.0.finalize()))
}

fn bin_label(w: f64) -> String {
    format!("{w}").replace('.', "_")
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    input_sha256: String,
    window_us: (u64, u64),
    q: f64,
    packets: usize,
    bytes: u64,
    sampled_packets: usize,
    unsampled_flows: usize,
    sampled_flows: usize,
    ks_reject_fraction_packets: Option<f64>,
    ks_reject_fraction_bytes: Option<f64>,
    files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

/// Runs the full experiment and writes the report directory. On failure no
/// report files are left behind.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let (trace, window) = load_source(&config.source)?;
    let sampled = config
        .sampling
        .apply(&trace)
        .map_err(|e| e.in_stage("sample"))?;
    let q = config.sampling.probability();
    let analysis = analyze(&trace, &sampled, q, window, config)?;

    let mut outputs: Vec<(String, String)> = Vec::new();
    for b in &analysis.bins {
        outputs.push((
            format!("binned_{}s.csv", bin_label(b.original.bin_width_s)),
            b.to_csv(),
        ));
    }
    outputs.push((
        "moments.csv".into(),
        moment_table_csv(&analysis.moment_rows),
    ));
    outputs.push(("errors.csv".into(), error_table_csv(&analysis.error_rows)));
    for (name, (u, s)) in [
        ("packet_size", &analysis.packet_size),
        ("flow_packets", &analysis.flow_packets),
        ("flow_bytes", &analysis.flow_bytes),
    ] {
        outputs.push((format!("cdf_{name}_unsampled.csv"), u.to_csv()));
        outputs.push((format!("cdf_{name}_sampled.csv"), s.to_csv()));
    }
    outputs.push(("ks_intervals.csv".into(), interval_ks_csv(&analysis.ks)));

    let manifest = Manifest {
        config,
        input_sha256: input_digest(&config.source, &trace).map_err(|e| e.in_stage("digest"))?,
        window_us: window,
        q,
        packets: trace.len(),
        bytes: trace.iter().map(|p| u64::from(p.byte_len)).sum(),
        sampled_packets: sampled.len(),
        unsampled_flows: analysis.unsampled_flows.len(),
        sampled_flows: analysis.sampled_flows.len(),
        ks_reject_fraction_packets: analysis.ks_reject_fraction(FlowMetric::Packets),
        ks_reject_fraction_bytes: analysis.ks_reject_fraction(FlowMetric::Bytes),
        files: outputs
            .iter()
            .map(|(name, body)| ManifestFile {
                name: name.clone(),
                sha256: sha256_hex(body.as_bytes()),
            })
            .collect(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(e.to_string()).in_stage("manifest"))?;
    outputs.push(("manifest.json".into(), manifest_json + "\n"));

    write_outputs(&config.out_dir, &outputs).map_err(|e| e.in_stage("write report"))?;
    Ok(RunReport {
        out_dir: config.out_dir.clone(),
        files: outputs.into_iter().map(|(n, _)| n).collect(),
        analysis,
    })
}

fn write_outputs(dir: &Path, outputs: &[(String, String)]) -> Result<()> {
    let created_dir = !dir.exists();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in outputs {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(())
}

//! `flowlab`: generate or ingest packet traces, sample them, build flows,
//! and compare the sampled view against the original.
//!
//! Every stage reads and writes the CSV formats defined in the `flowlab`
//! crate, so stages compose through files. Errors exit with status 2;
//! `kstest` additionally exits 1 when the null hypothesis is rejected.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowlab::distributions::{flow_size_cdf, ks_test, packet_size_cdf, FlowMetric};
use flowlab::experiment::{self, ExperimentConfig, TraceSource, DEFAULT_BINS_S};
use flowlab::flow_cache::{read_flows, write_flows};
use flowlab::stats::{moment_table_csv, BinComparison};
use flowlab::{build_flows, read_trace, write_trace, CacheConfig, SamplingSpec, SyntheticConfig};

const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "flowlab",
    version,
    about = "NetFlow sampling and inversion laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic heavy-tailed trace.
    Generate {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, env = "FLOWLAB_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a trace (systematic 1-in-N or Bernoulli).
    Sample {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, env = "FLOWLAB_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a trace into exported flow records.
    Flows {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-bin original, inverted and relative-error series.
    Bins {
        /// Original (unsampled) trace.
        #[arg(long)]
        trace: PathBuf,
        /// Sampled trace produced by `sample`.
        #[arg(long)]
        sampled: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, default_value_t = 30.0)]
        bins: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Moment tables (original, inverted, difference) for each bin width.
    Moments {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        sampled: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BINS_S)]
        bins: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ECDF of packet sizes (`--trace`) or flow sizes (`--flows`).
    Cdf {
        #[arg(long, conflicts_with = "flows", required_unless_present = "flows")]
        trace: Option<PathBuf>,
        #[arg(long)]
        flows: Option<PathBuf>,
        /// Flow metric: `packets` or `bytes`.
        #[arg(long, default_value = "packets")]
        metric: FlowMetric,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-sample KS test on single-column sample files.
    Kstest {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, default_value_t = experiment::DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Full experiment: every table and figure's data into one directory.
    Run {
        /// Trace to analyze; a synthetic trace is generated when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, env = "FLOWLAB_SEED", default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[command(flatten)]
        cache: CacheArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BINS_S)]
        bins: Vec<f64>,
        #[arg(long, default_value_t = experiment::DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SyntheticConfig::default().duration_s)]
    duration: f64,
    /// Flow arrivals per second.
    #[arg(long, default_value_t = SyntheticConfig::default().flow_arrival_rate)]
    flow_rate: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().pareto_alpha)]
    pareto_alpha: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().pareto_xmin)]
    pareto_xmin: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().pkt_size_small)]
    pkt_small: u16,
    #[arg(long, default_value_t = SyntheticConfig::default().pkt_size_large)]
    pkt_large: u16,
    #[arg(long, default_value_t = SyntheticConfig::default().large_pkt_prob)]
    large_prob: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().mean_ipg_ms)]
    mean_ipg_ms: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().tcp_fraction)]
    tcp_fraction: f64,
}

impl SynthArgs {
    fn config(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            duration_s: self.duration,
            flow_arrival_rate: self.flow_rate,
            pareto_alpha: self.pareto_alpha,
            pareto_xmin: self.pareto_xmin,
            pkt_size_small: self.pkt_small,
            pkt_size_large: self.pkt_large,
            large_pkt_prob: self.large_prob,
            mean_ipg_ms: self.mean_ipg_ms,
            tcp_fraction: self.tcp_fraction,
            seed,
        }
    }
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Systematic period N (keep 1 in N). Default 1000.
    #[arg(long, conflicts_with = "sample_q")]
    sample_n: Option<u64>,
    #[arg(long, default_value_t = 0, conflicts_with = "sample_q")]
    sample_phase: u64,
    /// Bernoulli keep probability instead of systematic sampling.
    #[arg(long)]
    sample_q: Option<f64>,
}

impl SamplingArgs {
    fn spec(&self, seed: u64) -> SamplingSpec {
        match self.sample_q {
            Some(q) => SamplingSpec::Bernoulli { q, seed },
            None => SamplingSpec::Systematic {
                n: self.sample_n.unwrap_or(1000),
                phase: self.sample_phase,
            },
        }
    }
}

#[derive(Debug, Args)]
struct CacheArgs {
    #[arg(long, default_value_t = CacheConfig::default().inactive_timeout_s)]
    inactive_timeout: f64,
    #[arg(long, default_value_t = CacheConfig::default().active_timeout_s)]
    active_timeout: f64,
    /// Cache capacity in entries; unlimited when absent.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long, default_value_t = CacheConfig::default().high_watermark)]
    high_watermark: f64,
    #[arg(long, default_value_t = CacheConfig::default().evict_fraction)]
    evict_fraction: f64,
    /// Do not export flows on TCP FIN/RST.
    #[arg(long)]
    no_tcp_end: bool,
}

impl CacheArgs {
    fn config(&self) -> CacheConfig {
        CacheConfig {
            inactive_timeout_s: self.inactive_timeout,
            active_timeout_s: self.active_timeout,
            capacity: self.capacity,
            high_watermark: self.high_watermark,
            evict_fraction: self.evict_fraction,
            tcp_end_expiry: !self.no_tcp_end,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("flowlab: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate { synth, seed, out } => {
            let trace = flowlab::generate_synthetic(&synth.config(seed)).context("generate")?;
            write_trace(&trace, &out).context("write trace")?;
            eprintln!("wrote {} packets to {}", trace.len(), out.display());
        }
        Command::Sample {
            trace,
            sampling,
            seed,
            out,
        } => {
            let packets = read_trace(&trace).context("load trace")?;
            let sampled = sampling.spec(seed).apply(&packets).context("sample")?;
            write_trace(&sampled, &out).context("write trace")?;
            eprintln!("kept {} of {} packets", sampled.len(), packets.len());
        }
        Command::Flows { trace, cache, out } => {
            let packets = read_trace(&trace).context("load trace")?;
            let flows = build_flows(&packets, &cache.config()).context("flows")?;
            write_flows(&flows, &out).context("write flows")?;
            eprintln!("exported {} flows", flows.len());
        }
        Command::Bins {
            trace,
            sampled,
            sampling,
            bins,
            out,
        } => {
            let (orig, samp, window) = load_pair(&trace, &sampled)?;
            let q = probability(&sampling)?;
            let cmp =
                BinComparison::new(&orig, &samp, q, bins, window.0, window.1).context("bins")?;
            write_output(&out, &cmp.to_csv())?;
        }
        Command::Moments {
            trace,
            sampled,
            sampling,
            bins,
            out,
        } => {
            let (orig, samp, window) = load_pair(&trace, &sampled)?;
            let q = probability(&sampling)?;
            let mut rows = Vec::new();
            for w in bins {
                let cmp =
                    BinComparison::new(&orig, &samp, q, w, window.0, window.1).context("bins")?;
                rows.extend(cmp.table_rows().context("moments")?);
            }
            write_output(&out, &moment_table_csv(&rows))?;
        }
        Command::Cdf {
            trace,
            flows,
            metric,
            out,
        } => {
            let cdf = match (trace, flows) {
                (Some(t), _) => packet_size_cdf(&read_trace(&t).context("load trace")?),
                (None, Some(f)) => flow_size_cdf(&read_flows(&f).context("load flows")?, metric),
                (None, None) => bail!("one of --trace or --flows is required"),
            }
            .context("cdf")?;
            match out {
                Some(path) => write_output(&path, &cdf.to_csv())?,
                None => io::stdout().write_all(cdf.to_csv().as_bytes())?,
            }
        }
        Command::Kstest {
            file_a,
            file_b,
            alpha,
        } => {
            let a = read_samples(&file_a)?;
            let b = read_samples(&file_b)?;
            let r = ks_test(&a, &b, alpha).context("kstest")?;
            println!("d_statistic={}", r.statistic_d);
            println!("n1={}", r.n1);
            println!("n2={}", r.n2);
            println!("critical={}", r.critical_value);
            println!("alpha={}", r.alpha);
            println!("reject={}", r.reject);
            return Ok(ExitCode::from(u8::from(r.reject)));
        }
        Command::Run {
            trace,
            synth,
            seed,
            sampling,
            cache,
            bins,
            alpha,
            out,
        } => {
            let source = match trace {
                Some(path) => TraceSource::File(path),
                None => TraceSource::Synthetic(synth.config(seed)),
            };
            let mut config = ExperimentConfig::new(source, sampling.spec(seed), out);
            config.cache = cache.config();
            config.bin_widths_s = bins;
            config.alpha = alpha;
            let report = experiment::run(&config)?;
            eprintln!(
                "wrote {} files to {}",
                report.files.len(),
                report.out_dir.display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn probability(sampling: &SamplingArgs) -> Result<f64> {
    let spec = sampling.spec(0);
    spec.validate().context("sampling")?;
    Ok(spec.probability())
}

type TracePair = (
    Vec<flowlab::PacketRecord>,
    Vec<flowlab::PacketRecord>,
    (u64, u64),
);

/// Loads an original trace and its sampled subset; the window spans the original.
fn load_pair(trace: &Path, sampled: &Path) -> Result<TracePair> {
    let orig = read_trace(trace).context("load trace")?;
    let samp = read_trace(sampled).context("load sampled trace")?;
    let window = experiment::trace_window(&orig).context("load trace")?;
    Ok((orig, samp, window))
}

fn write_output(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("write {}", path.display()))
}

/// One number per line; a non-numeric first line is treated as a header.
fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if i == 0 => continue,
            _ => bail!("{}: line {}: bad sample `{field}`", path.display(), i + 1),
        }
    }
    Ok(out)
}

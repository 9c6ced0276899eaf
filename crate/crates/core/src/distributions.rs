//! Empirical CDFs and the two-sample Kolmogorov-Smirnov test.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow_cache::FlowRecord;
use crate::trace::PacketRecord;

/// Right-continuous empirical CDF: one `(value, F(value))` step per distinct
/// sample value, values strictly increasing, the last probability exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    pub points: Vec<(f64, f64)>,
    pub n: usize,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if let Some(bad) = samples.iter().find(|x| x.is_nan()) {
            return Err(Error::Config(format!("sample {bad} is not a number")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let n = sorted.len();
        let nf = n as f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in sorted.iter().enumerate() {
            let cum = (i + 1) as f64 / nf;
            match points.last_mut() {
                Some(last) if last.0 == x => last.1 = cum,
                _ => points.push((x, cum)),
            }
        }
        Ok(Ecdf { points, n })
    }

    /// F(x): the fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|&(v, _)| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    /// `value,cum_prob`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,cum_prob\n");
        for (v, c) in &self.points {
            let _ = writeln!(s, "{v},{c}");
        }
        s
    }
}

pub fn ecdf(samples: &[f64]) -> Result<Ecdf> {
    Ecdf::new(samples)
}

/// `sup |F_a - F_b|`, evaluated at every step point of either ECDF.
pub fn ks_statistic(a: &Ecdf, b: &Ecdf) -> f64 {
    let (pa, pb) = (&a.points, &b.points);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < pa.len() || j < pb.len() {
        let va = pa.get(i).map_or(f64::INFINITY, |p| p.0);
        let vb = pb.get(j).map_or(f64::INFINITY, |p| p.0);
        let v = va.min(vb);
        if va == v {
            fa = pa[i].1;
            i += 1;
        }
        if vb == v {
            fb = pb[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic_d: f64,
    pub n1: usize,
    pub n2: usize,
    pub critical_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

/// Asymptotic two-sample coefficient `c(alpha) = sqrt(-ln(alpha / 2) / 2)`;
/// 1.358 at `alpha = 0.05`.
pub fn ks_coefficient(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok((-(alpha / 2.0).ln() / 2.0).sqrt())
    } else {
        Err(Error::Alpha(alpha))
    }
}

pub fn ks_critical_value(n1: usize, n2: usize, alpha: f64) -> Result<f64> {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    Ok(ks_coefficient(alpha)? * ((n1f + n2f) / (n1f * n2f)).sqrt())
}

pub fn ks_test_ecdf(a: &Ecdf, b: &Ecdf, alpha: f64) -> Result<KsResult> {
    let critical_value = ks_critical_value(a.n, b.n, alpha)?;
    let statistic_d = ks_statistic(a, b);
    Ok(KsResult {
        statistic_d,
        n1: a.n,
        n2: b.n,
        critical_value,
        reject: statistic_d > critical_value,
        alpha,
    })
}

/// Two-sample KS test at significance `alpha`; rejects when `D > critical`.
pub fn ks_test(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult> {
    ks_coefficient(alpha)?;
    ks_test_ecdf(&ecdf(a)?, &ecdf(b)?, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FlowMetric {
    Packets,
    Bytes,
}

impl FlowMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowMetric::Packets => "packets",
            FlowMetric::Bytes => "bytes",
        }
    }

    pub fn of(self, flow: &FlowRecord) -> f64 {
        match self {
            FlowMetric::Packets => flow.packets as f64,
            FlowMetric::Bytes => flow.bytes as f64,
        }
    }
}

impl std::str::FromStr for FlowMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "packets" => Ok(FlowMetric::Packets),
            "bytes" => Ok(FlowMetric::Bytes),
            other => Err(Error::Config(format!("unknown flow metric `{other}`"))),
        }
    }
}

pub fn flow_size_cdf(flows: &[FlowRecord], metric: FlowMetric) -> Result<Ecdf> {
    let values: Vec<f64> = flows.iter().map(|f| metric.of(f)).collect();
    ecdf(&values)
}

pub fn packet_size_cdf(packets: &[PacketRecord]) -> Result<Ecdf> {
    let values: Vec<f64> = packets.iter().map(|p| f64::from(p.byte_len)).collect();
    ecdf(&values)
}

/// One row of a per-interval KS suite. `result` is `None` when either side
/// has no flows in the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalKs {
    pub interval_index: usize,
    pub metric: FlowMetric,
    pub result: Option<KsResult>,
}

/// Groups flows into `intervals` consecutive windows of `width_us`
/// starting at `start_us`, by the flow's first timestamp. Flows outside the
/// windows are dropped.
pub fn flows_by_interval(
    flows: &[FlowRecord],
    start_us: u64,
    width_us: u64,
    intervals: usize,
) -> Vec<Vec<FlowRecord>> {
    let mut out = vec![Vec::new(); intervals];
    for f in flows {
        if f.first_ts_us < start_us || width_us == 0 {
            continue;
        }
        let k = ((f.first_ts_us - start_us) / width_us) as usize;
        if k < intervals {
            out[k].push(*f);
        }
    }
    out
}

/// Runs one KS test per interval and metric, comparing the `reference` flow
/// population against `candidate`. Rows are ordered by interval, then metric.
pub fn interval_ks(
    reference: &[FlowRecord],
    candidate: &[FlowRecord],
    metrics: &[FlowMetric],
    start_us: u64,
    width_us: u64,
    intervals: usize,
    alpha: f64,
) -> Result<Vec<IntervalKs>> {
    ks_coefficient(alpha)?;
    let refs = flows_by_interval(reference, start_us, width_us, intervals);
    let cands = flows_by_interval(candidate, start_us, width_us, intervals);
    let mut rows = Vec::with_capacity(intervals * metrics.len());
    for (k, (r, c)) in refs.iter().zip(&cands).enumerate() {
        for &metric in metrics {
            let result = if r.is_empty() || c.is_empty() {
                None
            } else {
                let a = flow_size_cdf(r, metric)?;
                let b = flow_size_cdf(c, metric)?;
                Some(ks_test_ecdf(&a, &b, alpha)?)
            };
            rows.push(IntervalKs {
                interval_index: k,
                metric,
                result,
            });
        }
    }
    Ok(rows)
}

pub const KS_HEADER: &str = "interval_index,metric,d_statistic,critical,reject";

pub fn interval_ks_csv(rows: &[IntervalKs]) -> String {
    let mut s = format!("{KS_HEADER}\n");
    for r in rows {
        match r.result {
            Some(k) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    r.interval_index,
                    r.metric.as_str(),
                    k.statistic_d,
                    k.critical_value,
                    k.reject
                );
            }
            None => {
                let _ = writeln!(s, "{},{},NA,NA,NA", r.interval_index, r.metric.as_str());
            }
        }
    }
    s
}

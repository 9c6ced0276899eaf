//! Time-binned byte/packet rates, their moment summaries, and per-bin
//! relative inversion error.
//!
//! Undefined quantities (moments of a zero-variance series, the error of an
//! empty bin) are carried as `None` and written as `NA` in CSV output.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::inversion::{invert_series, InvertedSeries};
use crate::trace::PacketRecord;

/// Per-bin byte (`d`) and packet (`p`) counts over `[start, start + k * w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    pub bin_width_s: f64,
    pub start_ts_us: u64,
    pub d: Vec<u64>,
    pub p: Vec<u64>,
    /// Packets that fell outside the requested window.
    pub excluded: u64,
}

impl BinnedSeries {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn bin_width_us(&self) -> u64 {
        width_us(self.bin_width_s).unwrap_or(1)
    }

    pub fn bin_start_us(&self, k: usize) -> u64 {
        self.start_ts_us + k as u64 * self.bin_width_us()
    }

    pub fn d_f64(&self) -> Vec<f64> {
        self.d.iter().map(|&x| x as f64).collect()
    }

    pub fn p_f64(&self) -> Vec<f64> {
        self.p.iter().map(|&x| x as f64).collect()
    }
}

fn width_us(bin_width_s: f64) -> Result<u64> {
    let us = (bin_width_s * 1e6).round();
    if bin_width_s.is_finite() && us >= 1.0 {
        Ok(us as u64)
    } else {
        Err(Error::Config(format!(
            "bin width {bin_width_s} s must be positive"
        )))
    }
}

/// Bins `packets` into `ceil((end - start) / w)` bins. Each packet counts
/// wholly toward the bin containing its timestamp.
pub fn bin_stream(
    packets: &[PacketRecord],
    bin_width_s: f64,
    start_ts_us: u64,
    end_ts_us: u64,
) -> Result<BinnedSeries> {
    let w = width_us(bin_width_s)?;
    if start_ts_us > end_ts_us {
        return Err(Error::Config(format!(
            "window start {start_ts_us} after end {end_ts_us}"
        )));
    }
    let bins = (end_ts_us - start_ts_us).div_ceil(w) as usize;
    let mut d = vec![0u64; bins];
    let mut p = vec![0u64; bins];
    let mut excluded = 0;
    for pkt in packets {
        if pkt.ts_us < start_ts_us || pkt.ts_us >= end_ts_us {
            excluded += 1;
            continue;
        }
        let k = ((pkt.ts_us - start_ts_us) / w) as usize;
        d[k] += u64::from(pkt.byte_len);
        p[k] += 1;
    }
    Ok(BinnedSeries {
        bin_width_s,
        start_ts_us,
        d,
        p,
        excluded,
    })
}

/// Population moments of a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub std: f64,
    /// `mu3 / mu2^1.5`; `None` when the series has zero variance.
    pub skewness: Option<f64>,
    /// `mu4 / mu2^2 - 3`; `None` when the series has zero variance.
    pub kurtosis_excess: Option<f64>,
}

/// Single-pass accumulator of central moments up to order four, using the
/// pairwise-update recurrences for M2, M3 and M4.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn summary(&self) -> Result<MomentSummary> {
        if self.n < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.n as usize,
            });
        }
        let n = self.n as f64;
        let mu2 = self.m2 / n;
        let (skewness, kurtosis_excess) = if mu2 > 0.0 {
            let mu3 = self.m3 / n;
            let mu4 = self.m4 / n;
            (Some(mu3 / mu2.powf(1.5)), Some(mu4 / (mu2 * mu2) - 3.0))
        } else {
            (None, None)
        };
        Ok(MomentSummary {
            mean: self.mean,
            std: mu2.max(0.0).sqrt(),
            skewness,
            kurtosis_excess,
        })
    }
}

impl Extend<f64> for MomentAccumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

pub fn moments(series: &[f64]) -> Result<MomentSummary> {
    let mut acc = MomentAccumulator::default();
    acc.extend(series.iter().copied());
    acc.summary()
}

/// Element-wise `(d - dn) / d`; `None` where `d` is zero.
pub fn relative_error(d: &[f64], dn: &[f64]) -> Result<Vec<Option<f64>>> {
    if d.len() != dn.len() {
        return Err(Error::LengthMismatch {
            left: d.len(),
            right: dn.len(),
        });
    }
    Ok(d.iter()
        .zip(dn)
        .map(|(&a, &b)| (a != 0.0).then(|| (a - b) / a))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quantity {
    /// Bytes per bin, d(t).
    Data,
    /// Packets per bin, p(t).
    Packets,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Data => "d",
            Quantity::Packets => "p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeriesKind {
    Original,
    Inverted,
    Difference,
}

impl SeriesKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::Original => "original",
            SeriesKind::Inverted => "inverted",
            SeriesKind::Difference => "difference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub quantity: Quantity,
    pub bin_s: f64,
    pub series: SeriesKind,
    pub summary: MomentSummary,
}

/// Moment rows for one bin width: original, inverted and their element-wise
/// difference, first for `d` then for `p`.
pub fn table_rows(
    original: &BinnedSeries,
    inverted_d: &InvertedSeries,
    inverted_p: &InvertedSeries,
) -> Result<Vec<MomentRow>> {
    let mut rows = Vec::with_capacity(6);
    for (quantity, orig, inv) in [
        (Quantity::Data, original.d_f64(), inverted_d),
        (Quantity::Packets, original.p_f64(), inverted_p),
    ] {
        if orig.len() != inv.values.len() {
            return Err(Error::LengthMismatch {
                left: orig.len(),
                right: inv.values.len(),
            });
        }
        let diff: Vec<f64> = orig.iter().zip(&inv.values).map(|(a, b)| a - b).collect();
        for (series, values) in [
            (SeriesKind::Original, &orig),
            (SeriesKind::Inverted, &inv.values),
            (SeriesKind::Difference, &diff),
        ] {
            rows.push(MomentRow {
                quantity,
                bin_s: original.bin_width_s,
                series,
                summary: moments(values)?,
            });
        }
    }
    Ok(rows)
}

/// Original and sampled streams binned on the same grid, with the inverted
/// estimates and per-bin relative errors.
#[derive(Debug, Clone)]
pub struct BinComparison {
    pub original: BinnedSeries,
    pub sampled: BinnedSeries,
    pub dn: InvertedSeries,
    pub pn: InvertedSeries,
    pub e_d: Vec<Option<f64>>,
    pub e_p: Vec<Option<f64>>,
}

impl BinComparison {
    pub fn new(
        original: &[PacketRecord],
        sampled: &[PacketRecord],
        q: f64,
        bin_width_s: f64,
        start_ts_us: u64,
        end_ts_us: u64,
    ) -> Result<Self> {
        let original = bin_stream(original, bin_width_s, start_ts_us, end_ts_us)?;
        let sampled = bin_stream(sampled, bin_width_s, start_ts_us, end_ts_us)?;
        let dn = invert_series(&sampled.d_f64(), q)?;
        let pn = invert_series(&sampled.p_f64(), q)?;
        let e_d = relative_error(&original.d_f64(), &dn.values)?;
        let e_p = relative_error(&original.p_f64(), &pn.values)?;
        Ok(BinComparison {
            original,
            sampled,
            dn,
            pn,
            e_d,
            e_p,
        })
    }

    pub fn table_rows(&self) -> Result<Vec<MomentRow>> {
        table_rows(&self.original, &self.dn, &self.pn)
    }

    pub fn error_summary(&self, quantity: Quantity) -> ErrorSummary {
        let e = match quantity {
            Quantity::Data => &self.e_d,
            Quantity::Packets => &self.e_p,
        };
        ErrorSummary::from_errors(quantity, self.original.bin_width_s, e)
    }

    /// `bin_start_us,d,p,dn,pn,e_d,e_p`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_us,d,p,dn,pn,e_d,e_p\n");
        for k in 0..self.original.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.original.bin_start_us(k),
                self.original.d[k],
                self.original.p[k],
                self.dn.values[k],
                self.pn.values[k],
                fmt_opt(self.e_d[k]),
                fmt_opt(self.e_p[k]),
            );
        }
        s
    }
}

/// Aggregate of per-bin relative errors at one bin width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub quantity: Quantity,
    pub bin_s: f64,
    pub mean_abs: Option<f64>,
    pub rms: Option<f64>,
    pub max_abs: Option<f64>,
    pub defined_bins: usize,
    pub undefined_bins: usize,
}

impl ErrorSummary {
    pub fn from_errors(quantity: Quantity, bin_s: f64, errors: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = errors.iter().flatten().copied().collect();
        let n = defined.len();
        let (mean_abs, rms, max_abs) = if n == 0 {
            (None, None, None)
        } else {
            let nf = n as f64;
            (
                Some(defined.iter().map(|e| e.abs()).sum::<f64>() / nf),
                Some((defined.iter().map(|e| e * e).sum::<f64>() / nf).sqrt()),
                defined.iter().map(|e| e.abs()).reduce(f64::max),
            )
        };
        ErrorSummary {
            quantity,
            bin_s,
            mean_abs,
            rms,
            max_abs,
            defined_bins: n,
            undefined_bins: errors.len() - n,
        }
    }
}

pub const MOMENT_HEADER: &str = "quantity,bin_s,series,mean,std,skewness,kurtosis";
pub const ERROR_HEADER: &str =
    "quantity,bin_s,mean_abs_e,rms_e,max_abs_e,defined_bins,undefined_bins";

pub fn moment_table_csv(rows: &[MomentRow]) -> String {
    let mut s = format!("{MOMENT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.quantity.as_str(),
            r.bin_s,
            r.series.as_str(),
            r.summary.mean,
            r.summary.std,
            fmt_opt(r.summary.skewness),
            fmt_opt(r.summary.kurtosis_excess),
        );
    }
    s
}

pub fn error_table_csv(rows: &[ErrorSummary]) -> String {
    let mut s = format!("{ERROR_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.quantity.as_str(),
            r.bin_s,
            fmt_opt(r.mean_abs),
            fmt_opt(r.rms),
            fmt_opt(r.max_abs),
            r.defined_bins,
            r.undefined_bins,
        );
    }
    s
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NA".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use proptest::prelude::*;

    use super::*;

    const S: u64 = 1_000_000;

    fn pkt(ts_us: u64, len: u16) -> PacketRecord {
        PacketRecord {
            ts_us,
            src_ip: Ipv4Addr::new(1, 1, 1, 1),
            dst_ip: Ipv4Addr::new(2, 2, 2, 2),
            src_port: 1,
            dst_port: 2,
            proto: 17,
            byte_len: len,
            tcp_flags: 0,
        }
    }

    /// Direct two-pass population moments.
    fn two_pass(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let mu = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / n;
        let (m2, m3, m4) = (mu(2), mu(3), mu(4));
        (mean, m2.sqrt(), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn empty_trace_gives_zero_bins() {
        let b = bin_stream(&[], 30.0, 0, 90 * S).unwrap();
        assert_eq!(b.d, vec![0, 0, 0]);
        assert_eq!(b.p, vec![0, 0, 0]);
    }

    #[test]
    fn packets_land_in_their_bins() {
        let pk = [pkt(0, 100), pkt(10 * S, 100), pkt(40 * S, 100)];
        let b = bin_stream(&pk, 30.0, 0, 60 * S).unwrap();
        assert_eq!(b.d, vec![200, 100]);
        assert_eq!(b.p, vec![2, 1]);
        assert_eq!(b.excluded, 0);
    }

    #[test]
    fn out_of_window_packets_are_counted() {
        let pk = [pkt(5, 10), pkt(60 * S, 10), pkt(61 * S, 10)];
        let b = bin_stream(&pk, 30.0, 10, 60 * S).unwrap();
        assert_eq!(b.excluded, 3);
        assert_eq!(b.p.iter().sum::<u64>(), 0);
    }

    #[test]
    fn hour_at_thirty_seconds_is_120_bins() {
        assert_eq!(bin_stream(&[], 30.0, 0, 3600 * S).unwrap().len(), 120);
        assert_eq!(bin_stream(&[], 120.0, 0, 3600 * S).unwrap().len(), 30);
        assert_eq!(bin_stream(&[], 300.0, 0, 3600 * S).unwrap().len(), 12);
    }

    #[test]
    fn bad_width_or_window() {
        assert!(bin_stream(&[], 0.0, 0, 10).is_err());
        assert!(bin_stream(&[], -1.0, 0, 10).is_err());
        assert!(bin_stream(&[], 1.0, 10, 0).is_err());
    }

    #[test]
    fn moments_of_one_two_three() {
        let m = moments(&[1.0, 2.0, 3.0]).unwrap();
        assert!((m.mean - 2.0).abs() < 1e-15);
        assert!(m.skewness.unwrap().abs() < 1e-15);
        // mu2 = 2/3, mu4 = 2/3 -> (2/3) / (4/9) - 3
        assert!((m.kurtosis_excess.unwrap() + 1.5).abs() < 1e-12);
        assert!((m.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_undefined_shape() {
        let m = moments(&[4.0; 10]).unwrap();
        assert_eq!(m.mean, 4.0);
        assert_eq!(m.std, 0.0);
        assert_eq!(m.skewness, None);
        assert_eq!(m.kurtosis_excess, None);
    }

    #[test]
    fn too_short_series() {
        assert!(moments(&[]).is_err());
        assert!(moments(&[1.0]).is_err());
    }

    #[test]
    fn gaussian_kurtosis_near_zero() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m = moments(&xs).unwrap();
        // sd of the kurtosis estimate is about sqrt(24 / n) ~ 0.011.
        assert!(m.kurtosis_excess.unwrap().abs() < 0.06);
        assert!(m.skewness.unwrap().abs() < 0.03);
    }

    #[test]
    fn relative_error_cases() {
        let d = [100.0, 50.0];
        assert_eq!(relative_error(&d, &d).unwrap(), vec![Some(0.0), Some(0.0)]);
        let e = relative_error(&[100.0], &[110.0]).unwrap()[0].unwrap();
        assert!((e + 0.1).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[5.0]).unwrap(), vec![None]);
        assert!(relative_error(&[1.0], &[]).is_err());
    }

    #[test]
    fn identical_inversion_gives_degenerate_difference() {
        let pk: Vec<_> = (0..90)
            .map(|i| pkt(i * S, 40 + (i % 7) as u16 * 100))
            .collect();
        let cmp = BinComparison::new(&pk, &pk, 1.0, 10.0, 0, 90 * S).unwrap();
        let rows = cmp.table_rows().unwrap();
        assert_eq!(rows.len(), 6);
        for r in rows.iter().filter(|r| r.series == SeriesKind::Difference) {
            assert_eq!(r.summary.mean, 0.0);
            assert_eq!(r.summary.std, 0.0);
            assert_eq!(r.summary.skewness, None);
            assert_eq!(r.summary.kurtosis_excess, None);
        }
        assert!(cmp.e_d.iter().all(|e| *e == Some(0.0)));
        assert!(moment_table_csv(&rows).contains(",difference,0,0,NA,NA\n"));
    }

    proptest! {
        #[test]
        fn matches_two_pass_reference(xs in prop::collection::vec(-1e6f64..1e6, 2..2000)) {
            let m = moments(&xs).unwrap();
            let (mean, std, skew, kurt) = two_pass(&xs);
            prop_assert!(close(m.mean, mean, 1e-9));
            prop_assert!(close(m.std, std, 1e-9));
            if std > 0.0 {
                prop_assert!(close(m.skewness.unwrap(), skew, 1e-9));
                prop_assert!(close(m.kurtosis_excess.unwrap(), kurt, 1e-9));
            }
        }

        #[test]
        fn shape_is_affine_invariant(
            xs in prop::collection::vec(0f64..1000.0, 3..200),
            a in 0.1f64..50.0,
            b in -1e3f64..1e3,
        ) {
            let m = moments(&xs).unwrap();
            prop_assume!(m.std > 1.0);
            let pos = moments(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>()).unwrap();
            let neg = moments(&xs.iter().map(|x| -a * x + b).collect::<Vec<_>>()).unwrap();
            let (s, k) = (m.skewness.unwrap(), m.kurtosis_excess.unwrap());
            prop_assert!(close(pos.skewness.unwrap(), s, 1e-8));
            prop_assert!(close(pos.kurtosis_excess.unwrap(), k, 1e-8));
            prop_assert!(close(neg.skewness.unwrap(), -s, 1e-8));
            prop_assert!(close(neg.kurtosis_excess.unwrap(), k, 1e-8));
        }

        #[test]
        fn error_identity(d in prop::collection::vec(1f64..1e9, 1..100), eps in -0.9f64..0.9) {
            let dn: Vec<f64> = d.iter().map(|x| x * (1.0 - eps)).collect();
            for e in relative_error(&d, &dn).unwrap() {
                prop_assert!((e.unwrap() - eps).abs() < 1e-12);
            }
        }

        #[test]
        fn binning_conserves_totals(
            ts in prop::collection::vec(0u64..600 * S, 0..300),
            width in 1u64..200,
        ) {
            let mut ts = ts;
            ts.sort_unstable();
            let pk: Vec<_> = ts.iter().enumerate().map(|(i, &t)| pkt(t, 1 + i as u16)).collect();
            let end = ts.last().map_or(0, |t| t + 1);
            let b = bin_stream(&pk, width as f64, 0, end).unwrap();
            prop_assert_eq!(b.p.iter().sum::<u64>(), pk.len() as u64);
            prop_assert_eq!(
                b.d.iter().sum::<u64>(),
                pk.iter().map(|p| u64::from(p.byte_len)).sum::<u64>()
            );
            prop_assert_eq!(b.excluded, 0);
        }
    }
}

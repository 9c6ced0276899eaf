//! Simple inversion: scale sampled per-bin counts back up by `1 / q`.

use crate::error::Result;
use crate::sampler::check_probability;

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedSeries {
    pub values: Vec<f64>,
    /// Sampling probability the source series was divided by.
    pub q: f64,
}

pub fn invert_count(x: f64, q: f64) -> Result<f64> {
    check_probability(q)?;
    Ok(x / q)
}

pub fn invert_series(series: &[f64], q: f64) -> Result<InvertedSeries> {
    check_probability(q)?;
    Ok(InvertedSeries {
        values: series.iter().map(|&x| x / q).collect(),
        q,
    })
}

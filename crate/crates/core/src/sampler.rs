//! Packet sampling: systematic 1-in-N and independent Bernoulli(q).
//!
//! Sampling counts packets globally over the whole trace, as on a single
//! monitored link.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::PacketRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingSpec {
    /// Keep zero-based indices `i` with `i % n == phase`.
    Systematic {
        n: u64,
        phase: u64,
    },
    Bernoulli {
        q: f64,
        seed: u64,
    },
}

impl SamplingSpec {
    pub fn systematic(n: u64) -> Self {
        SamplingSpec::Systematic { n, phase: 0 }
    }

    /// The retained fraction used for inversion.
    pub fn probability(&self) -> f64 {
        match *self {
            SamplingSpec::Systematic { n, .. } => 1.0 / n as f64,
            SamplingSpec::Bernoulli { q, .. } => q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingSpec::Systematic { n, phase } => check_systematic(n, phase),
            SamplingSpec::Bernoulli { q, .. } => check_probability(q),
        }
    }

    pub fn apply(&self, trace: &[PacketRecord]) -> Result<Vec<PacketRecord>> {
        match *self {
            SamplingSpec::Systematic { n, phase } => systematic_sample(trace, n, phase),
            SamplingSpec::Bernoulli { q, seed } => bernoulli_sample(trace, q, seed),
        }
    }
}

fn check_systematic(n: u64, phase: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("sampling period must be at least 1".into()));
    }
    if phase >= n {
        return Err(Error::Config(format!(
            "sampling phase {phase} must be below the period {n}"
        )));
    }
    Ok(())
}

pub(crate) fn check_probability(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::Probability(q))
    }
}

/// Number of packets systematic sampling keeps from a trace of `len`.
pub fn systematic_count(len: u64, n: u64, phase: u64) -> u64 {
    if len > phase {
        (len - 1 - phase) / n + 1
    } else {
        0
    }
}

pub fn systematic_sample(trace: &[PacketRecord], n: u64, phase: u64) -> Result<Vec<PacketRecord>> {
    check_systematic(n, phase)?;
    let (n, phase) = (n as usize, phase as usize);
    Ok(trace.iter().skip(phase).step_by(n).copied().collect())
}

/// Keeps each packet independently with probability `q`, drawing from
/// `ChaCha8Rng::seed_from_u64(seed)`.
pub fn bernoulli_sample(trace: &[PacketRecord], q: f64, seed: u64) -> Result<Vec<PacketRecord>> {
    check_probability(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(trace
        .iter()
        .filter(|_| rng.random_bool(q))
        .copied()
        .collect())
}

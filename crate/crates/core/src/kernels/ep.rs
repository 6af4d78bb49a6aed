//! EP: Gaussian pairs by the polar method, tallied into square annuli.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comm::Communicator;
use crate::constants::{ep_class_log2_pairs, ep_work_mop, EP_ANNULI, EP_CHUNK_PAIRS, EP_MAX_DESK_LOG2_PAIRS, EP_SEED};

use super::{KernelError, RandomStream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpParams {
    pub log2_pairs: u32,
    pub seed: u64,
    pub chunk_size: usize,
    /// Lift the 2^32-pair guard.
    #[serde(default)]
    pub allow_oversize: bool,
}

impl EpParams {
    pub fn new(log2_pairs: u32) -> Self {
        EpParams { log2_pairs, seed: EP_SEED, chunk_size: EP_CHUNK_PAIRS, allow_oversize: false }
    }

    pub fn for_class(class: &str) -> Option<Self> {
        ep_class_log2_pairs(class).map(Self::new)
    }

    pub fn total_pairs(&self) -> u64 {
        1u64 << self.log2_pairs
    }

    pub fn work_mop(&self) -> f64 {
        ep_work_mop(self.log2_pairs)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.log2_pairs == 0 || self.log2_pairs > 62 {
            return Err(KernelError::InvalidParams(format!("log2_pairs {} out of range", self.log2_pairs)));
        }
        if self.log2_pairs > EP_MAX_DESK_LOG2_PAIRS && !self.allow_oversize {
            return Err(KernelError::InvalidParams(format!(
                "log2_pairs {} exceeds the desk-scale limit {EP_MAX_DESK_LOG2_PAIRS}",
                self.log2_pairs
            )));
        }
        if self.chunk_size == 0 {
            return Err(KernelError::InvalidParams("chunk_size must be positive".into()));
        }
        RandomStream::new(self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpResult {
    pub annulus_counts: [u64; EP_ANNULI],
    pub sum_x: f64,
    pub sum_y: f64,
    pub accepted_pairs: u64,
}

impl EpResult {
    fn to_wire(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.annulus_counts.iter().map(|&c| c as f64).collect();
        v.extend([self.sum_x, self.sum_y, self.accepted_pairs as f64]);
        v
    }

    fn from_wire(v: &[f64]) -> Self {
        let mut annulus_counts = [0u64; EP_ANNULI];
        for (c, x) in annulus_counts.iter_mut().zip(v) {
            *c = *x as u64;
        }
        EpResult {
            annulus_counts,
            sum_x: v[EP_ANNULI],
            sum_y: v[EP_ANNULI + 1],
            accepted_pairs: v[EP_ANNULI + 2] as u64,
        }
    }

    fn absorb(&mut self, other: &EpResult) {
        for (a, b) in self.annulus_counts.iter_mut().zip(&other.annulus_counts) {
            *a += b;
        }
        self.sum_x += other.sum_x;
        self.sum_y += other.sum_y;
        self.accepted_pairs += other.accepted_pairs;
    }
}

/// Apply the polar acceptance test to one pair of uniforms and tally it.
///
/// t = 0 is rejected so the logarithm is never evaluated at zero. Deviates
/// whose annulus index exceeds the last bin land in the last bin.
#[inline]
pub fn tally_pair(u1: f64, u2: f64, acc: &mut EpResult) {
    let x = 2.0 * u1 - 1.0;
    let y = 2.0 * u2 - 1.0;
    let t = x * x + y * y;
    if t <= 1.0 && t > 0.0 {
        let f = (-2.0 * t.ln() / t).sqrt();
        let gx = x * f;
        let gy = y * f;
        let l = (gx.abs().max(gy.abs()) as usize).min(EP_ANNULI - 1);
        acc.annulus_counts[l] += 1;
        acc.sum_x += gx;
        acc.sum_y += gy;
        acc.accepted_pairs += 1;
    }
}

/// Consume `2 * n_pairs` uniforms from `stream` and tally them.
pub fn gaussian_pairs_chunk(mut stream: RandomStream, n_pairs: u64) -> (EpResult, RandomStream) {
    let mut acc = EpResult::default();
    for _ in 0..n_pairs {
        let u1 = stream.next_uniform();
        let u2 = stream.next_uniform();
        tally_pair(u1, u2, &mut acc);
    }
    (acc, stream)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpRun {
    pub result: EpResult,
    pub elapsed_s: f64,
    pub mops: f64,
}

/// Run EP on every rank of `comm`. Each rank takes a contiguous segment of
/// the pair sequence; the last rank absorbs the remainder.
pub fn ep_run(params: &EpParams, comm: &Communicator) -> Result<EpRun, KernelError> {
    params.validate()?;
    let p = comm.size() as u64;
    let rank = comm.rank() as u64;
    let total = params.total_pairs();
    let share = total / p;
    let first = rank * share;
    let count = if rank + 1 == p { total - first } else { share };

    comm.barrier()?;
    let start = Instant::now();

    let mut stream = RandomStream::new(params.seed)?;
    stream.advance(2 * first);
    let mut local = EpResult::default();
    let mut left = count;
    while left > 0 {
        let n = left.min(params.chunk_size as u64);
        let (part, next) = gaussian_pairs_chunk(stream, n);
        local.absorb(&part);
        stream = next;
        left -= n;
    }

    let global = EpResult::from_wire(&comm.all_reduce_sum(&local.to_wire())?);
    // The reduction is a synchronization point, so this covers the slowest rank.
    let elapsed_s = start.elapsed().as_secs_f64();
    Ok(EpRun { result: global, elapsed_s, mops: params.work_mop() / elapsed_s })
}

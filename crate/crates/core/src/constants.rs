//! Benchmark constants: generator parameters, problem classes, operation
//! counts and reference verification values.
//!
//! Everything here follows the NAS Parallel Benchmarks 3.x definitions of
//! the EP and FT kernels. Keeping them in one table means a different NPB
//! revision can be adopted by editing this file alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Revision of the NPB definitions the constants below were taken from.
pub const NPB_VERSION: &str = "3.x";

/// Multiplier of the 46-bit linear congruential generator, 5^13.
pub const LCG_MULTIPLIER: u64 = 1_220_703_125;

/// Number of state bits of the generator.
pub const LCG_BITS: u32 = 46;

/// Default EP seed.
pub const EP_SEED: u64 = 271_828_183;

/// FT initial-condition seed.
pub const FT_SEED: u64 = 314_159_265;

/// Pairs generated per EP batch (2^16).
pub const EP_CHUNK_PAIRS: usize = 1 << 16;

/// Number of square annuli tallied by EP.
pub const EP_ANNULI: usize = 10;

/// Largest EP problem accepted without an explicit override.
pub const EP_MAX_DESK_LOG2_PAIRS: u32 = 32;

/// Relative tolerance used by NPB when checking EP sums.
pub const EP_VERIFY_EPSILON: f64 = 1.0e-8;

/// Relative tolerance used by NPB when checking FT checksums.
pub const FT_VERIFY_EPSILON: f64 = 1.0e-12;

/// Diffusion constant in the FT evolution factor exp(-4 pi^2 alpha t |k|^2).
pub const FT_ALPHA: f64 = 1.0e-6;

/// Number of grid samples folded into one FT checksum.
pub const FT_CHECKSUM_SAMPLES: usize = 1024;

/// The two kernels this crate implements and models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "EP", alias = "ep")]
    Ep,
    #[serde(rename = "FT", alias = "ft")]
    Ft,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Ep => "EP",
            Benchmark::Ft => "FT",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ep" => Ok(Benchmark::Ep),
            "ft" => Ok(Benchmark::Ft),
            other => Err(format!("unknown benchmark {other:?} (expected ep or ft)")),
        }
    }
}

/// EP class sizes as log2 of the number of Gaussian pairs.
pub fn ep_class_log2_pairs(class: &str) -> Option<u32> {
    match class {
        "S" => Some(24),
        "W" => Some(25),
        "A" => Some(28),
        "B" => Some(30),
        "C" => Some(32),
        _ => None,
    }
}

/// FT class sizes as (nx, ny, nz, iterations).
pub fn ft_class_grid(class: &str) -> Option<(usize, usize, usize, usize)> {
    match class {
        "S" => Some((64, 64, 64, 6)),
        "W" => Some((128, 128, 32, 6)),
        "A" => Some((256, 256, 128, 6)),
        "B" => Some((512, 256, 256, 20)),
        _ => None,
    }
}

/// NPB EP operation count in Mop: two uniforms per pair.
pub fn ep_work_mop(log2_pairs: u32) -> f64 {
    2f64.powi(log2_pairs as i32 + 1) * 1.0e-6
}

/// NPB FT operation count in Mop for a whole run.
pub fn ft_work_mop(nx: usize, ny: usize, nz: usize, iterations: usize) -> f64 {
    let n = (nx * ny * nz) as f64;
    let ln = n.ln();
    1.0e-6 * n * (14.8157 + 7.19641 * ln + (5.23518 + 7.21113 * ln) * iterations as f64)
}

/// Total work of a class in Mop, if the class is known.
pub fn class_work_mop(benchmark: Benchmark, class: &str) -> Option<f64> {
    match benchmark {
        Benchmark::Ep => ep_class_log2_pairs(class).map(ep_work_mop),
        Benchmark::Ft => ft_class_grid(class).map(|(x, y, z, it)| ft_work_mop(x, y, z, it)),
    }
}

/// Reference (sum_x, sum_y) for the default EP seed, digits as published.
#[allow(clippy::excessive_precision)]
pub fn ep_reference_sums(log2_pairs: u32) -> Option<(f64, f64)> {
    match log2_pairs {
        24 => Some((-3.247_834_652_034_740e3, -6.958_407_078_382_297e3)),
        25 => Some((-2.863_319_731_645_753e3, -6.320_053_679_109_499e3)),
        28 => Some((-4.295_875_165_629_892e3, -1.580_732_573_678_431e4)),
        30 => Some((4.033_815_542_441_498e4, -2.660_669_192_809_235e4)),
        _ => None,
    }
}

/// Reference FT checksums (re, im) per iteration for a known grid.
pub fn ft_reference_checksums(nx: usize, ny: usize, nz: usize, iterations: usize) -> Option<&'static [(f64, f64)]> {
    const CLASS_S: [(f64, f64); 6] = [
        (5.546_087_004_964e2, 4.845_363_331_978e2),
        (5.546_385_409_189e2, 4.865_304_269_511e2),
        (5.546_148_406_171e2, 4.883_910_722_336e2),
        (5.545_423_607_415e2, 4.901_273_169_046e2),
        (5.544_255_039_624e2, 4.917_475_857_993e2),
        (5.542_683_411_902e2, 4.932_597_244_941e2),
    ];
    match (nx, ny, nz, iterations) {
        (64, 64, 64, 6) => Some(&CLASS_S),
        _ => None,
    }
}

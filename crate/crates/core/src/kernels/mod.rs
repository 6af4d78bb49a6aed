//! EP and FT benchmark kernels, written against [`crate::comm::Communicator`].

mod ep;
mod fft;
mod ft;
mod lcg;

pub use ep::{ep_run, gaussian_pairs_chunk, tally_pair, EpParams, EpResult, EpRun};
pub use fft::{fft_1d, Direction, FftPlan};
pub use ft::{fft_3d_distributed, fft_3d_serial, ft_run, FtParams, FtResult, FtRun, GridDims, Slab, SlabAxis};
pub use lcg::{lcg_next, lcg_skip, RandomStream};

use thiserror::Error;

use crate::comm::CommError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("seed must be odd and in (0, 2^46), got {0}")]
    InvalidSeed(u64),
    #[error("FFT length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("rank count must be a power of two, got {0}")]
    RanksNotPowerOfTwo(usize),
    #[error("grid {nx}x{ny}x{nz} cannot be split into {ranks} slabs")]
    Indivisible { nx: usize, ny: usize, nz: usize, ranks: usize },
    #[error("slab layout mismatch: expected {expected:?} slab, got {found:?}")]
    WrongLayout { expected: SlabAxis, found: SlabAxis },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Comm(#[from] CommError),
}

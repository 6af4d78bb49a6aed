//! FT: 3-D FFT spectral method on a slab-decomposed grid.
//!
//! Grid element (x, y, z) lives at `x + nx * (y + ny * z)` globally. A
//! forward transform takes z-slabs (each rank owns `nz / p` planes, all x
//! and y) and returns y-slabs (each rank owns `ny / p` rows for every x and
//! z, stored as `x + nx * (yl + (ny / p) * z)`). The inverse transform goes
//! the other way. Each 3-D transform performs exactly one all-to-all.

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::comm::Communicator;
use crate::constants::{ft_class_grid, ft_work_mop, FT_ALPHA, FT_CHECKSUM_SAMPLES, FT_SEED};

use super::{Direction, FftPlan, KernelError, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        GridDims { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        GridDims { nx: n, ny: n, nz: n }
    }

    pub fn total(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    fn check(&self, ranks: usize) -> Result<(), KernelError> {
        for n in [self.nx, self.ny, self.nz] {
            if n == 0 || !n.is_power_of_two() {
                return Err(KernelError::NotPowerOfTwo(n));
            }
        }
        if ranks == 0 || !self.nz.is_multiple_of(ranks) || !self.ny.is_multiple_of(ranks) {
            return Err(KernelError::Indivisible { nx: self.nx, ny: self.ny, nz: self.nz, ranks });
        }
        Ok(())
    }
}

/// Axis along which the grid is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlabAxis {
    Z,
    Y,
}

/// One rank's share of a distributed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab {
    pub dims: GridDims,
    pub axis: SlabAxis,
    /// First global plane (z) or row (y) owned by this rank.
    pub offset: usize,
    /// Number of planes or rows owned.
    pub thickness: usize,
    pub data: Vec<Complex64>,
}

impl Slab {
    /// The z-slab of `rank` cut from a full grid.
    pub fn from_global_z(grid: &[Complex64], dims: GridDims, rank: usize, ranks: usize) -> Self {
        let t = dims.nz / ranks;
        let plane = dims.nx * dims.ny;
        Slab {
            dims,
            axis: SlabAxis::Z,
            offset: rank * t,
            thickness: t,
            data: grid[rank * t * plane..(rank + 1) * t * plane].to_vec(),
        }
    }

    /// Write this slab's elements into a full grid in global order.
    pub fn scatter_into(&self, grid: &mut [Complex64]) {
        let GridDims { nx, ny, nz } = self.dims;
        match self.axis {
            SlabAxis::Z => {
                let plane = nx * ny;
                grid[self.offset * plane..(self.offset + self.thickness) * plane].copy_from_slice(&self.data);
            }
            SlabAxis::Y => {
                for z in 0..nz {
                    for yl in 0..self.thickness {
                        let src = nx * (yl + self.thickness * z);
                        let dst = nx * (self.offset + yl + ny * z);
                        grid[dst..dst + nx].copy_from_slice(&self.data[src..src + nx]);
                    }
                }
            }
        }
    }
}

struct Plans {
    x: FftPlan,
    y: FftPlan,
    z: FftPlan,
}

impl Plans {
    fn new(dims: GridDims) -> Result<Self, KernelError> {
        Ok(Plans { x: FftPlan::new(dims.nx)?, y: FftPlan::new(dims.ny)?, z: FftPlan::new(dims.nz)? })
    }
}

/// Transform every line of `count` lines, line `i` starting at `first(i)`
/// with element stride `stride`.
fn strided_lines(
    data: &mut [Complex64],
    plan: &FftPlan,
    starts: impl Iterator<Item = usize>,
    stride: usize,
    direction: Direction,
    scratch: &mut Vec<Complex64>,
) {
    let n = plan.len();
    scratch.resize(n, Complex64::default());
    for s in starts {
        if stride == 1 {
            plan.process(&mut data[s..s + n], direction);
            continue;
        }
        for (i, v) in scratch.iter_mut().enumerate() {
            *v = data[s + i * stride];
        }
        plan.process(scratch, direction);
        for (i, v) in scratch.iter().enumerate() {
            data[s + i * stride] = *v;
        }
    }
}

/// x- and y-line transforms over `planes` contiguous nx*ny planes.
fn transform_xy(data: &mut [Complex64], dims: GridDims, planes: usize, plans: &Plans, direction: Direction) {
    let (nx, ny) = (dims.nx, dims.ny);
    let mut scratch = Vec::new();
    let plane = nx * ny;
    let x_starts = (0..planes * ny).map(|line| line * nx);
    let y_starts = (0..planes).flat_map(|p| (0..nx).map(move |x| p * plane + x));
    match direction {
        Direction::Forward => {
            strided_lines(data, &plans.x, x_starts, 1, direction, &mut scratch);
            strided_lines(data, &plans.y, y_starts, nx, direction, &mut scratch);
        }
        Direction::Inverse => {
            strided_lines(data, &plans.y, y_starts, nx, direction, &mut scratch);
            strided_lines(data, &plans.x, x_starts, 1, direction, &mut scratch);
        }
    }
}

/// z-line transforms over a y-slab of `rows` rows.
fn transform_z(data: &mut [Complex64], dims: GridDims, rows: usize, plans: &Plans, direction: Direction) {
    let mut scratch = Vec::new();
    let stride = dims.nx * rows;
    strided_lines(data, &plans.z, 0..stride, stride, direction, &mut scratch);
}

fn z_to_y(slab: Slab, comm: &Communicator) -> Result<Slab, KernelError> {
    let p = comm.size();
    let GridDims { nx, ny, .. } = slab.dims;
    let ty = ny / p;
    let tz = slab.thickness;
    let blocks: Vec<Vec<Complex64>> = (0..p)
        .map(|dest| {
            let mut block = Vec::with_capacity(nx * ty * tz);
            for zl in 0..tz {
                for yl in 0..ty {
                    let s = nx * (dest * ty + yl + ny * zl);
                    block.extend_from_slice(&slab.data[s..s + nx]);
                }
            }
            block
        })
        .collect();
    let received = comm.all_to_all(blocks)?;
    // Blocks arrive ordered by source rank, i.e. by ascending z range,
    // which is exactly the y-slab storage order.
    let data = received.concat();
    Ok(Slab { dims: slab.dims, axis: SlabAxis::Y, offset: comm.rank() * ty, thickness: ty, data })
}

fn y_to_z(slab: Slab, comm: &Communicator) -> Result<Slab, KernelError> {
    let p = comm.size();
    let GridDims { nx, ny, nz } = slab.dims;
    let tz = nz / p;
    let ty = slab.thickness;
    let chunk = nx * ty * tz;
    let blocks: Vec<Vec<Complex64>> = slab.data.chunks(chunk).map(<[Complex64]>::to_vec).collect();
    let received = comm.all_to_all(blocks)?;
    let mut data = vec![Complex64::default(); nx * ny * tz];
    for (src, block) in received.iter().enumerate() {
        for zl in 0..tz {
            for yl in 0..ty {
                let from = nx * (yl + ty * zl);
                let to = nx * (src * ty + yl + ny * zl);
                data[to..to + nx].copy_from_slice(&block[from..from + nx]);
            }
        }
    }
    Ok(Slab { dims: slab.dims, axis: SlabAxis::Z, offset: comm.rank() * tz, thickness: tz, data })
}

/// Distributed 3-D FFT. Forward maps a z-slab to a y-slab; inverse maps a
/// y-slab back to a z-slab.
pub fn fft_3d_distributed(slab: Slab, comm: &Communicator, direction: Direction) -> Result<Slab, KernelError> {
    let dims = slab.dims;
    dims.check(comm.size())?;
    let plans = Plans::new(dims)?;
    transform_distributed(slab, comm, direction, &plans)
}

fn transform_distributed(
    mut slab: Slab,
    comm: &Communicator,
    direction: Direction,
    plans: &Plans,
) -> Result<Slab, KernelError> {
    let dims = slab.dims;
    let expected = match direction {
        Direction::Forward => SlabAxis::Z,
        Direction::Inverse => SlabAxis::Y,
    };
    if slab.axis != expected {
        return Err(KernelError::WrongLayout { expected, found: slab.axis });
    }
    match direction {
        Direction::Forward => {
            transform_xy(&mut slab.data, dims, slab.thickness, plans, direction);
            let mut out = z_to_y(slab, comm)?;
            transform_z(&mut out.data, dims, out.thickness, plans, direction);
            Ok(out)
        }
        Direction::Inverse => {
            transform_z(&mut slab.data, dims, slab.thickness, plans, direction);
            let mut out = y_to_z(slab, comm)?;
            transform_xy(&mut out.data, dims, out.thickness, plans, direction);
            Ok(out)
        }
    }
}

/// Serial 3-D FFT of a full grid, in place, applying the same line
/// transforms in the same order as the distributed path.
pub fn fft_3d_serial(grid: &mut [Complex64], dims: GridDims, direction: Direction) -> Result<(), KernelError> {
    dims.check(1)?;
    let plans = Plans::new(dims)?;
    match direction {
        Direction::Forward => {
            transform_xy(grid, dims, dims.nz, &plans, direction);
            transform_z(grid, dims, dims.ny, &plans, direction);
        }
        Direction::Inverse => {
            transform_z(grid, dims, dims.ny, &plans, direction);
            transform_xy(grid, dims, dims.nz, &plans, direction);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtParams {
    pub dims: GridDims,
    pub iterations: usize,
    pub class: String,
}

impl FtParams {
    pub fn for_class(class: &str) -> Option<Self> {
        ft_class_grid(class).map(|(nx, ny, nz, iterations)| FtParams {
            dims: GridDims::new(nx, ny, nz),
            iterations,
            class: class.to_string(),
        })
    }

    /// Cubic grid with a free-form class label.
    pub fn custom(n: usize, iterations: usize) -> Self {
        FtParams { dims: GridDims::cube(n), iterations, class: "custom".into() }
    }

    pub fn work_mop(&self) -> f64 {
        ft_work_mop(self.dims.nx, self.dims.ny, self.dims.nz, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtResult {
    pub dims: GridDims,
    pub iterations: usize,
    pub checksums: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtRun {
    pub result: FtResult,
    pub elapsed_s: f64,
    pub mops: f64,
}

/// Signed frequency of index `i` on an axis of length `n`.
fn wavenumber(i: usize, n: usize) -> f64 {
    ((i + n / 2) % n) as f64 - (n / 2) as f64
}

fn evolution_factors(dims: GridDims, offset: usize, rows: usize) -> Vec<f64> {
    let ap = -4.0 * FT_ALPHA * std::f64::consts::PI * std::f64::consts::PI;
    let GridDims { nx, ny, nz } = dims;
    let mut out = Vec::with_capacity(nx * rows * nz);
    for z in 0..nz {
        let kz = wavenumber(z, nz);
        for yl in 0..rows {
            let ky = wavenumber(offset + yl, ny);
            for x in 0..nx {
                let kx = wavenumber(x, nx);
                out.push((ap * (kx * kx + ky * ky + kz * kz)).exp());
            }
        }
    }
    out
}

fn initial_slab(dims: GridDims, rank: usize, ranks: usize) -> Result<Slab, KernelError> {
    let t = dims.nz / ranks;
    let len = dims.nx * dims.ny * t;
    let mut stream = RandomStream::new(FT_SEED)?;
    stream.advance(2 * (rank * t * dims.nx * dims.ny) as u64);
    let data = (0..len)
        .map(|_| {
            let re = stream.next_uniform();
            let im = stream.next_uniform();
            Complex64::new(re, im)
        })
        .collect();
    Ok(Slab { dims, axis: SlabAxis::Z, offset: rank * t, thickness: t, data })
}

fn local_checksum(slab: &Slab) -> Complex64 {
    let GridDims { nx, ny, nz } = slab.dims;
    let mut chk = Complex64::default();
    for j in 1..=FT_CHECKSUM_SAMPLES {
        let x = j % nx;
        let y = (3 * j) % ny;
        let z = (5 * j) % nz;
        if z >= slab.offset && z < slab.offset + slab.thickness {
            chk += slab.data[x + nx * (y + ny * (z - slab.offset))];
        }
    }
    chk
}

/// Run FT: random initial grid, one forward transform, then per iteration
/// apply the evolution factors, inverse-transform and record a checksum.
pub fn ft_run(params: &FtParams, comm: &Communicator) -> Result<FtRun, KernelError> {
    let p = comm.size();
    if !p.is_power_of_two() {
        return Err(KernelError::RanksNotPowerOfTwo(p));
    }
    let dims = params.dims;
    dims.check(p)?;
    let plans = Plans::new(dims)?;

    comm.barrier()?;
    let start = Instant::now();

    let u1 = initial_slab(dims, comm.rank(), p)?;
    let mut u0 = transform_distributed(u1, comm, Direction::Forward, &plans)?;
    let twiddle = evolution_factors(dims, u0.offset, u0.thickness);
    let scale = 1.0 / dims.total() as f64;

    let mut checksums = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        for (u, f) in u0.data.iter_mut().zip(&twiddle) {
            *u *= *f;
        }
        let u2 = transform_distributed(u0.clone(), comm, Direction::Inverse, &plans)?;
        let local = local_checksum(&u2);
        let global = comm.all_reduce_sum(&[local.re, local.im])?;
        checksums.push(Complex64::new(global[0], global[1]) * scale);
    }

    comm.barrier()?;
    let elapsed_s = start.elapsed().as_secs_f64();
    Ok(FtRun {
        result: FtResult { dims, iterations: params.iterations, checksums },
        elapsed_s,
        mops: params.work_mop() / elapsed_s,
    })
}

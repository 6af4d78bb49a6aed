//! BSP-style performance and energy model.
//!
//! A benchmark is reduced to a [`WorkloadProfile`]: an ordered list of
//! compute, all-to-all and reduce phases separated by barriers. [`predict`]
//! times each phase on a [`ClusterSpec`] under a calibrated
//! [`MachineModel`]:
//!
//! * compute: `ops_per_rank / (rate * eta(k))`, maximized over boards, where
//!   `k` is the number of ranks sharing a board;
//! * all-to-all: bytes crossing the busiest board uplink, over the effective
//!   link bandwidth, plus `(p - 1)` message latencies. Traffic between ranks
//!   on one board is free and the switch backplane is non-blocking;
//! * reduce: a reduce-then-broadcast tree over the boards in use.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterSpec, PowerModel, RankMap};
use crate::constants::{Benchmark, EP_ANNULI};
use crate::kernels::{EpParams, FtParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid workload profile: {0}")]
    InvalidProfile(String),
    #[error("invalid machine model: {0}")]
    InvalidModel(String),
    #[error("rank map covers {mapped} ranks but the profile has {ranks}")]
    RankMismatch { mapped: usize, ranks: usize },
    #[error("rank map references board {board}, cluster has {boards}")]
    UnknownBoard { board: usize, boards: usize },
    #[error("FT needs a power-of-two rank count that divides the grid, got {0}")]
    InvalidFtRanks(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phase {
    /// Work per rank in Mop.
    Compute { ops_per_rank: f64 },
    /// Bytes each rank sends to every rank (itself included).
    AllToAll { bytes_per_rank_pair: f64 },
    /// Size of the vector being all-reduced.
    Reduce { bytes: f64 },
}

impl Phase {
    fn amount(&self) -> f64 {
        match *self {
            Phase::Compute { ops_per_rank } => ops_per_rank,
            Phase::AllToAll { bytes_per_rank_pair } => bytes_per_rank_pair,
            Phase::Reduce { bytes } => bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub benchmark: Benchmark,
    pub class: String,
    pub ranks: usize,
    pub phases: Vec<Phase>,
}

impl WorkloadProfile {
    pub fn new(
        benchmark: Benchmark,
        class: impl Into<String>,
        ranks: usize,
        phases: Vec<Phase>,
    ) -> Result<Self, SimError> {
        let profile = WorkloadProfile { benchmark, class: class.into(), ranks, phases };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.ranks == 0 {
            return Err(SimError::InvalidProfile("ranks must be at least 1".into()));
        }
        if self.phases.is_empty() {
            return Err(SimError::InvalidProfile("phase list is empty".into()));
        }
        if let Some(i) = self.phases.iter().position(|p| !(p.amount() >= 0.0 && p.amount().is_finite())) {
            return Err(SimError::InvalidProfile(format!("phase {i} has a negative or non-finite size")));
        }
        Ok(())
    }

    /// Total compute work in Mop over all ranks.
    pub fn total_ops(&self) -> f64 {
        self.phases
            .iter()
            .map(|p| match p {
                Phase::Compute { ops_per_rank } => ops_per_rank * self.ranks as f64,
                _ => 0.0,
            })
            .sum()
    }

    /// Bytes that leave their sender over all all-to-all phases.
    pub fn cross_rank_bytes(&self) -> f64 {
        let p = self.ranks as f64;
        self.phases
            .iter()
            .map(|ph| match ph {
                Phase::AllToAll { bytes_per_rank_pair } => bytes_per_rank_pair * p * (p - 1.0),
                _ => 0.0,
            })
            .sum()
    }
}

/// One compute phase carrying the whole EP work, then the tally reduction.
pub fn ep_profile(params: &EpParams, ranks: usize) -> Result<WorkloadProfile, SimError> {
    let tally_bytes = ((EP_ANNULI + 3) * std::mem::size_of::<f64>()) as f64;
    WorkloadProfile::new(
        Benchmark::Ep,
        class_label_for_ep(params),
        ranks,
        vec![
            Phase::Compute { ops_per_rank: params.work_mop() / ranks.max(1) as f64 },
            Phase::Reduce { bytes: tally_bytes },
        ],
    )
}

fn class_label_for_ep(params: &EpParams) -> String {
    ["S", "W", "A", "B", "C"]
        .into_iter()
        .find(|c| crate::constants::ep_class_log2_pairs(c) == Some(params.log2_pairs))
        .map(str::to_string)
        .unwrap_or_else(|| "custom".to_string())
}

/// Per iteration: one compute phase and one slab-transpose all-to-all of
/// complex doubles.
pub fn ft_profile(params: &FtParams, ranks: usize) -> Result<WorkloadProfile, SimError> {
    let d = params.dims;
    if ranks == 0 || !ranks.is_power_of_two() || !d.nz.is_multiple_of(ranks) || !d.ny.is_multiple_of(ranks) {
        return Err(SimError::InvalidFtRanks(ranks));
    }
    if params.iterations == 0 {
        return Err(SimError::InvalidProfile("FT needs at least one iteration".into()));
    }
    let per_iter_ops = params.work_mop() / params.iterations as f64 / ranks as f64;
    let block = 16.0 * d.total() as f64 / (ranks * ranks) as f64;
    let phases = (0..params.iterations)
        .flat_map(|_| [Phase::Compute { ops_per_rank: per_iter_ops }, Phase::AllToAll { bytes_per_rank_pair: block }])
        .collect();
    WorkloadProfile::new(Benchmark::Ft, params.class.clone(), ranks, phases)
}

/// Per-core efficiency eta(k) with k active cores on one board.
///
/// Stored as calibrated points with eta(1) = 1; values between points are
/// interpolated linearly and values past the last point hold it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u32, f64>", into = "BTreeMap<u32, f64>")]
pub struct EfficiencyCurve {
    points: BTreeMap<u32, f64>,
}

impl EfficiencyCurve {
    pub fn ideal() -> Self {
        EfficiencyCurve { points: BTreeMap::from([(1, 1.0)]) }
    }

    pub fn from_points(points: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, SimError> {
        let mut map: BTreeMap<u32, f64> = points.into_iter().collect();
        match map.get(&1) {
            None => {
                map.insert(1, 1.0);
            }
            Some(&v) if v != 1.0 => return Err(SimError::InvalidModel(format!("eta(1) must be 1, got {v}"))),
            _ => {}
        }
        if map.contains_key(&0) {
            return Err(SimError::InvalidModel("eta is defined for k >= 1".into()));
        }
        let mut prev = 1.0;
        for (&k, &v) in &map {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SimError::InvalidModel(format!("eta({k}) = {v} outside (0, 1]")));
            }
            if v > prev {
                return Err(SimError::InvalidModel(format!("eta must be nonincreasing, eta({k}) = {v} > {prev}")));
            }
            prev = v;
        }
        Ok(EfficiencyCurve { points: map })
    }

    pub fn at(&self, k: u32) -> f64 {
        if k <= 1 {
            return 1.0;
        }
        if let Some(v) = self.points.get(&k) {
            return *v;
        }
        let below = self.points.range(..k).next_back();
        let above = self.points.range(k..).next();
        match (below, above) {
            (Some((&k0, &v0)), Some((&k1, &v1))) => v0 + (v1 - v0) * (k - k0) as f64 / (k1 - k0) as f64,
            (Some((_, &v0)), None) => v0,
            _ => 1.0,
        }
    }

    pub fn points(&self) -> &BTreeMap<u32, f64> {
        &self.points
    }
}

impl TryFrom<BTreeMap<u32, f64>> for EfficiencyCurve {
    type Error = SimError;

    fn try_from(map: BTreeMap<u32, f64>) -> Result<Self, Self::Error> {
        EfficiencyCurve::from_points(map)
    }
}

impl From<EfficiencyCurve> for BTreeMap<u32, f64> {
    fn from(c: EfficiencyCurve) -> Self {
        c.points
    }
}

/// Calibrated machine constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineModel {
    /// Mop/s of one core running alone on its board.
    pub core_rate_mops: f64,
    /// Per-benchmark overrides of `core_rate_mops`; benchmarks count
    /// operations differently, so EP and FT rates are not interchangeable.
    #[serde(default)]
    pub benchmark_rate_mops: BTreeMap<Benchmark, f64>,
    pub eta: EfficiencyCurve,
    pub link_bandwidth_eff_bps: f64,
    #[serde(default)]
    pub per_message_latency_s: f64,
}

impl MachineModel {
    pub fn rate_for(&self, benchmark: Benchmark) -> f64 {
        self.benchmark_rate_mops.get(&benchmark).copied().unwrap_or(self.core_rate_mops)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !positive(self.core_rate_mops) || !self.benchmark_rate_mops.values().all(|&r| positive(r)) {
            return Err(SimError::InvalidModel("core rates must be positive".into()));
        }
        if !positive(self.link_bandwidth_eff_bps) {
            return Err(SimError::InvalidModel("link bandwidth must be positive".into()));
        }
        if !(self.per_message_latency_s >= 0.0 && self.per_message_latency_s.is_finite()) {
            return Err(SimError::InvalidModel("latency must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Compute,
    AllToAll,
    Reduce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub kind: PhaseKind,
    pub time_s: f64,
}

/// Active cores per board over `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySegment {
    pub start_s: f64,
    pub end_s: f64,
    pub active_cores: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRun {
    pub benchmark: Benchmark,
    pub class: String,
    pub ranks: usize,
    pub total_time_s: f64,
    pub phases: Vec<PhaseTiming>,
    pub occupancy: Vec<OccupancySegment>,
    /// Mop executed, summed over ranks.
    pub executed_ops: f64,
}

impl PredictedRun {
    pub fn mops(&self) -> f64 {
        if self.total_time_s > 0.0 {
            self.executed_ops / self.total_time_s
        } else {
            0.0
        }
    }
}

fn ceil_log2(n: usize) -> u32 {
    n.next_power_of_two().trailing_zeros()
}

/// Bytes on the busiest board uplink during one all-to-all (the larger of
/// its outgoing and incoming volume, which are equal for a uniform
/// exchange).
fn uplink_bytes(load: &[u32], ranks: usize, bytes_per_pair: f64) -> f64 {
    load.iter().map(|&n| n as f64 * (ranks as f64 - n as f64) * bytes_per_pair).fold(0.0, f64::max)
}

fn reduce_rounds(map: &RankMap) -> f64 {
    let boards = map.boards_used();
    if boards > 1 {
        2.0 * ceil_log2(boards) as f64
    } else {
        0.0
    }
}

/// Total bytes whose transfer time scales with 1 / bandwidth, i.e. the
/// coefficient `V` in `T = T(infinite bandwidth) + 8 V / bandwidth`.
pub fn bandwidth_volume_bytes(profile: &WorkloadProfile, spec: &ClusterSpec, map: &RankMap) -> f64 {
    let load = map.ranks_per_board(spec.boards.len());
    profile
        .phases
        .iter()
        .map(|ph| match *ph {
            Phase::Compute { .. } => 0.0,
            Phase::AllToAll { bytes_per_rank_pair } => uplink_bytes(&load, profile.ranks, bytes_per_rank_pair),
            Phase::Reduce { bytes } => reduce_rounds(map) * bytes,
        })
        .sum()
}

fn check_inputs(
    profile: &WorkloadProfile,
    spec: &ClusterSpec,
    model: &MachineModel,
    map: &RankMap,
) -> Result<(), SimError> {
    profile.validate()?;
    model.validate()?;
    if map.ranks() != profile.ranks {
        return Err(SimError::RankMismatch { mapped: map.ranks(), ranks: profile.ranks });
    }
    if let Some(s) = map.entries().iter().find(|s| s.board >= spec.boards.len()) {
        return Err(SimError::UnknownBoard { board: s.board, boards: spec.boards.len() });
    }
    Ok(())
}

/// Predict wall time and occupancy of `profile` on `spec`.
pub fn predict(
    profile: &WorkloadProfile,
    spec: &ClusterSpec,
    model: &MachineModel,
    map: &RankMap,
) -> Result<PredictedRun, SimError> {
    check_inputs(profile, spec, model, map)?;
    let load = map.ranks_per_board(spec.boards.len());
    let rate = model.rate_for(profile.benchmark);
    let p = profile.ranks;
    let bw = model.link_bandwidth_eff_bps;
    let latency = model.per_message_latency_s;

    let mut clock = 0.0;
    let mut phases = Vec::with_capacity(profile.phases.len());
    let mut occupancy = Vec::new();
    let mut executed_ops = 0.0;
    let push = |occ: &mut Vec<OccupancySegment>, start: f64, end: f64, active: Vec<u32>| {
        if end > start {
            occ.push(OccupancySegment { start_s: start, end_s: end, active_cores: active });
        }
    };

    for phase in &profile.phases {
        let (kind, time) = match *phase {
            Phase::Compute { ops_per_rank } => {
                let ranks_run: u32 = load.iter().sum();
                executed_ops += ops_per_rank * ranks_run as f64;
                let finish: Vec<f64> =
                    load.iter().map(|&n| if n == 0 { 0.0 } else { ops_per_rank / (rate * model.eta.at(n)) }).collect();
                let time = finish.iter().copied().fold(0.0, f64::max);
                // Boards that finish early sit idle until the barrier.
                let mut cuts: Vec<f64> = finish.iter().copied().filter(|&t| t > 0.0).collect();
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let mut from = 0.0;
                for cut in cuts {
                    let active = load.iter().zip(&finish).map(|(&n, &f)| if f > from { n } else { 0 }).collect();
                    push(&mut occupancy, clock + from, clock + cut, active);
                    from = cut;
                }
                (PhaseKind::Compute, time)
            }
            Phase::AllToAll { bytes_per_rank_pair } => {
                let bytes = uplink_bytes(&load, p, bytes_per_rank_pair);
                let time = if bytes > 0.0 { bytes * 8.0 / bw + latency * (p - 1) as f64 } else { 0.0 };
                push(&mut occupancy, clock, clock + time, load.clone());
                (PhaseKind::AllToAll, time)
            }
            Phase::Reduce { bytes } => {
                let rounds = reduce_rounds(map);
                let time = if rounds > 0.0 { rounds * (bytes * 8.0 / bw + latency) } else { 0.0 };
                push(&mut occupancy, clock, clock + time, load.clone());
                (PhaseKind::Reduce, time)
            }
        };
        phases.push(PhaseTiming { kind, time_s: time });
        clock += time;
    }

    Ok(PredictedRun {
        benchmark: profile.benchmark,
        class: profile.class.clone(),
        ranks: p,
        total_time_s: phases.iter().map(|ph| ph.time_s).sum(),
        phases,
        occupancy,
        executed_ops,
    })
}

/// Joules over the run: every board draws its idle power for the whole run
/// plus the per-core increment while cores are active, and the shared
/// infrastructure draws `p_infra_w` throughout.
pub fn predict_energy(run: &PredictedRun, power: &PowerModel, spec: &ClusterSpec) -> f64 {
    let boards = spec.boards.len();
    let covered: f64 = run.occupancy.iter().map(|s| s.end_s - s.start_s).sum();
    let active: f64 = run
        .occupancy
        .iter()
        .map(|s| {
            let watts: f64 = (0..boards).map(|b| power.board_power(s.active_cores.get(b).copied().unwrap_or(0))).sum();
            (s.end_s - s.start_s) * watts
        })
        .sum();
    let gap = (run.total_time_s - covered).max(0.0);
    let idle_w = boards as f64 * power.board_power(0);
    active + gap * idle_w + run.total_time_s * power.p_infra_w
}

/// Energy of holding a fixed per-board active-core count for `seconds`.
pub fn steady_energy(power: &PowerModel, spec: &ClusterSpec, active_per_board: &[u32], seconds: f64) -> f64 {
    let watts: f64 =
        (0..spec.boards.len()).map(|b| power.board_power(active_per_board.get(b).copied().unwrap_or(0))).sum::<f64>()
            + power.p_infra_w;
    watts * seconds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{placement, PlacementPolicy};

    fn paper_cluster() -> ClusterSpec {
        ClusterSpec::radxa(
            4,
            PowerModel { p_idle_w: 3.015_384_615_384_615, p_core_w: 0.170_769_230_769_230_8, p_infra_w: 0.0 },
        )
    }

    fn paper_model() -> MachineModel {
        let w = crate::constants::ep_work_mop(30);
        MachineModel {
            core_rate_mops: w / 385.89,
            benchmark_rate_mops: BTreeMap::new(),
            eta: EfficiencyCurve::from_points([(4, 385.89 / (4.0 * 156.64))]).unwrap(),
            link_bandwidth_eff_bps: 59e6,
            per_message_latency_s: 0.0,
        }
    }

    fn run(profile: &WorkloadProfile, spec: &ClusterSpec, model: &MachineModel) -> PredictedRun {
        let map = placement(spec, profile.ranks, PlacementPolicy::Block).unwrap();
        predict(profile, spec, model, &map).unwrap()
    }

    #[test]
    fn ep_b_profile_splits_work_evenly() {
        let params = EpParams::for_class("B").unwrap();
        let prof = ep_profile(&params, 16).unwrap();
        assert_eq!(prof.class, "B");
        assert_eq!(prof.phases.len(), 2);
        assert_eq!(prof.phases[0], Phase::Compute { ops_per_rank: params.work_mop() / 16.0 });
        assert!(matches!(prof.phases[1], Phase::Reduce { bytes } if bytes <= 1024.0));
        let half = ep_profile(&params, 32).unwrap();
        match (prof.phases[0], half.phases[0]) {
            (Phase::Compute { ops_per_rank: a }, Phase::Compute { ops_per_rank: b }) => assert_eq!(a, 2.0 * b),
            _ => unreachable!(),
        }
    }

    #[test]
    fn ft_a_profile_volumes() {
        let params = FtParams::for_class("A").unwrap();
        let prof = ft_profile(&params, 8).unwrap();
        assert_eq!(prof.phases.len(), 12);
        // 16 B * 2^23 points / 8^2 rank pairs = 2 MiB per pair
        assert_eq!(prof.phases[1], Phase::AllToAll { bytes_per_rank_pair: 2.0 * 1024.0 * 1024.0 });
        let grid_bytes = 8.0 * 8.0 * 2.0 * 1024.0 * 1024.0;
        assert_eq!(grid_bytes, 128.0 * 1024.0 * 1024.0);
        assert!((prof.total_ops() - 7136.44).abs() < 0.01);
        let single = ft_profile(&params, 1).unwrap();
        assert_eq!(single.cross_rank_bytes(), 0.0);
        assert!(ft_profile(&params, 3).is_err());
    }

    #[test]
    fn ep_b_sixteen_ranks() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("B").unwrap(), 16).unwrap();
        let r = run(&prof, &spec, &paper_model());
        // closed form: T(4)/4 plus a sub-millisecond tally reduction
        assert!((r.total_time_s - 39.16).abs() < 0.01, "{}", r.total_time_s);
        assert_eq!(r.total_time_s, r.phases.iter().map(|p| p.time_s).sum::<f64>());
    }

    #[test]
    fn one_rank_reproduces_anchor() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("B").unwrap(), 1).unwrap();
        let r = run(&prof, &spec, &paper_model());
        assert!((r.total_time_s - 385.89).abs() < 1e-9);
        assert_eq!(r.phases[1].time_s, 0.0);
    }

    #[test]
    fn zero_traffic_ignores_bandwidth() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("B").unwrap(), 4).unwrap();
        let mut m = paper_model();
        let a = run(&prof, &spec, &m).total_time_s;
        m.link_bandwidth_eff_bps = 1.0;
        assert_eq!(a, run(&prof, &spec, &m).total_time_s);
    }

    #[test]
    fn energy_examples() {
        let spec = paper_cluster();
        let power = spec.power;
        let e = steady_energy(&power, &spec, &[4, 4, 4, 4], 41.14);
        assert!((e - 608.6).abs() < 0.1, "{e}");
        let idle = steady_energy(&power, &spec, &[], 10.0);
        assert!((idle - 4.0 * 3.015_384_615 * 10.0).abs() < 1e-6);
        let empty = PredictedRun {
            benchmark: Benchmark::Ep,
            class: "B".into(),
            ranks: 16,
            total_time_s: 0.0,
            phases: vec![],
            occupancy: vec![],
            executed_ops: 0.0,
        };
        assert_eq!(predict_energy(&empty, &power, &spec), 0.0);
    }

    #[test]
    fn predicted_energy_for_sixteen_ranks() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("B").unwrap(), 16).unwrap();
        let r = run(&prof, &spec, &paper_model());
        let e = predict_energy(&r, &spec.power, &spec);
        assert!((e - 4.0 * 3.698_461_5 * r.total_time_s).abs() < 1e-3, "{e}");
        assert!((e - 579.3).abs() < 0.5, "{e}");
    }

    #[test]
    fn partially_loaded_cluster_draws_idle_power_on_spare_board() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("B").unwrap(), 12).unwrap();
        let r = run(&prof, &spec, &paper_model());
        let e = predict_energy(&r, &spec.power, &spec);
        let expect = steady_energy(&spec.power, &spec, &[4, 4, 4, 0], r.total_time_s);
        assert!((e - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn efficiency_curve_rules() {
        let c = EfficiencyCurve::from_points([(4, 0.6)]).unwrap();
        assert_eq!(c.at(1), 1.0);
        assert!((c.at(2) - (1.0 - 0.4 / 3.0)).abs() < 1e-15);
        assert_eq!(c.at(4), 0.6);
        assert_eq!(c.at(8), 0.6);
        assert!(EfficiencyCurve::from_points([(1, 0.9)]).is_err());
        assert!(EfficiencyCurve::from_points([(2, 0.5), (4, 0.7)]).is_err());
        assert!(EfficiencyCurve::from_points([(4, 1.2)]).is_err());
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"1":1.0,"4":0.6}"#);
        assert_eq!(serde_json::from_str::<EfficiencyCurve>(&json).unwrap(), c);
        assert!(serde_json::from_str::<EfficiencyCurve>(r#"{"4":1.5}"#).is_err());
    }

    #[test]
    fn rank_map_must_match_profile() {
        let spec = paper_cluster();
        let prof = ep_profile(&EpParams::for_class("S").unwrap(), 8).unwrap();
        let map = placement(&spec, 4, PlacementPolicy::Block).unwrap();
        assert_eq!(predict(&prof, &spec, &paper_model(), &map), Err(SimError::RankMismatch { mapped: 4, ranks: 8 }));
    }
}

//! Measured tables, scaling metrics, and calibration of a [`MachineModel`]
//! from measured rows.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{placement, ClusterSpec, PlacementError, PlacementPolicy};
use crate::constants::{class_work_mop, Benchmark};
use crate::kernels::FtParams;
use crate::sim::{
    bandwidth_volume_bytes, ft_profile, predict, EfficiencyCurve, MachineModel, SimError, WorkloadProfile,
};

/// Lowest accepted effective bandwidth as a fraction of nominal.
pub const MIN_BANDWIDTH_FRACTION: f64 = 0.4;
/// Highest accepted effective bandwidth as a fraction of nominal.
pub const MAX_BANDWIDTH_FRACTION: f64 = 1.0;
/// Default relative-error tolerance for predicted vs measured rows.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("duplicate row for {benchmark}.{class} at {cores} cores")]
    Duplicate { benchmark: Benchmark, class: String, cores: u32 },
    #[error("table is empty")]
    Empty,
    #[error("table mixes several benchmark/class groups; select one first")]
    MixedGroups,
    #[error("missing {benchmark}.{class} row at {cores} cores")]
    MissingRow { benchmark: Benchmark, class: String, cores: u32 },
    #[error("no {0} rows to calibrate from")]
    MissingBenchmark(Benchmark),
    #[error("unknown problem class {benchmark}.{class}")]
    UnknownClass { benchmark: Benchmark, class: String },
    #[error("{0}")]
    Precondition(String),
    #[error(
        "nonpositive residual: multi-board time {measured_s} s is not above the modeled compute time {compute_s} s"
    )]
    NonpositiveResidual { measured_s: f64, compute_s: f64 },
    #[error("effective bandwidth {fit_bps:.4e} bit/s is outside [{low_bps:.4e}, {high_bps:.4e}]")]
    BandwidthOutOfRange { fit_bps: f64, low_bps: f64, high_bps: f64 },
    #[error("predicted and measured tables share no (benchmark, class, cores) key")]
    NoMatchingKeys,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub benchmark: Benchmark,
    pub class: String,
    pub cores: u32,
    pub time_s: f64,
    pub mops: f64,
}

impl MeasuredRow {
    pub fn key(&self) -> (Benchmark, &str, u32) {
        (self.benchmark, self.class.as_str(), self.cores)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasuredTable {
    rows: Vec<MeasuredRow>,
}

impl MeasuredTable {
    pub fn from_rows(rows: Vec<MeasuredRow>) -> Result<Self, AnalysisError> {
        let mut seen = HashSet::new();
        for (i, r) in rows.iter().enumerate() {
            if r.cores == 0 {
                return Err(AnalysisError::InvalidRow { row: i + 1, message: "cores must be at least 1".into() });
            }
            if !(r.time_s > 0.0 && r.time_s.is_finite()) {
                return Err(AnalysisError::InvalidRow { row: i + 1, message: "time_s must be positive".into() });
            }
            if !(r.mops > 0.0 && r.mops.is_finite()) {
                return Err(AnalysisError::InvalidRow { row: i + 1, message: "mops must be positive".into() });
            }
            if !seen.insert((r.benchmark, r.class.clone(), r.cores)) {
                return Err(AnalysisError::Duplicate {
                    benchmark: r.benchmark,
                    class: r.class.clone(),
                    cores: r.cores,
                });
            }
        }
        Ok(MeasuredTable { rows })
    }

    /// Read CSV with header `benchmark,class,cores,time_s,mops`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, AnalysisError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr
            .deserialize()
            .collect::<Result<Vec<MeasuredRow>, _>>()
            .map_err(|e| AnalysisError::Csv(e.to_string()))?;
        Self::from_rows(rows)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, AnalysisError> {
        Self::from_csv_reader(text.as_bytes())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| AnalysisError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }

    pub fn rows(&self) -> &[MeasuredRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenate two tables, rejecting duplicate keys.
    pub fn merge(&self, other: &MeasuredTable) -> Result<Self, AnalysisError> {
        Self::from_rows(self.rows.iter().chain(&other.rows).cloned().collect())
    }

    pub fn find(&self, benchmark: Benchmark, class: &str, cores: u32) -> Option<&MeasuredRow> {
        self.rows.iter().find(|r| r.key() == (benchmark, class, cores))
    }

    /// Rows of one benchmark and class, sorted by core count.
    pub fn group(&self, benchmark: Benchmark, class: &str) -> Vec<&MeasuredRow> {
        let mut rows: Vec<&MeasuredRow> =
            self.rows.iter().filter(|r| r.benchmark == benchmark && r.class == class).collect();
        rows.sort_by_key(|r| r.cores);
        rows
    }

    /// Distinct (benchmark, class) groups in sorted order.
    pub fn groups(&self) -> Vec<(Benchmark, String)> {
        let mut g: Vec<(Benchmark, String)> = self.rows.iter().map(|r| (r.benchmark, r.class.clone())).collect();
        g.sort();
        g.dedup();
        g
    }
}

pub fn percent_decrease(from_s: f64, to_s: f64) -> f64 {
    100.0 * (from_s - to_s) / from_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub cores: u32,
    pub time_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
    /// Time decrease relative to the baseline row, in percent.
    pub percent_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub benchmark: Benchmark,
    pub class: String,
    pub baseline_cores: u32,
    pub rows: Vec<ScalingRow>,
    pub work: WorkConservation,
}

impl ScalingReport {
    pub fn row(&self, cores: u32) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.cores == cores)
    }

    /// Time decrease in percent going from the `from` row to the `to` row.
    pub fn percent_decrease(&self, from: u32, to: u32) -> Option<f64> {
        Some(percent_decrease(self.row(from)?.time_s, self.row(to)?.time_s))
    }
}

/// Speedup, efficiency and percent decrease of every row against the row
/// with `baseline_cores`. The table must hold a single benchmark/class.
pub fn scaling_metrics(table: &MeasuredTable, baseline_cores: u32) -> Result<ScalingReport, AnalysisError> {
    let groups = table.groups();
    let (benchmark, class) = match groups.as_slice() {
        [] => return Err(AnalysisError::Empty),
        [one] => one.clone(),
        _ => return Err(AnalysisError::MixedGroups),
    };
    let rows = table.group(benchmark, &class);
    let base = rows.iter().find(|r| r.cores == baseline_cores).ok_or_else(|| AnalysisError::MissingRow {
        benchmark,
        class: class.clone(),
        cores: baseline_cores,
    })?;
    let scaled = rows
        .iter()
        .map(|r| {
            let speedup = base.time_s / r.time_s;
            ScalingRow {
                cores: r.cores,
                time_s: r.time_s,
                speedup,
                efficiency: speedup * baseline_cores as f64 / r.cores as f64,
                percent_decrease: percent_decrease(base.time_s, r.time_s),
            }
        })
        .collect();
    let owned: Vec<MeasuredRow> = rows.into_iter().cloned().collect();
    Ok(ScalingReport { benchmark, class, baseline_cores, rows: scaled, work: work_conservation(&owned)? })
}

/// rate x time per row, which should be constant for a fixed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkConservation {
    pub totals_mop: Vec<f64>,
    pub mean_total_mop: f64,
    pub max_relative_deviation: f64,
}

pub fn work_conservation(rows: &[MeasuredRow]) -> Result<WorkConservation, AnalysisError> {
    if rows.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let totals: Vec<f64> = rows.iter().map(|r| r.mops * r.time_s).collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let dev = totals.iter().map(|t| (t - mean).abs() / mean).fold(0.0, f64::max);
    Ok(WorkConservation { totals_mop: totals, mean_total_mop: mean, max_relative_deviation: dev })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeCalibration {
    pub core_rate_mops: f64,
    pub full_board_cores: u32,
    pub eta_full_board: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ComputeCalibration {
    pub fn efficiency_curve(&self) -> Result<EfficiencyCurve, SimError> {
        EfficiencyCurve::from_points([(self.full_board_cores, self.eta_full_board)])
    }
}

/// Per-core rate from the single-core row and eta(k) = T(1) / (k T(k)) from
/// the full-board row, given the total work `work_mop`.
pub fn calibrate_compute(
    one_core: &MeasuredRow,
    full_board: &MeasuredRow,
    work_mop: f64,
    board_cores: u32,
) -> Result<ComputeCalibration, AnalysisError> {
    if one_core.cores != 1 {
        return Err(AnalysisError::Precondition(format!("single-core row has {} cores", one_core.cores)));
    }
    if full_board.cores != board_cores {
        return Err(AnalysisError::Precondition(format!(
            "full-board row has {} cores, boards have {board_cores}",
            full_board.cores
        )));
    }
    if work_mop.is_nan() || work_mop <= 0.0 {
        return Err(AnalysisError::Precondition("work must be positive".into()));
    }
    let k = board_cores as f64;
    let mut eta = one_core.time_s / (k * full_board.time_s);
    let mut warnings = Vec::new();
    if full_board.time_s > one_core.time_s {
        warnings.push(format!(
            "implausible: {board_cores} cores ({} s) slower than one core ({} s), eta = {eta:.4} < 1/{board_cores}",
            full_board.time_s, one_core.time_s
        ));
    }
    if eta > 1.0 {
        warnings.push(format!("superlinear board scaling (eta = {eta:.4}) clamped to 1"));
        eta = 1.0;
    }
    Ok(ComputeCalibration {
        core_rate_mops: work_mop / one_core.time_s,
        full_board_cores: board_cores,
        eta_full_board: eta,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthFit {
    pub link_bandwidth_eff_bps: f64,
    /// Per-core rate of the benchmark implied by the single-board row.
    pub benchmark_rate_mops: f64,
    /// Modeled time of the multi-board row with unlimited bandwidth.
    pub compute_time_s: f64,
    /// Time left over for bandwidth-bound transfers.
    pub residual_s: f64,
    /// Bytes crossing the busiest uplink over the whole run.
    pub uplink_bytes: f64,
    pub nominal_bps: f64,
}

/// Fit the effective link bandwidth from one single-board and one
/// multi-board row of the benchmark described by `profile` (built for the
/// multi-board core count).
///
/// The single-board row fixes the benchmark's per-core rate; the model then
/// predicts the multi-board row with unlimited bandwidth, and whatever time
/// remains is charged to the uplink traffic.
pub fn calibrate_bandwidth(
    single: &MeasuredRow,
    multi: &MeasuredRow,
    profile: &WorkloadProfile,
    model: &MachineModel,
    spec: &ClusterSpec,
) -> Result<BandwidthFit, AnalysisError> {
    if profile.ranks != multi.cores as usize {
        return Err(AnalysisError::Precondition(format!(
            "profile has {} ranks, multi-board row has {} cores",
            profile.ranks, multi.cores
        )));
    }
    let single_map = placement(spec, single.cores as usize, PlacementPolicy::Block)?;
    if single_map.boards_used() != 1 {
        return Err(AnalysisError::Precondition(format!("{} cores do not fit on one board", single.cores)));
    }
    let multi_map = placement(spec, multi.cores as usize, PlacementPolicy::Block)?;
    if multi_map.boards_used() < 2 {
        return Err(AnalysisError::Precondition(format!("{} cores fit on one board", multi.cores)));
    }

    let k = single.cores;
    let rate = profile.total_ops() / (k as f64 * model.eta.at(k) * single.time_s);
    let mut unlimited = model.clone();
    unlimited.benchmark_rate_mops.insert(profile.benchmark, rate);
    unlimited.link_bandwidth_eff_bps = f64::INFINITY;
    let compute = predict(profile, spec, &unlimited, &multi_map)?.total_time_s;

    let residual = multi.time_s - compute;
    let volume = bandwidth_volume_bytes(profile, spec, &multi_map);
    if residual.is_nan() || residual <= 0.0 || volume <= 0.0 {
        return Err(AnalysisError::NonpositiveResidual { measured_s: multi.time_s, compute_s: compute });
    }
    let bandwidth = 8.0 * volume / residual;
    let nominal = spec.nominal_link_bps();
    let (low, high) = (MIN_BANDWIDTH_FRACTION * nominal, MAX_BANDWIDTH_FRACTION * nominal);
    if !(low..=high).contains(&bandwidth) {
        return Err(AnalysisError::BandwidthOutOfRange { fit_bps: bandwidth, low_bps: low, high_bps: high });
    }
    Ok(BandwidthFit {
        link_bandwidth_eff_bps: bandwidth,
        benchmark_rate_mops: rate,
        compute_time_s: compute,
        residual_s: residual,
        uplink_bytes: volume,
        nominal_bps: nominal,
    })
}

/// Full calibration outcome, serialized as the model file. The machine
/// constants are flattened to the top level so the file deserializes
/// directly as a [`MachineModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(flatten)]
    pub model: MachineModel,
    /// Total work per "BENCH.CLASS" in Mop, as used by the profiles.
    pub work_mop: BTreeMap<String, f64>,
    pub compute: ComputeCalibration,
    pub bandwidth: Option<BandwidthFit>,
    pub work_conservation: BTreeMap<String, WorkConservation>,
}

fn single_class(table: &MeasuredTable, benchmark: Benchmark) -> Result<Option<String>, AnalysisError> {
    let classes: Vec<String> = table.groups().into_iter().filter(|(b, _)| *b == benchmark).map(|(_, c)| c).collect();
    match classes.len() {
        0 => Ok(None),
        1 => Ok(classes.into_iter().next()),
        _ => Err(AnalysisError::Precondition(format!("{benchmark} rows span several classes: {classes:?}"))),
    }
}

/// Calibrate the compute constants from the EP rows (1 core and one full
/// board) and, when FT rows are present, the FT rate and effective link
/// bandwidth from one single-board and one multi-board FT row.
pub fn calibrate(table: &MeasuredTable, spec: &ClusterSpec) -> Result<Calibration, AnalysisError> {
    spec.validate().map_err(|e| AnalysisError::Precondition(e.to_string()))?;
    let board_cores = spec.boards[0].core_count;
    if spec.boards.iter().any(|b| b.core_count != board_cores) {
        return Err(AnalysisError::Precondition("calibration assumes identical boards".into()));
    }
    let mut work_mop = BTreeMap::new();
    let mut conservation = BTreeMap::new();
    for (b, c) in table.groups() {
        let rows: Vec<MeasuredRow> = table.group(b, &c).into_iter().cloned().collect();
        conservation.insert(format!("{b}.{c}"), work_conservation(&rows)?);
    }

    let ep_class = single_class(table, Benchmark::Ep)?.ok_or(AnalysisError::MissingBenchmark(Benchmark::Ep))?;
    let ep_work = class_work_mop(Benchmark::Ep, &ep_class)
        .ok_or_else(|| AnalysisError::UnknownClass { benchmark: Benchmark::Ep, class: ep_class.clone() })?;
    work_mop.insert(format!("EP.{ep_class}"), ep_work);
    let missing = |cores| AnalysisError::MissingRow { benchmark: Benchmark::Ep, class: ep_class.clone(), cores };
    let one = table.find(Benchmark::Ep, &ep_class, 1).ok_or_else(|| missing(1))?;
    let full = table.find(Benchmark::Ep, &ep_class, board_cores).ok_or_else(|| missing(board_cores))?;
    let compute = calibrate_compute(one, full, ep_work, board_cores)?;

    let mut model = MachineModel {
        core_rate_mops: compute.core_rate_mops,
        benchmark_rate_mops: BTreeMap::from([(Benchmark::Ep, compute.core_rate_mops)]),
        eta: compute.efficiency_curve()?,
        link_bandwidth_eff_bps: spec.nominal_link_bps(),
        per_message_latency_s: spec.switch.per_message_latency_s,
    };

    let mut bandwidth = None;
    if let Some(ft_class) = single_class(table, Benchmark::Ft)? {
        let params = FtParams::for_class(&ft_class)
            .ok_or_else(|| AnalysisError::UnknownClass { benchmark: Benchmark::Ft, class: ft_class.clone() })?;
        work_mop.insert(format!("FT.{ft_class}"), params.work_mop());
        let rows = table.group(Benchmark::Ft, &ft_class);
        let single = rows
            .iter()
            .rev()
            .find(|r| r.cores <= board_cores)
            .ok_or_else(|| AnalysisError::Precondition(format!("no single-board FT.{ft_class} row")))?;
        let multi = rows
            .iter()
            .find(|r| r.cores > board_cores)
            .ok_or_else(|| AnalysisError::Precondition(format!("no multi-board FT.{ft_class} row")))?;
        let profile = ft_profile(&params, multi.cores as usize)?;
        let fit = calibrate_bandwidth(single, multi, &profile, &model, spec)?;
        model.link_bandwidth_eff_bps = fit.link_bandwidth_eff_bps;
        model.benchmark_rate_mops.insert(Benchmark::Ft, fit.benchmark_rate_mops);
        bandwidth = Some(fit);
    }

    Ok(Calibration { model, work_mop, compute, bandwidth, work_conservation: conservation })
}

/// A predicted time for one (benchmark, class, cores) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub benchmark: Benchmark,
    pub class: String,
    pub cores: u32,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub benchmark: Benchmark,
    pub class: String,
    pub cores: u32,
    pub predicted_s: f64,
    pub measured_s: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Predictions without a measured counterpart.
    pub unmatched: Vec<Prediction>,
}

/// Relative error |pred - meas| / meas for every shared key.
pub fn compare(
    predicted: &[Prediction],
    measured: &MeasuredTable,
    tolerance: f64,
) -> Result<Comparison, AnalysisError> {
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for p in predicted {
        match measured.find(p.benchmark, &p.class, p.cores) {
            Some(m) => rows.push(ComparisonRow {
                benchmark: p.benchmark,
                class: p.class.clone(),
                cores: p.cores,
                predicted_s: p.time_s,
                measured_s: m.time_s,
                relative_error: (p.time_s - m.time_s).abs() / m.time_s,
            }),
            None => unmatched.push(p.clone()),
        }
    }
    if rows.is_empty() {
        return Err(AnalysisError::NoMatchingKeys);
    }
    rows.sort_by(|a, b| (a.benchmark, &a.class, a.cores).cmp(&(b.benchmark, &b.class, b.cores)));
    let max_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(Comparison { rows, max_error, tolerance, pass: max_error <= tolerance, unmatched })
}

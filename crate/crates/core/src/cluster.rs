//! Cluster hardware description, rank placement and the per-board power model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    pub id: String,
    pub core_count: u32,
    pub core_clock_hz: f64,
    pub ram_bytes: u64,
    pub nic_bandwidth_bps: f64,
    /// Opaque; only checked for uniqueness.
    #[serde(rename = "mac")]
    pub mac_address: String,
}

impl BoardSpec {
    /// A Radxa Rock Pro: 4 cores at 1.6 GHz, 2 GiB RAM, 100 Mbit/s NIC.
    pub fn radxa(id: impl Into<String>, mac: impl Into<String>) -> Self {
        BoardSpec {
            id: id.into(),
            core_count: 4,
            core_clock_hz: 1.6e9,
            ram_bytes: 2 << 30,
            nic_bandwidth_bps: 100e6,
            mac_address: mac.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSpec {
    pub port_count: u32,
    pub port_bandwidth_bps: f64,
    pub per_message_latency_s: f64,
}

/// Linear board power: `p_idle_w + p_core_w * active_cores`, plus a
/// cluster-wide `p_infra_w` for the switch and shared devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_idle_w: f64,
    pub p_core_w: f64,
    #[serde(default)]
    pub p_infra_w: f64,
}

impl PowerModel {
    pub fn board_power(&self, active_cores: u32) -> f64 {
        self.p_idle_w + self.p_core_w * active_cores as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub boards: Vec<BoardSpec>,
    pub switch: SwitchSpec,
    pub power: PowerModel,
    #[serde(default)]
    pub topology: Topology,
}

impl ClusterSpec {
    /// `boards` Radxa boards behind an 8-port 100 Mbit/s switch.
    pub fn radxa(boards: usize, power: PowerModel) -> Self {
        ClusterSpec {
            boards: (0..boards)
                .map(|i| BoardSpec::radxa(format!("radxa{i}"), format!("02:00:00:00:00:{:02x}", i + 1)))
                .collect(),
            switch: SwitchSpec { port_count: 8, port_bandwidth_bps: 100e6, per_message_latency_s: 0.0 },
            power,
            topology: Topology::Star,
        }
    }

    pub fn total_cores(&self) -> usize {
        self.boards.iter().map(|b| b.core_count as usize).sum()
    }

    /// Nominal bandwidth of a board's path into the switch: the slower of
    /// the slowest NIC and the switch port.
    pub fn nominal_link_bps(&self) -> f64 {
        self.boards.iter().map(|b| b.nic_bandwidth_bps).fold(self.switch.port_bandwidth_bps, f64::min)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.boards.is_empty() {
            return Err(invalid("boards", "at least one board is required"));
        }
        let mut macs: HashMap<&str, usize> = HashMap::new();
        for (i, b) in self.boards.iter().enumerate() {
            let path = |f: &str| format!("boards[{i}].{f}");
            if b.core_count == 0 {
                return Err(invalid(path("core_count"), "must be at least 1"));
            }
            if !(b.core_clock_hz > 0.0 && b.core_clock_hz.is_finite()) {
                return Err(invalid(path("core_clock_hz"), "must be positive"));
            }
            if b.ram_bytes == 0 {
                return Err(invalid(path("ram_bytes"), "must be positive"));
            }
            if !(b.nic_bandwidth_bps > 0.0 && b.nic_bandwidth_bps.is_finite()) {
                return Err(invalid(path("nic_bandwidth_bps"), "must be positive"));
            }
            if let Some(prev) = macs.insert(b.mac_address.as_str(), i) {
                return Err(invalid(
                    path("mac"),
                    format!("duplicate MAC {:?} (also used by boards[{prev}])", b.mac_address),
                ));
            }
        }
        let s = &self.switch;
        if (s.port_count as usize) < self.boards.len() {
            return Err(invalid(
                "switch.port_count",
                format!("{} ports cannot serve {} boards", s.port_count, self.boards.len()),
            ));
        }
        if !(s.port_bandwidth_bps > 0.0 && s.port_bandwidth_bps.is_finite()) {
            return Err(invalid("switch.port_bandwidth_bps", "must be positive"));
        }
        if !(s.per_message_latency_s >= 0.0 && s.per_message_latency_s.is_finite()) {
            return Err(invalid("switch.per_message_latency_s", "must be nonnegative"));
        }
        for (name, v) in
            [("p_idle_w", self.power.p_idle_w), ("p_core_w", self.power.p_core_w), ("p_infra_w", self.power.p_infra_w)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("power.{name}"), "must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Parse and validate a JSON cluster description.
pub fn load_cluster_spec(config_text: &str) -> Result<ClusterSpec, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(config_text);
    let spec: ClusterSpec = serde_path_to_error::deserialize(de)
        .map_err(|e| ConfigError::Parse { path: e.path().to_string(), message: e.inner().to_string() })?;
    spec.validate()?;
    Ok(spec)
}

/// Render a spec in the same JSON format [`load_cluster_spec`] reads.
pub fn render(spec: &ClusterSpec) -> String {
    serde_json::to_string_pretty(spec).expect("cluster spec is always serializable")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementPolicy {
    /// Fill every core of a board before moving to the next board.
    #[default]
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoreSlot {
    pub board: usize,
    pub core: usize,
}

/// Rank -> (board, core). Rank indices are the vector positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMap {
    entries: Vec<CoreSlot>,
}

impl RankMap {
    pub fn ranks(&self) -> usize {
        self.entries.len()
    }

    pub fn slot(&self, rank: usize) -> CoreSlot {
        self.entries[rank]
    }

    pub fn entries(&self) -> &[CoreSlot] {
        &self.entries
    }

    /// Ranks placed on each of `boards` boards.
    pub fn ranks_per_board(&self, boards: usize) -> Vec<u32> {
        let mut load = vec![0u32; boards];
        for s in &self.entries {
            load[s.board] += 1;
        }
        load
    }

    pub fn boards_used(&self) -> usize {
        let mut boards: Vec<usize> = self.entries.iter().map(|s| s.board).collect();
        boards.sort_unstable();
        boards.dedup();
        boards.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlacementError {
    #[error("rank count must be at least 1")]
    NoRanks,
    #[error("{ranks} ranks exceed the cluster's {capacity} cores")]
    OverCapacity { ranks: usize, capacity: usize },
}

pub fn placement(spec: &ClusterSpec, ranks: usize, policy: PlacementPolicy) -> Result<RankMap, PlacementError> {
    if ranks == 0 {
        return Err(PlacementError::NoRanks);
    }
    let capacity = spec.total_cores();
    if ranks > capacity {
        return Err(PlacementError::OverCapacity { ranks, capacity });
    }
    let entries = match policy {
        PlacementPolicy::Block => spec
            .boards
            .iter()
            .enumerate()
            .flat_map(|(board, b)| (0..b.core_count as usize).map(move |core| CoreSlot { board, core }))
            .take(ranks)
            .collect(),
    };
    Ok(RankMap { entries })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PowerFitError {
    #[error("power fit needs samples at two or more distinct core counts")]
    TooFewPoints,
    #[error("power sample {0} is not finite")]
    NonFinite(usize),
    #[error("power samples: {0}")]
    Csv(String),
}

#[derive(Deserialize)]
struct PowerSample {
    active_cores: u32,
    watts: f64,
}

/// Read `active_cores,watts` CSV rows.
pub fn read_power_samples(text: &str) -> Result<Vec<(u32, f64)>, PowerFitError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map(|s: PowerSample| (s.active_cores, s.watts)).map_err(|e| PowerFitError::Csv(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub model: PowerModel,
    /// measured - fitted, in sample order
    pub residuals: Vec<f64>,
    /// The unconstrained slope was negative and has been set to zero.
    pub slope_clamped: bool,
}

impl PowerFit {
    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Least-squares line through (active cores, watts) samples.
pub fn fit_power_model(samples: &[(u32, f64)]) -> Result<PowerFit, PowerFitError> {
    if let Some(i) = samples.iter().position(|(_, w)| !w.is_finite()) {
        return Err(PowerFitError::NonFinite(i));
    }
    let first = samples.first().ok_or(PowerFitError::TooFewPoints)?.0;
    if samples.iter().all(|(k, _)| *k == first) {
        return Err(PowerFitError::TooFewPoints);
    }
    let n = samples.len() as f64;
    let mean_k = samples.iter().map(|(k, _)| *k as f64).sum::<f64>() / n;
    let mean_w = samples.iter().map(|(_, w)| *w).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, w) in samples {
        let dk = *k as f64 - mean_k;
        sxy += dk * (w - mean_w);
        sxx += dk * dk;
    }
    let mut slope = sxy / sxx;
    let mut intercept = mean_w - slope * mean_k;
    let slope_clamped = slope < 0.0;
    if slope_clamped {
        slope = 0.0;
        intercept = mean_w;
    }
    let model = PowerModel { p_idle_w: intercept, p_core_w: slope, p_infra_w: 0.0 };
    let residuals = samples.iter().map(|(k, w)| w - model.board_power(*k)).collect();
    Ok(PowerFit { model, residuals, slope_clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RADXA4: &str = include_str!("../../../data/radxa4.json");

    fn four_by_four() -> ClusterSpec {
        ClusterSpec::radxa(4, PowerModel { p_idle_w: 3.0, p_core_w: 0.2, p_infra_w: 0.0 })
    }

    #[test]
    fn bundled_config_loads() {
        let spec = load_cluster_spec(RADXA4).unwrap();
        assert_eq!(spec.boards.len(), 4);
        assert_eq!(spec.total_cores(), 16);
        assert!(spec.boards.iter().all(|b| b.core_count == 4 && b.core_clock_hz == 1.6e9));
        assert!(spec.boards.iter().all(|b| b.ram_bytes == 2 << 30 && b.nic_bandwidth_bps == 100e6));
        assert_eq!(spec.switch.port_count, 8);
        assert_eq!(spec.nominal_link_bps(), 100e6);
    }

    #[test]
    fn single_board_single_core() {
        let mut spec = four_by_four();
        spec.boards.truncate(1);
        spec.boards[0].core_count = 1;
        let spec = load_cluster_spec(&render(&spec)).unwrap();
        assert_eq!(spec.total_cores(), 1);
    }

    #[test]
    fn duplicate_mac_is_rejected_with_path() {
        let mut spec = four_by_four();
        spec.boards[2].mac_address = spec.boards[0].mac_address.clone();
        let err = load_cluster_spec(&render(&spec)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate MAC") && msg.contains("boards[2].mac"), "{msg}");
    }

    #[test]
    fn too_few_ports() {
        let mut spec = four_by_four();
        spec.switch.port_count = 3;
        let err = load_cluster_spec(&render(&spec)).unwrap_err();
        assert!(err.to_string().starts_with("switch.port_count"), "{err}");
    }

    #[test]
    fn nonpositive_values_are_rejected() {
        let mut spec = four_by_four();
        spec.boards[1].nic_bandwidth_bps = 0.0;
        assert!(load_cluster_spec(&render(&spec)).unwrap_err().to_string().contains("boards[1].nic_bandwidth_bps"));
        let mut spec = four_by_four();
        spec.boards[3].core_clock_hz = -1.0;
        assert!(load_cluster_spec(&render(&spec)).unwrap_err().to_string().contains("boards[3].core_clock_hz"));
        let mut spec = four_by_four();
        spec.switch.port_bandwidth_bps = 0.0;
        assert!(load_cluster_spec(&render(&spec)).is_err());
    }

    #[test]
    fn parse_errors_carry_field_path() {
        let text = RADXA4.replace("\"core_count\": 4", "\"core_count\": \"four\"");
        let err = load_cluster_spec(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Parse { path, .. } if path == "boards[0].core_count"), "{err}");
        assert!(matches!(load_cluster_spec("{"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn block_placement_fills_boards_in_order() {
        let spec = four_by_four();
        let map = placement(&spec, 5, PlacementPolicy::Block).unwrap();
        assert_eq!(map.slot(4), CoreSlot { board: 1, core: 0 });
        let map = placement(&spec, 12, PlacementPolicy::Block).unwrap();
        assert_eq!(map.ranks_per_board(4), vec![4, 4, 4, 0]);
        assert_eq!(
            placement(&spec, 17, PlacementPolicy::Block),
            Err(PlacementError::OverCapacity { ranks: 17, capacity: 16 })
        );
        assert_eq!(placement(&spec, 0, PlacementPolicy::Block), Err(PlacementError::NoRanks));
    }

    #[test]
    fn power_fit_three_measured_points() {
        let fit = fit_power_model(&[(0, 3.02), (1, 3.18), (4, 3.70)]).unwrap();
        // Closed form: slope = Sxy/Sxx = 1.48/(78/9), intercept = 3.3 - slope*5/3.
        let slope = 1.48 / (78.0 / 9.0);
        let intercept = 3.3 - slope * 5.0 / 3.0;
        assert!((fit.model.p_core_w - slope).abs() < 1e-12);
        assert!((fit.model.p_idle_w - intercept).abs() < 1e-12);
        assert!((fit.model.p_idle_w - 3.015).abs() < 0.001);
        assert!((fit.model.p_core_w - 0.171).abs() < 0.001);
        assert!((fit.max_abs_residual() - 0.006).abs() < 0.001);
        assert!((fit.model.board_power(4) - 3.70).abs() < 0.05);
        assert!(!fit.slope_clamped);
    }

    #[test]
    fn power_fit_two_points_is_exact() {
        let fit = fit_power_model(&[(0, 3.02), (4, 3.70)]).unwrap();
        assert!((fit.model.p_core_w - 0.17).abs() < 1e-12);
        assert!(fit.max_abs_residual() < 1e-12);
    }

    #[test]
    fn power_fit_constant_and_degenerate() {
        let fit = fit_power_model(&[(0, 5.0), (1, 5.0)]).unwrap();
        assert_eq!(fit.model.p_core_w, 0.0);
        assert_eq!(fit.model.p_idle_w, 5.0);
        assert_eq!(fit_power_model(&[(2, 5.0), (2, 6.0)]), Err(PowerFitError::TooFewPoints));
        assert_eq!(fit_power_model(&[]), Err(PowerFitError::TooFewPoints));
    }

    #[test]
    fn negative_slope_is_clamped() {
        let fit = fit_power_model(&[(0, 4.0), (4, 3.0)]).unwrap();
        assert!(fit.slope_clamped);
        assert_eq!(fit.model.p_core_w, 0.0);
        assert_eq!(fit.model.p_idle_w, 3.5);
    }

    #[test]
    fn zero_slope_board_power() {
        let m = PowerModel { p_idle_w: 1.0, p_core_w: 0.0, p_infra_w: 0.0 };
        assert_eq!(m.board_power(100), 1.0);
    }

    #[test]
    fn bundled_power_samples() {
        let samples = read_power_samples(include_str!("../../../data/power_samples.csv")).unwrap();
        assert_eq!(samples, vec![(0, 3.02), (1, 3.18), (4, 3.70)]);
        assert!(matches!(read_power_samples("active_cores,watts\nx,1\n"), Err(PowerFitError::Csv(_))));
    }
}

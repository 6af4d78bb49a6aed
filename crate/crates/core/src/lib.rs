//! Cluster model, NPB EP/FT kernels over an in-process message layer, a
//! calibrated performance and energy model, and measured-data analysis for
//! small Beowulf clusters of single-board computers.

pub mod analysis;
pub mod cluster;
pub mod comm;
pub mod constants;
pub mod kernels;
pub mod record;
pub mod sim;

pub use analysis::{
    calibrate, compare, percent_decrease, scaling_metrics, work_conservation, AnalysisError, Calibration, Comparison,
    MeasuredRow, MeasuredTable, Prediction,
};
pub use cluster::{
    fit_power_model, load_cluster_spec, placement, read_power_samples, render, BoardSpec, ClusterSpec, ConfigError,
    PlacementPolicy, PowerModel, RankMap, SwitchSpec, Topology,
};
pub use comm::{spawn_ranks, CommError, Communicator, JobError};
pub use constants::Benchmark;
pub use kernels::{ep_run, ft_run, EpParams, EpResult, FtParams, FtResult, KernelError};
pub use record::{RunRecord, Source, Verification};
pub use sim::{ep_profile, ft_profile, predict, predict_energy, MachineModel, PredictedRun, SimError, WorkloadProfile};

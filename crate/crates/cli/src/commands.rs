use std::fmt::Display;
use std::path::Path;

use beowulf_core::analysis::{self, AnalysisError, Calibration, MeasuredTable};
use beowulf_core::cluster::{
    fit_power_model, load_cluster_spec, placement, read_power_samples, ClusterSpec, PlacementPolicy, PowerFit,
};
use beowulf_core::kernels::{ep_run, ft_run, EpParams, FtParams};
use beowulf_core::record::{self, measured_records, RunRecord, Source, Verification};
use beowulf_core::sim::{ep_profile, ft_profile, predict, MachineModel};
use beowulf_core::{spawn_ranks, Benchmark};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::{CalibrateArgs, CompareArgs, Kernel, ReportArgs, ReportFormat, RunArgs, SimulateArgs};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable/invalid input files.
    #[error("{0}")]
    Input(String),
    /// Inputs were fine but a quantitative check failed.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Check(_) => 2,
        }
    }
}

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<ClusterSpec, CliError> {
    load_cluster_spec(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_table(path: &Path) -> Result<MeasuredTable, CliError> {
    MeasuredTable::from_path(path).map_err(input)
}

/// A `.csv` path is a measured table, anything else a JSON record file.
fn load_records(path: &Path) -> Result<Vec<RunRecord>, CliError> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return Ok(measured_records(&load_table(path)?));
    }
    record::records_from_json(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn emit(rec: &RunRecord, out: Option<&Path>) -> Result<(), CliError> {
    let text = rec.to_json();
    println!("{text}");
    match out {
        Some(p) => write(p, &(text + "\n")),
        None => Ok(()),
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    let ranks = a.ranks as usize;
    let (benchmark, verification, elapsed_s, mops, payload) = match a.kernel {
        Kernel::Ep => {
            if a.grid.is_some() || a.iters.is_some() {
                return Err(input("--grid and --iters apply to ft only"));
            }
            let mut params = EpParams::for_class(&a.class)
                .ok_or_else(|| input(format!("unknown EP class {:?} (expected S, W, A, B or C)", a.class)))?;
            if let Some(seed) = a.seed {
                params.seed = seed;
            }
            params.validate().map_err(input)?;
            let run = spawn_ranks(ranks, |c| ep_run(&params, c)).map_err(input)?.swap_remove(0);
            let v = record::verify_ep(&params, &run.result);
            (Benchmark::Ep, v, run.elapsed_s, run.mops, json!({ "params": params, "result": run.result }))
        }
        Kernel::Ft => {
            if a.seed.is_some() {
                return Err(input("--seed applies to ep only"));
            }
            let params = if a.class.eq_ignore_ascii_case("custom") {
                match (a.grid, a.iters) {
                    (Some(n), Some(iters)) => FtParams::custom(n, iters),
                    _ => return Err(input("--class custom needs --grid and --iters")),
                }
            } else {
                if a.grid.is_some() || a.iters.is_some() {
                    return Err(input("--grid and --iters need --class custom"));
                }
                FtParams::for_class(&a.class)
                    .ok_or_else(|| input(format!("unknown FT class {:?} (expected S, W, A, B or custom)", a.class)))?
            };
            let run = spawn_ranks(ranks, |c| ft_run(&params, c)).map_err(input)?.swap_remove(0);
            let v = record::verify_ft(&params, &run.result);
            (Benchmark::Ft, v, run.elapsed_s, run.mops, json!({ "params": params, "result": run.result }))
        }
    };
    let rec = RunRecord {
        source: Source::Native,
        benchmark,
        class: a.class.clone(),
        ranks: a.ranks,
        elapsed_s,
        mops,
        verification: Some(verification),
        energy_j: None,
        timestamp: Some(timestamp()),
        payload,
    };
    emit(&rec, a.out.as_deref())?;
    eprintln!(
        "{benchmark}.{} on {} ranks: {elapsed_s:.3} s, {mops:.2} Mop/s, verification {verification:?}",
        a.class, a.ranks
    );
    if verification == Verification::Fail {
        return Err(CliError::Check("verification failed".into()));
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let spec = load_spec(&a.config)?;
    let model: MachineModel =
        serde_json::from_str(&read(&a.model)?).map_err(|e| CliError::Input(format!("{}: {e}", a.model.display())))?;
    let ranks = a.cores as usize;
    let profile = match a.benchmark {
        Benchmark::Ep => {
            let params =
                EpParams::for_class(&a.class).ok_or_else(|| input(format!("unknown EP class {:?}", a.class)))?;
            ep_profile(&params, ranks)
        }
        Benchmark::Ft => {
            let params =
                FtParams::for_class(&a.class).ok_or_else(|| input(format!("unknown FT class {:?}", a.class)))?;
            ft_profile(&params, ranks)
        }
    }
    .map_err(input)?;
    let map = placement(&spec, ranks, PlacementPolicy::Block).map_err(input)?;
    let run = predict(&profile, &spec, &model, &map).map_err(input)?;
    let rec = RunRecord::from_prediction(&run, &spec.power, &spec);
    emit(&rec, a.out.as_deref())?;
    eprintln!(
        "{}.{} on {} cores: {:.2} s, {:.1} J",
        rec.benchmark,
        rec.class,
        rec.ranks,
        rec.elapsed_s,
        rec.energy_j.unwrap_or_default()
    );
    Ok(())
}

/// Model file: the calibration plus the optional board power fit.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power_fit: Option<PowerFit>,
}

pub fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let spec = load_spec(&a.config)?;
    let mut table = MeasuredTable::default();
    for path in &a.measured {
        table = table.merge(&load_table(path)?).map_err(input)?;
    }
    let calibration = analysis::calibrate(&table, &spec).map_err(|e| match e {
        AnalysisError::BandwidthOutOfRange { .. } | AnalysisError::NonpositiveResidual { .. } => {
            CliError::Check(e.to_string())
        }
        other => input(other),
    })?;
    let power_fit = match &a.power {
        Some(p) => Some(fit_power_model(&read_power_samples(&read(p)?).map_err(input)?).map_err(input)?),
        None => None,
    };

    let c = &calibration.compute;
    println!("core_rate_mops    {:.4}", c.core_rate_mops);
    println!("eta({})            {:.4}", c.full_board_cores, c.eta_full_board);
    for w in &c.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(bw) = &calibration.bandwidth {
        println!("ft_rate_mops      {:.4}", bw.benchmark_rate_mops);
        println!(
            "link_bandwidth    {:.2} Mbit/s ({:.1}% of nominal; {:.2} s compute, {:.2} s residual over {:.0} uplink bytes)",
            bw.link_bandwidth_eff_bps / 1e6,
            100.0 * bw.link_bandwidth_eff_bps / bw.nominal_bps,
            bw.compute_time_s,
            bw.residual_s,
            bw.uplink_bytes
        );
    }
    for (group, w) in &calibration.work_conservation {
        println!(
            "work {group:<8}    mean {:.2} Mop, max deviation {:.3}%",
            w.mean_total_mop,
            100.0 * w.max_relative_deviation
        );
    }
    if let Some(f) = &power_fit {
        println!(
            "power             {:.4} W + {:.4} W/core, residuals {:?}",
            f.model.p_idle_w, f.model.p_core_w, f.residuals
        );
    }

    let file = ModelFile { calibration, power_fit };
    write(&a.out, &(serde_json::to_string_pretty(&file).expect("model file is serializable") + "\n"))
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(input("--tolerance must be nonnegative"));
    }
    let mut predictions = Vec::new();
    for path in &a.predicted {
        predictions.extend(load_records(path)?.iter().map(RunRecord::to_prediction));
    }
    let measured = load_table(&a.measured)?;
    let cmp = analysis::compare(&predictions, &measured, a.tolerance).map_err(input)?;
    println!("benchmark,class,cores,predicted_s,measured_s,relative_error");
    for r in &cmp.rows {
        println!(
            "{},{},{},{:.4},{:.4},{:.6}",
            r.benchmark, r.class, r.cores, r.predicted_s, r.measured_s, r.relative_error
        );
    }
    for p in &cmp.unmatched {
        eprintln!("note: no measured row for {}.{} at {} cores", p.benchmark, p.class, p.cores);
    }
    eprintln!("max relative error {:.4} (tolerance {})", cmp.max_error, cmp.tolerance);
    if cmp.pass {
        Ok(())
    } else {
        Err(CliError::Check(format!("max relative error {:.4} exceeds tolerance {}", cmp.max_error, cmp.tolerance)))
    }
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &a.records {
        records.extend(load_records(path)?);
    }
    if records.is_empty() {
        return Err(input("no records to report"));
    }
    let text = match a.format {
        ReportFormat::Csv => record::report_csv(&records),
        ReportFormat::Plotdata => record::report_plotdata(&records),
    };
    write(&a.out, &text)
}

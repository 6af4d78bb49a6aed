//! Run records shared by native kernel runs and model predictions, and the
//! CSV / plot-data reports built from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{MeasuredRow, MeasuredTable, Prediction};
use crate::cluster::{ClusterSpec, PowerModel};
use crate::constants::{
    ep_reference_sums, ft_reference_checksums, Benchmark, EP_SEED, EP_VERIFY_EPSILON, FT_VERIFY_EPSILON,
};
use crate::kernels::{EpParams, EpResult, FtParams, FtResult};
use crate::sim::{predict_energy, PredictedRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Native,
    Model,
    Measured,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Native => "native",
            Source::Model => "model",
            Source::Measured => "measured",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Pass,
    Fail,
    NotPerformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub source: Source,
    pub benchmark: Benchmark,
    pub class: String,
    pub ranks: u32,
    pub elapsed_s: f64,
    pub mops: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

impl RunRecord {
    pub fn from_prediction(run: &PredictedRun, power: &PowerModel, spec: &ClusterSpec) -> Self {
        RunRecord {
            source: Source::Model,
            benchmark: run.benchmark,
            class: run.class.clone(),
            ranks: run.ranks as u32,
            elapsed_s: run.total_time_s,
            mops: run.mops(),
            verification: None,
            energy_j: Some(predict_energy(run, power, spec)),
            timestamp: None,
            payload: serde_json::to_value(run).expect("prediction is serializable"),
        }
    }

    pub fn from_measured(row: &MeasuredRow) -> Self {
        RunRecord {
            source: Source::Measured,
            benchmark: row.benchmark,
            class: row.class.clone(),
            ranks: row.cores,
            elapsed_s: row.time_s,
            mops: row.mops,
            verification: None,
            energy_j: None,
            timestamp: None,
            payload: Value::Null,
        }
    }

    pub fn to_prediction(&self) -> Prediction {
        Prediction { benchmark: self.benchmark, class: self.class.clone(), cores: self.ranks, time_s: self.elapsed_s }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record is serializable")
    }
}

/// Parse a JSON document holding one record or an array of records.
pub fn records_from_json(text: &str) -> Result<Vec<RunRecord>, serde_json::Error> {
    if text.trim_start().starts_with('[') {
        serde_json::from_str(text)
    } else {
        serde_json::from_str(text).map(|r| vec![r])
    }
}

pub fn measured_records(table: &MeasuredTable) -> Vec<RunRecord> {
    table.rows().iter().map(RunRecord::from_measured).collect()
}

fn close(a: f64, b: f64, eps: f64) -> bool {
    ((a - b) / b).abs() <= eps
}

/// Check EP sums against the reference values; only the default seed has
/// references.
pub fn verify_ep(params: &EpParams, result: &EpResult) -> Verification {
    if params.seed != EP_SEED {
        return Verification::NotPerformed;
    }
    match ep_reference_sums(params.log2_pairs) {
        Some((sx, sy)) if close(result.sum_x, sx, EP_VERIFY_EPSILON) && close(result.sum_y, sy, EP_VERIFY_EPSILON) => {
            Verification::Pass
        }
        Some(_) => Verification::Fail,
        None => Verification::NotPerformed,
    }
}

pub fn verify_ft(params: &FtParams, result: &FtResult) -> Verification {
    let d = params.dims;
    let Some(reference) = ft_reference_checksums(d.nx, d.ny, d.nz, params.iterations) else {
        return Verification::NotPerformed;
    };
    let ok = result.checksums.len() == reference.len()
        && result
            .checksums
            .iter()
            .zip(reference)
            .all(|(c, &(re, im))| close(c.re, re, FT_VERIFY_EPSILON) && close(c.im, im, FT_VERIFY_EPSILON));
    if ok {
        Verification::Pass
    } else {
        Verification::Fail
    }
}

fn sorted(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().collect();
    v.sort_by(|a, b| {
        (a.benchmark, &a.class, a.ranks, a.source)
            .cmp(&(b.benchmark, &b.class, b.ranks, b.source))
            .then(a.elapsed_s.total_cmp(&b.elapsed_s))
    });
    v
}

/// `benchmark,class,cores,time_s,mops,source`, ordered by benchmark, class
/// and cores.
pub fn report_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("benchmark,class,cores,time_s,mops,source\n");
    for r in sorted(records) {
        let _ =
            writeln!(out, "{},{},{},{},{},{}", r.benchmark, r.class, r.ranks, r.elapsed_s, r.mops, r.source.as_str());
    }
    out
}

/// One whitespace-separated block per benchmark/class, blocks separated by
/// two blank lines (gnuplot `index` convention).
pub fn report_plotdata(records: &[RunRecord]) -> String {
    let mut out = String::new();
    let mut current: Option<(Benchmark, &str)> = None;
    for r in sorted(records) {
        let key = (r.benchmark, r.class.as_str());
        if current != Some(key) {
            if current.is_some() {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# {}.{}\n# cores time_s mops source", r.benchmark, r.class);
            current = Some(key);
        }
        let _ = writeln!(out, "{} {} {} {}", r.ranks, r.elapsed_s, r.mops, r.source.as_str());
    }
    out
}

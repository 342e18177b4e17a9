//! Run reports and CSV outputs.
//!
//! Stages and tasks are 0-based: stage `l` is the state after training task
//! `l`, and `a[l][j]` is the accuracy on task `j` at that point. CSV values are
//! percentages; the JSON report keeps fractions.

use std::fs;
use std::io::Write;
use std::path::Path;

use htil_core::{backward_transfer, forgetting_measure, intransigence, AccuracyMatrix, StageLog};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
pub const RESULTS_HEADER: &str = "stage,task,metric,value,seed,kp_enabled";

/// How the numbers in a report are to be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    pub matrix_index: String,
    pub forgetting_peak: String,
    pub task_means: String,
    pub intransigence_reference: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            matrix_index: "matrix[l][j] = accuracy on task j after training through task l, both 0-based".into(),
            forgetting_peak: "max over stages j..=k of a[i][j], current stage included".into(),
            task_means: "overall and previous are unweighted means over tasks".into(),
            intransigence_reference: "a*_k = single-head accuracy of a fresh model trained on the union of tasks 0..=k"
                .into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
}

/// Derived views of one matrix row. FM, BWT and IM use the 1-based stage
/// count `k = stage + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub overall: f64,
    pub previous: Option<f64>,
    pub last: f64,
    pub fm: Option<f64>,
    pub bwt: Option<f64>,
    pub im: Option<f64>,
}

pub fn stage_metrics(m: &AccuracyMatrix, joint: Option<&[f64]>) -> Vec<StageMetrics> {
    (0..m.tasks())
        .map(|l| {
            let k = l + 1;
            StageMetrics {
                stage: l,
                overall: m.overall(l).unwrap(),
                previous: m.previous(l),
                last: m.last(l).unwrap(),
                fm: forgetting_measure(m, k).ok(),
                bwt: backward_transfer(m, k).ok(),
                im: intransigence(m, k, joint.and_then(|j| j.get(l).copied())).ok(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub hebbian_batches: usize,
    pub gated_batches: Vec<usize>,
    pub protected: Vec<usize>,
    pub head_initial_loss: f64,
    pub head_final_loss: f64,
}

impl From<&StageLog> for StageSummary {
    fn from(log: &StageLog) -> Self {
        Self {
            hebbian_batches: log.hebbian_batches,
            gated_batches: log.gated_batches.clone(),
            protected: log.protected.clone(),
            head_initial_loss: log.head.initial_loss,
            head_final_loss: log.head.final_loss(),
        }
    }
}

/// One task-incremental run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilRecord {
    pub seed: u64,
    pub kp_enabled: bool,
    pub tasks: Vec<Vec<usize>>,
    pub matrix: Vec<Vec<f64>>,
    pub stages: Vec<StageMetrics>,
    pub logs: Vec<StageSummary>,
    pub wall_clock_seconds: f64,
    pub error: Option<String>,
}

impl TilRecord {
    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        Ok(AccuracyMatrix::from_rows(self.matrix.clone())?)
    }
}

/// Joint reference accuracies `a*_k` for every stage of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub seed: u64,
    pub accuracy: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonHeadRecord {
    pub seed: u64,
    pub kp_enabled: bool,
    pub classes: usize,
    pub accuracy: f64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub software_version: String,
    pub mode: String,
    pub profile: String,
    pub config_hash: String,
    pub config: Config,
    pub conventions: Conventions,
    pub status: Status,
    pub til: Vec<TilRecord>,
    pub joint: Vec<JointRecord>,
    pub common_head: Vec<CommonHeadRecord>,
    pub wall_clock_seconds: f64,
}

/// SHA-256 of the config's canonical JSON.
pub fn config_hash(config: &Config) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunReport {
    pub fn new(mode: &str, config: &Config) -> Self {
        Self {
            format_version: REPORT_VERSION,
            software_version: env!("CARGO_PKG_VERSION").into(),
            mode: mode.into(),
            profile: config.profile.clone(),
            config_hash: config_hash(config),
            config: config.clone(),
            conventions: Conventions::default(),
            status: Status::Complete,
            til: Vec::new(),
            joint: Vec::new(),
            common_head: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn joint_for(&self, seed: u64) -> Option<&[f64]> {
        self.joint
            .iter()
            .find(|j| j.seed == seed && j.error.is_none())
            .map(|j| j.accuracy.as_slice())
    }

    /// Recomputes stage metrics from the stored matrices and joint references.
    pub fn refresh_metrics(&mut self) -> Result<()> {
        let joints: Vec<(u64, Option<Vec<f64>>)> =
            self.til.iter().map(|t| (t.seed, self.joint_for(t.seed).map(<[f64]>::to_vec))).collect();
        for (t, (_, joint)) in self.til.iter_mut().zip(joints) {
            t.stages = stage_metrics(&t.accuracy_matrix()?, joint.as_deref());
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }

    /// Long-format results in `stage,task,metric,value,seed,kp_enabled`.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        let mut row = |stage: Option<usize>, task: Option<usize>, metric: &str, value: f64, seed: u64, kp: &str| {
            let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!("{},{},{metric},{},{seed},{kp}\n", opt(stage), opt(task), pct(value)));
        };
        for t in &self.til {
            let kp = t.kp_enabled.to_string();
            for (l, r) in t.matrix.iter().enumerate() {
                for (j, &a) in r.iter().enumerate() {
                    row(Some(l), Some(j), "accuracy", a, t.seed, &kp);
                }
            }
            for s in &t.stages {
                row(Some(s.stage), None, "overall", s.overall, t.seed, &kp);
                if let Some(v) = s.previous {
                    row(Some(s.stage), None, "previous", v, t.seed, &kp);
                }
                row(Some(s.stage), Some(s.stage), "last", s.last, t.seed, &kp);
                for (name, v) in [("fm", s.fm), ("bwt", s.bwt), ("im", s.im)] {
                    if let Some(v) = v {
                        row(Some(s.stage), None, name, v, t.seed, &kp);
                    }
                }
            }
        }
        for j in &self.joint {
            for (l, &a) in j.accuracy.iter().enumerate() {
                row(Some(l), None, "joint", a, j.seed, "");
            }
        }
        for c in &self.common_head {
            row(None, None, "common_head", c.accuracy, c.seed, &c.kp_enabled.to_string());
        }
        out
    }

    fn arm(&self, kp: bool) -> Vec<&TilRecord> {
        self.til
            .iter()
            .filter(|t| t.kp_enabled == kp && t.error.is_none())
            .collect()
    }

    fn stage_count(&self) -> usize {
        self.config.tasks.sizes.len()
    }

    /// Seed means of a per-stage quantity; `None` when no seed has it.
    pub fn mean_by_stage(&self, kp: bool, f: impl Fn(&StageMetrics) -> Option<f64>) -> Vec<Option<f64>> {
        let arm = self.arm(kp);
        (0..self.stage_count())
            .map(|l| mean(arm.iter().filter_map(|t| t.stages.get(l).and_then(&f))))
            .collect()
    }

    /// Seed-averaged accuracy per stage: `method,kp,stage,overall,previous,last`.
    pub fn table1_csv(&self) -> String {
        let mut out = String::from("method,kp,stage,overall,previous,last\n");
        for kp in [false, true] {
            let overall = self.mean_by_stage(kp, |s| Some(s.overall));
            let previous = self.mean_by_stage(kp, |s| s.previous);
            let last = self.mean_by_stage(kp, |s| Some(s.last));
            for l in 0..self.stage_count() {
                if overall[l].is_none() {
                    continue;
                }
                out.push_str(&format!(
                    "til,{kp},{l},{},{},{}\n",
                    opt_pct(overall[l]),
                    opt_pct(previous[l]),
                    opt_pct(last[l])
                ));
            }
        }
        for l in 0..self.stage_count() {
            let joint = mean(self.joint.iter().filter(|j| j.error.is_none()).filter_map(|j| j.accuracy.get(l).copied()));
            if joint.is_some() {
                out.push_str(&format!("joint,,{l},{},,\n", opt_pct(joint)));
            }
        }
        for kp in [false, true] {
            let common = mean(self.common_head.iter().filter(|c| c.kp_enabled == kp).map(|c| c.accuracy));
            if common.is_some() {
                out.push_str(&format!("common_head,{kp},{},{},,\n", self.stage_count() - 1, opt_pct(common)));
            }
        }
        out
    }

    /// Seed-averaged continual metrics: `metric,kp,stage,value` for stages 1 on.
    pub fn table2_csv(&self) -> String {
        let mut out = String::from("metric,kp,stage,value\n");
        type Pick = fn(&StageMetrics) -> Option<f64>;
        let metrics: [(&str, Pick); 3] = [("bwt", |s| s.bwt), ("im", |s| s.im), ("fm", |s| s.fm)];
        for (name, f) in metrics {
            for kp in [false, true] {
                for (l, v) in self.mean_by_stage(kp, f).into_iter().enumerate().skip(1) {
                    if v.is_some() {
                        out.push_str(&format!("{name},{kp},{l},{}\n", opt_pct(v)));
                    }
                }
            }
        }
        out
    }

    /// Per-task accuracy after the final stage: `task,kp,mean,std,seeds`.
    pub fn fig2_csv(&self) -> String {
        let mut out = String::from("task,kp,mean,std,seeds\n");
        let last = self.stage_count() - 1;
        for kp in [false, true] {
            let finals: Vec<&Vec<f64>> = self
                .arm(kp)
                .into_iter()
                .filter_map(|t| t.matrix.get(last))
                .collect();
            if finals.is_empty() {
                continue;
            }
            for j in 0..=last {
                let values: Vec<f64> = finals.iter().map(|r| r[j]).collect();
                let m = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
                out.push_str(&format!("{j},{kp},{},{},{}\n", pct(m), pct(var.sqrt()), values.len()));
            }
        }
        out
    }

    /// Writes the JSON report and every CSV view into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_json(&dir.join("report.json"))?;
        write_file(&dir.join("results.csv"), self.results_csv().as_bytes())?;
        if !self.til.is_empty() {
            write_file(&dir.join("table1.csv"), self.table1_csv().as_bytes())?;
            write_file(&dir.join("table2.csv"), self.table2_csv().as_bytes())?;
            write_file(&dir.join("fig2.csv"), self.fig2_csv().as_bytes())?;
        }
        Ok(())
    }
}

pub fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, sum) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n > 0).then(|| sum / n as f64)
}

fn pct(v: f64) -> String {
    format!("{:.4}", 100.0 * v)
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or(String::new(), pct)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

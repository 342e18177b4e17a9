//! Experiment modes over a set of seeds.
//!
//! Seeds run as independent rayon jobs; each seed is sequential. Results come
//! back in seed order regardless of scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use htil_core::{run_common_head, run_joint, split_tasks, TaskData, TaskSequence, TilRun};
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::Result;
use crate::report::{stage_metrics, CommonHeadRecord, JointRecord, RunReport, Status, StageSummary, TilRecord};

pub fn task_sequence(config: &Config, seed: u64) -> Result<TaskSequence> {
    Ok(split_tasks(config.data.num_classes, &config.tasks.sizes, seed)?)
}

pub fn checkpoint_path(dir: &Path, seed: u64, kp: bool) -> PathBuf {
    dir.join(format!("seed-{seed}-kp-{}.ckpt", if kp { "on" } else { "off" }))
}

/// Runs (or continues) one task-incremental run, checkpointing after every
/// stage when `checkpoints` is set. A failed stage yields a record with the
/// rows finished so far and the error text.
pub fn til_run(
    config: &Config,
    data: &TaskData<'_>,
    mut run: TilRun,
    checkpoints: Option<&Path>,
) -> (TilRecord, TilRun) {
    let start = Instant::now();
    let (seed, kp) = (run.config().seed, run.config().kp_enabled);
    let mut error = None;
    while !run.is_done() {
        let task = run.next_task();
        let result = run.step(data).map_err(crate::error::Error::from).and_then(|()| match checkpoints {
            Some(dir) => Checkpoint {
                config: config.clone(),
                seed,
                kp_enabled: kp,
                run: run.clone(),
            }
            .save(&checkpoint_path(dir, seed, kp)),
            None => Ok(()),
        });
        if let Err(e) = result {
            error = Some(format!("task {task}: {e}"));
            break;
        }
    }
    let record = TilRecord {
        seed,
        kp_enabled: kp,
        tasks: run.tasks().tasks().to_vec(),
        matrix: run.matrix().rows().to_vec(),
        stages: stage_metrics(run.matrix(), None),
        logs: run.logs().iter().map(StageSummary::from).collect(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        error,
    };
    (record, run)
}

pub fn til_seed(
    config: &Config,
    data: &TaskData<'_>,
    seed: u64,
    kp: bool,
    checkpoints: Option<&Path>,
) -> Result<(TilRecord, TilRun)> {
    let run = TilRun::new(config.harness(seed, kp), task_sequence(config, seed)?)?;
    Ok(til_run(config, data, run, checkpoints))
}

/// `a*_k` for every stage: a fresh model trained on the union of tasks `0..=k`.
pub fn joint_seed(config: &Config, data: &TaskData<'_>, seed: u64) -> Result<JointRecord> {
    let start = Instant::now();
    let tasks = task_sequence(config, seed)?;
    let harness = config.harness(seed, false);
    let mut accuracy = Vec::with_capacity(tasks.len());
    let mut error = None;
    for k in 0..tasks.len() {
        match run_joint(&harness, &tasks.union_through(k), data) {
            Ok(a) => accuracy.push(a),
            Err(e) => {
                error = Some(format!("stage {k}: {e}"));
                break;
            }
        }
    }
    Ok(JointRecord {
        seed,
        accuracy,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        error,
    })
}

/// A new head over every class seen by a finished run, on its frozen extractor.
pub fn common_head(config: &Config, data: &TaskData<'_>, run: &TilRun) -> Result<CommonHeadRecord> {
    let start = Instant::now();
    let classes = run.tasks().union_through(run.tasks().len() - 1);
    let harness = config.harness(run.config().seed, run.config().kp_enabled);
    let accuracy = run_common_head(&harness, run.extractor(), &classes, data)?;
    Ok(CommonHeadRecord {
        seed: run.config().seed,
        kp_enabled: run.config().kp_enabled,
        classes: classes.len(),
        accuracy,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

fn finish(report: &mut RunReport, start: Instant) -> Result<()> {
    let partial = report.til.iter().any(|t| t.error.is_some()) || report.joint.iter().any(|j| j.error.is_some());
    report.status = if partial { Status::Partial } else { Status::Complete };
    report.refresh_metrics()?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(())
}

pub fn til_mode(
    config: &Config,
    dataset: &Dataset,
    seeds: &[u64],
    kp: bool,
    with_joint: bool,
    checkpoints: Option<&Path>,
) -> Result<RunReport> {
    let start = Instant::now();
    let data = dataset.task_data();
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let (record, _) = til_seed(config, &data, seed, kp, checkpoints)?;
            let joint = if with_joint {
                Some(joint_seed(config, &data, seed)?)
            } else {
                None
            };
            Ok((record, joint))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = RunReport::new("til", config);
    for (record, joint) in results {
        report.til.push(record);
        report.joint.extend(joint);
    }
    finish(&mut report, start)?;
    Ok(report)
}

/// Continues a checkpointed run to the end.
pub fn resume_mode(checkpoint: Checkpoint, dataset: &Dataset, checkpoints: Option<&Path>) -> Result<RunReport> {
    let start = Instant::now();
    let (record, _) = til_run(&checkpoint.config, &dataset.task_data(), checkpoint.run, checkpoints);
    let mut report = RunReport::new("til", &checkpoint.config);
    report.til.push(record);
    finish(&mut report, start)?;
    Ok(report)
}

pub fn joint_mode(config: &Config, dataset: &Dataset, seeds: &[u64]) -> Result<RunReport> {
    let start = Instant::now();
    let data = dataset.task_data();
    let joint = seeds
        .par_iter()
        .map(|&seed| joint_seed(config, &data, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut report = RunReport::new("joint", config);
    report.joint = joint;
    finish(&mut report, start)?;
    Ok(report)
}

pub fn common_head_mode(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<RunReport> {
    let start = Instant::now();
    let record = common_head(&checkpoint.config, &dataset.task_data(), &checkpoint.run)?;
    let mut report = RunReport::new("common-head", &checkpoint.config);
    report.common_head.push(record);
    finish(&mut report, start)?;
    Ok(report)
}

/// KP off and on over the same seeds and task splits, plus joint references
/// and a common head on the KP extractor.
pub fn compare_mode(config: &Config, dataset: &Dataset, seeds: &[u64]) -> Result<RunReport> {
    let start = Instant::now();
    let data = dataset.task_data();
    let jobs: Vec<(u64, Option<bool>)> = seeds
        .iter()
        .flat_map(|&s| [(s, None), (s, Some(false)), (s, Some(true))])
        .collect();
    enum Done {
        Joint(JointRecord),
        Til(TilRecord, Option<CommonHeadRecord>),
    }
    let done = jobs
        .par_iter()
        .map(|&(seed, arm)| match arm {
            None => Ok(Done::Joint(joint_seed(config, &data, seed)?)),
            Some(kp) => {
                let (record, run) = til_seed(config, &data, seed, kp, None)?;
                let head = if kp && run.is_done() {
                    Some(common_head(config, &data, &run)?)
                } else {
                    None
                };
                Ok(Done::Til(record, head))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = RunReport::new("compare", config);
    for d in done {
        match d {
            Done::Joint(j) => report.joint.push(j),
            Done::Til(t, head) => {
                report.til.push(t);
                report.common_head.extend(head);
            }
        }
    }
    finish(&mut report, start)?;
    Ok(report)
}

//! Task-incremental protocol and its reference runs.
//!
//! Each stage of a task-incremental run does, in order:
//!
//! 1. one unsupervised Hebbian epoch over the stage's training clips, gated by
//!    the plasticity ledgers from stage 1 on when kernel plasticity is enabled;
//! 2. finalization of the ledgers (thresholds and protected kernels);
//! 3. training of a fresh head for the stage's classes on frozen features;
//! 4. evaluation of every head learned so far on its own task's test clips,
//!    which fills one row of the accuracy matrix.
//!
//! Every random draw comes from a stream keyed by the run seed and stage, so
//! a joint run over the first task's classes reproduces stage 0 exactly.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::ClipRecord;
use crate::error::{Error, Result};
use crate::extractor::{ArchitectureConfig, FeatureExtractor};
use crate::heads::{HeadStore, HeadTrainConfig, LinearHead, TrainingLog};
use crate::metrics::AccuracyMatrix;
use crate::plasticity::{PlasticityConfig, PlasticityLedger};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Clips per forward pass when extracting features.
const FEATURE_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub arch: ArchitectureConfig,
    pub plasticity: PlasticityConfig,
    pub kp_enabled: bool,
    /// Clips per Hebbian batch.
    pub hebbian_batch_size: usize,
    pub head: HeadTrainConfig,
    pub seed: u64,
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.hebbian.validate()?;
        self.plasticity.validate()?;
        self.head.validate()?;
        if self.hebbian_batch_size < 2 {
            return Err(Error::InvalidArgument(
                "hebbian batch size must be at least 2 for batch statistics".into(),
            ));
        }
        if self.arch.layers.is_empty() {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        }
        Ok(())
    }
}

/// Ordered, pairwise disjoint class subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSequence {
    tasks: Vec<Vec<usize>>,
    seed: u64,
}

impl TaskSequence {
    pub fn new(tasks: Vec<Vec<usize>>, seed: u64) -> Result<Self> {
        if tasks.is_empty() || tasks.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidArgument("every task needs at least one class".into()));
        }
        let mut all: Vec<usize> = tasks.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("task class sets overlap".into()));
        }
        Ok(Self { tasks, seed })
    }

    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Classes of tasks `0..=t`, in task order.
    pub fn union_through(&self, t: usize) -> Vec<usize> {
        self.tasks[..=t.min(self.tasks.len() - 1)].iter().flatten().copied().collect()
    }
}

/// Seeded shuffle of `0..num_classes` cut into consecutive chunks of `sizes`.
pub fn split_tasks(num_classes: usize, sizes: &[usize], seed: u64) -> Result<TaskSequence> {
    let total: usize = sizes.iter().sum();
    if total > num_classes {
        return Err(Error::InvalidArgument(alloc::format!(
            "task sizes need {total} classes but only {num_classes} exist"
        )));
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut stream(seed, Stream::TaskSplit));
    let mut rest = classes.as_slice();
    let mut tasks = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (head, tail) = rest.split_at(n);
        tasks.push(head.to_vec());
        rest = tail;
    }
    TaskSequence::new(tasks, seed)
}

/// Records with their train/test index lists.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub records: &'a [ClipRecord],
    pub train: &'a [usize],
    pub test: &'a [usize],
}

impl<'a> TaskData<'a> {
    /// `(record index, local label)` for the records of `classes`, where the
    /// local label is the class's position in `classes`.
    pub fn labelled(&self, indices: &[usize], classes: &[usize]) -> Vec<(usize, usize)> {
        indices
            .iter()
            .filter_map(|&i| {
                let class = self.records[i].class;
                classes.iter().position(|&c| c == class).map(|label| (i, label))
            })
            .collect()
    }

    fn input_hw(&self) -> Result<(usize, usize)> {
        let r = self.records.first().ok_or(Error::EmptyDataset("records"))?;
        match r.features.shape() {
            &[_, h, w] => Ok((h, w)),
            _ => Err(Error::dim("clip features", "expected [channels, mels, frames]")),
        }
    }

    pub fn batch(&self, indices: impl Iterator<Item = usize>) -> Result<Tensor> {
        let items: Vec<&Tensor> = indices.map(|i| &self.records[i].features).collect();
        Tensor::stack(&items)
    }
}

/// What happened during one stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageLog {
    pub task: usize,
    pub hebbian_batches: usize,
    /// Per block, batches in which the gating condition fired.
    pub gated_batches: Vec<usize>,
    /// Per block, protected kernel count after the stage.
    pub protected: Vec<usize>,
    pub head: TrainingLog,
}

fn hebbian_epoch(
    extractor: &mut FeatureExtractor,
    ledgers: &mut [PlasticityLedger],
    data: &TaskData<'_>,
    samples: &[(usize, usize)],
    config: &HarnessConfig,
    stage: usize,
    modulate: bool,
) -> Result<StageLog> {
    let mut order: Vec<usize> = samples.iter().map(|&(i, _)| i).collect();
    order.shuffle(&mut stream(config.seed, Stream::HebbianOrder(stage)));

    for (ledger, block) in ledgers.iter_mut().zip(extractor.blocks()) {
        ledger.begin_task(block.conv.weights())?;
    }
    let mut log = StageLog {
        task: stage,
        gated_batches: vec![0; ledgers.len()],
        ..StageLog::default()
    };
    // a trailing single clip cannot provide batch statistics
    for chunk in order.chunks(config.hebbian_batch_size).filter(|c| c.len() >= 2) {
        let batch = data.batch(chunk.iter().copied())?;
        let fired = extractor.train_batch(&batch, Some(ledgers), modulate)?;
        for (count, f) in log.gated_batches.iter_mut().zip(fired) {
            *count += f as usize;
        }
        log.hebbian_batches += 1;
        if ledgers[0].pending_batches() >= config.plasticity.interval {
            close_intervals(extractor, ledgers)?;
        }
    }
    if ledgers[0].pending_batches() > 0 {
        close_intervals(extractor, ledgers)?;
    }
    for ledger in ledgers.iter_mut() {
        ledger.finalize_task()?;
    }
    log.protected = ledgers.iter().map(|l| l.protected().len()).collect();
    Ok(log)
}

fn close_intervals(extractor: &FeatureExtractor, ledgers: &mut [PlasticityLedger]) -> Result<()> {
    for (ledger, block) in ledgers.iter_mut().zip(extractor.blocks()) {
        ledger.close_interval(block.conv.weights())?;
    }
    Ok(())
}

/// Eval-mode features of `samples`, `[n, feature_dim]`.
fn features_of(extractor: &FeatureExtractor, data: &TaskData<'_>, samples: &[(usize, usize)]) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut dim = 0;
    for chunk in samples.chunks(FEATURE_CHUNK) {
        let f = extractor.features(&data.batch(chunk.iter().map(|&(i, _)| i))?)?;
        dim = f.shape()[1];
        rows.extend_from_slice(f.data());
    }
    Tensor::new(vec![samples.len(), dim], rows)
}

fn accuracy(extractor: &FeatureExtractor, head: &LinearHead, data: &TaskData<'_>, samples: &[(usize, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation set"));
    }
    let features = features_of(extractor, data, samples)?;
    let mut correct = 0usize;
    for (row, &(_, label)) in samples.iter().enumerate() {
        if head.predict(features.row(row))? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn train_new_head(
    extractor: &FeatureExtractor,
    data: &TaskData<'_>,
    samples: &[(usize, usize)],
    task_id: usize,
    classes: usize,
    config: &HarnessConfig,
    order: Stream,
) -> Result<(LinearHead, TrainingLog)> {
    let features = features_of(extractor, data, samples)?;
    let labels: Vec<usize> = samples.iter().map(|&(_, l)| l).collect();
    let mut head = LinearHead::zeros(task_id, classes, features.shape()[1]);
    let log = head.train(&features, &labels, &config.head, &mut stream(config.seed, order))?;
    Ok((head, log))
}

/// State of a task-incremental run between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TilRun {
    config: HarnessConfig,
    tasks: TaskSequence,
    extractor: FeatureExtractor,
    ledgers: Vec<PlasticityLedger>,
    heads: HeadStore,
    matrix: AccuracyMatrix,
    logs: Vec<StageLog>,
}

impl TilRun {
    pub fn new(config: HarnessConfig, tasks: TaskSequence) -> Result<Self> {
        config.validate()?;
        let extractor = FeatureExtractor::new(&config.arch, &mut stream(config.seed, Stream::ExtractorInit))?;
        let ledgers = extractor.new_ledgers(config.plasticity);
        Ok(Self {
            config,
            tasks,
            extractor,
            ledgers,
            heads: HeadStore::new(),
            matrix: AccuracyMatrix::new(),
            logs: Vec::new(),
        })
    }

    /// Rebuilds a run from checkpointed state.
    pub fn from_parts(
        config: HarnessConfig,
        tasks: TaskSequence,
        extractor: FeatureExtractor,
        ledgers: Vec<PlasticityLedger>,
        heads: HeadStore,
        matrix: AccuracyMatrix,
        logs: Vec<StageLog>,
    ) -> Result<Self> {
        config.validate()?;
        if ledgers.len() != extractor.blocks().len() {
            return Err(Error::dim("til run", "one ledger per extractor block required"));
        }
        if heads.len() != matrix.tasks() || matrix.tasks() > tasks.len() {
            return Err(Error::dim("til run", "head count, matrix rows and task count disagree"));
        }
        if logs.len() != matrix.tasks() {
            return Err(Error::dim("til run", "one stage log per matrix row required"));
        }
        Ok(Self {
            config,
            tasks,
            extractor,
            ledgers,
            heads,
            matrix,
            logs,
        })
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    pub fn tasks(&self) -> &TaskSequence {
        &self.tasks
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn ledgers(&self) -> &[PlasticityLedger] {
        &self.ledgers
    }

    pub fn heads(&self) -> &HeadStore {
        &self.heads
    }

    pub fn matrix(&self) -> &AccuracyMatrix {
        &self.matrix
    }

    pub fn logs(&self) -> &[StageLog] {
        &self.logs
    }

    pub fn next_task(&self) -> usize {
        self.matrix.tasks()
    }

    pub fn is_done(&self) -> bool {
        self.next_task() == self.tasks.len()
    }

    /// Runs the next stage.
    pub fn step(&mut self, data: &TaskData<'_>) -> Result<()> {
        let t = self.next_task();
        if t >= self.tasks.len() {
            return Err(Error::InvalidArgument("all tasks already learned".into()));
        }
        let classes = self.tasks.tasks()[t].clone();
        let train = data.labelled(data.train, &classes);
        if train.is_empty() {
            return Err(Error::EmptyDataset("task training set"));
        }
        let modulate = self.config.kp_enabled && t > 0;
        let mut log = hebbian_epoch(&mut self.extractor, &mut self.ledgers, data, &train, &self.config, t, modulate)?;

        let (head, head_log) = train_new_head(
            &self.extractor,
            data,
            &train,
            t,
            classes.len(),
            &self.config,
            Stream::HeadOrder(t),
        )?;
        log.head = head_log;
        self.heads.insert(head)?;

        let mut row = Vec::with_capacity(t + 1);
        for (j, task_classes) in self.tasks.tasks()[..=t].iter().enumerate() {
            let test = data.labelled(data.test, task_classes);
            row.push(accuracy(&self.extractor, self.heads.select(j)?, data, &test)?);
        }
        self.matrix.push_row(row)?;
        self.logs.push(log);
        Ok(())
    }

    /// Runs every remaining stage; a failure carries the rows finished so far.
    pub fn run_to_end(&mut self, data: &TaskData<'_>) -> Result<()> {
        while !self.is_done() {
            let task = self.next_task();
            self.step(data).map_err(|source| Error::StageFailed {
                task,
                partial: self.matrix.clone(),
                source: Box::new(source),
            })?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TilOutcome {
        TilOutcome {
            matrix: self.matrix,
            logs: self.logs,
            extractor: self.extractor,
            ledgers: self.ledgers,
            heads: self.heads,
        }
    }
}

/// Finished task-incremental run.
#[derive(Debug, Clone, PartialEq)]
pub struct TilOutcome {
    pub matrix: AccuracyMatrix,
    pub logs: Vec<StageLog>,
    pub extractor: FeatureExtractor,
    pub ledgers: Vec<PlasticityLedger>,
    pub heads: HeadStore,
}

pub fn run_til(config: &HarnessConfig, tasks: &TaskSequence, data: &TaskData<'_>) -> Result<TilOutcome> {
    data.input_hw()?;
    let mut run = TilRun::new(config.clone(), tasks.clone())?;
    run.run_to_end(data)?;
    Ok(run.into_outcome())
}

/// Non-incremental reference: a fresh extractor and a single head over
/// `class_set`, trained like stage 0. Returns test accuracy.
pub fn run_joint(config: &HarnessConfig, class_set: &[usize], data: &TaskData<'_>) -> Result<f64> {
    if class_set.is_empty() {
        return Err(Error::EmptyDataset("joint class set"));
    }
    let tasks = TaskSequence::new(vec![class_set.to_vec()], config.seed)?;
    let mut run = TilRun::new(config.clone(), tasks)?;
    run.step(data)?;
    Ok(run.matrix.rows()[0][0])
}

/// A single new head over `classes` on a frozen, incrementally trained
/// extractor. Returns test accuracy.
pub fn run_common_head(
    config: &HarnessConfig,
    extractor: &FeatureExtractor,
    classes: &[usize],
    data: &TaskData<'_>,
) -> Result<f64> {
    config.validate()?;
    if classes.is_empty() {
        return Err(Error::EmptyDataset("common head class set"));
    }
    let train = data.labelled(data.train, classes);
    if train.is_empty() {
        return Err(Error::EmptyDataset("common head training set"));
    }
    let (head, _) = train_new_head(extractor, data, &train, 0, classes.len(), config, Stream::CommonHead)?;
    let test = data.labelled(data.test, classes);
    accuracy(extractor, &head, data, &test)
}

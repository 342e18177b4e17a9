//! Run checkpoints.
//!
//! Little-endian binary: magic `HTCK`, version u32, then the sections below,
//! then a CRC-32 of everything before it. Floats are stored as raw f64 bits
//! so a save/load/save cycle is byte-identical.
//!
//! ```text
//! config   JSON string (the experiment config)
//! seed     u64, kp flag u8
//! tasks    u32 count, each a usize list
//! blocks   u32 count, each: conv spec, hebbian params, pool, batch norm, weights
//! ledgers  u32 count, each: plasticity config, kernel count, state
//! heads    u32 count, each: task, classes, dim, weights, bias
//! matrix   u32 rows, each an f64 list
//! logs     u32 count, one per matrix row
//! ```

use std::fs;
use std::path::Path;

use htil_core::plasticity::LedgerState;
use htil_core::{
    AccuracyMatrix, BatchNormState, ConvSpec, FeatureExtractor, HeadStore, HebbianBlock, HebbianConvLayer,
    HebbianParams, LinearHead, PlasticityConfig, PlasticityLedger, PoolKind, StageLog, TaskSequence, Tensor,
    TilRun, TrainingLog, UpdateNorm,
};

use crate::config::Config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HTCK";
pub const VERSION: u32 = 1;

/// Everything needed to continue a task-incremental run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub seed: u64,
    pub kp_enabled: bool,
    pub run: TilRun,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        w.u64(self.seed);
        w.u8(self.kp_enabled as u8);

        let run = &self.run;
        w.len(run.tasks().len());
        for t in run.tasks().tasks() {
            w.usizes(t);
        }
        w.len(run.extractor().blocks().len());
        for b in run.extractor().blocks() {
            write_block(&mut w, b);
        }
        w.len(run.ledgers().len());
        for l in run.ledgers() {
            write_plasticity_config(&mut w, l.config());
            w.len(l.kernels());
            write_ledger_state(&mut w, l.state());
        }
        w.len(run.heads().len());
        for h in run.heads().iter() {
            w.len(h.task_id());
            w.len(h.classes());
            w.len(h.feature_dim());
            w.f64s(h.weights());
            w.f64s(h.bias());
        }
        w.len(run.matrix().tasks());
        for row in run.matrix().rows() {
            w.f64s(row);
        }
        w.len(run.logs().len());
        for log in run.logs() {
            w.len(log.task);
            w.len(log.hebbian_batches);
            w.usizes(&log.gated_batches);
            w.usizes(&log.protected);
            w.f64(log.head.initial_loss);
            w.f64s(&log.head.epoch_losses);
        }
        let crc = crc32fast::hash(&w.buf);
        w.u32(crc);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version}, this build reads {VERSION}")));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch (file is corrupt)".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };

        let config: Config =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        config.validate()?;
        let seed = r.u64()?;
        let kp_enabled = r.u8()? != 0;

        let tasks = (0..r.len()?).map(|_| r.usizes()).collect::<Result<Vec<_>>>()?;
        let tasks = TaskSequence::new(tasks, seed)?;
        let blocks = (0..r.len()?).map(|_| read_block(&mut r)).collect::<Result<Vec<_>>>()?;
        let extractor = FeatureExtractor::from_blocks(blocks)?;
        let ledgers = (0..r.len()?)
            .map(|_| {
                let cfg = read_plasticity_config(&mut r)?;
                let kernels = r.len()?;
                let state = read_ledger_state(&mut r)?;
                Ok(PlasticityLedger::from_state(kernels, cfg, state)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut heads = HeadStore::new();
        for _ in 0..r.len()? {
            let (task, classes, dim) = (r.len()?, r.len()?, r.len()?);
            heads.insert(LinearHead::from_parts(task, classes, dim, r.f64s()?, r.f64s()?)?)?;
        }
        let rows = (0..r.len()?).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?;
        let matrix = AccuracyMatrix::from_rows(rows)?;
        let logs = (0..r.len()?)
            .map(|_| {
                Ok(StageLog {
                    task: r.len()?,
                    hebbian_batches: r.len()?,
                    gated_batches: r.usizes()?,
                    protected: r.usizes()?,
                    head: TrainingLog {
                        initial_loss: r.f64()?,
                        epoch_losses: r.f64s()?,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let run = TilRun::from_parts(config.harness(seed, kp_enabled), tasks, extractor, ledgers, heads, matrix, logs)?;
        Ok(Self {
            config,
            seed,
            kp_enabled,
            run,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write then rename, so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_block(w: &mut Writer, b: &HebbianBlock) {
    let s = b.conv.spec();
    for v in [s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.stride, s.padding] {
        w.len(v);
    }
    let p = b.conv.params();
    for v in [p.base_lr, p.lr_min, p.radius, p.temperature, p.clamp_slack] {
        w.f64(v);
    }
    match b.pool {
        PoolKind::None => w.u8(0),
        PoolKind::Max { window, stride } => {
            w.u8(1);
            w.len(window);
            w.len(stride);
        }
        PoolKind::Avg { window, stride } => {
            w.u8(2);
            w.len(window);
            w.len(stride);
        }
        PoolKind::GlobalAvg => w.u8(3),
    }
    let n = &b.norm;
    w.f64s(&n.gamma);
    w.f64s(&n.beta);
    w.f64s(&n.running_mean);
    w.f64s(&n.running_var);
    w.f64(n.momentum);
    w.f64(n.eps);
    w.tensor(b.conv.weights());
}

fn read_block(r: &mut Reader) -> Result<HebbianBlock> {
    let spec = ConvSpec {
        in_channels: r.len()?,
        out_channels: r.len()?,
        kernel_h: r.len()?,
        kernel_w: r.len()?,
        stride: r.len()?,
        padding: r.len()?,
    };
    let params = HebbianParams {
        base_lr: r.f64()?,
        lr_min: r.f64()?,
        radius: r.f64()?,
        temperature: r.f64()?,
        clamp_slack: r.f64()?,
    };
    let pool = match r.u8()? {
        0 => PoolKind::None,
        1 => PoolKind::Max {
            window: r.len()?,
            stride: r.len()?,
        },
        2 => PoolKind::Avg {
            window: r.len()?,
            stride: r.len()?,
        },
        3 => PoolKind::GlobalAvg,
        tag => return Err(Error::Checkpoint(format!("unknown pool tag {tag}"))),
    };
    let norm = BatchNormState {
        gamma: r.f64s()?,
        beta: r.f64s()?,
        running_mean: r.f64s()?,
        running_var: r.f64s()?,
        momentum: r.f64()?,
        eps: r.f64()?,
    };
    let conv = HebbianConvLayer::from_weights(spec, params, r.tensor()?)?;
    Ok(HebbianBlock { norm, conv, pool })
}

fn write_plasticity_config(w: &mut Writer, c: &PlasticityConfig) {
    w.f64(c.top_fraction);
    w.f64(c.alpha);
    w.f64(c.beta);
    w.len(c.interval);
    w.u8(match c.norm {
        UpdateNorm::L1 => 1,
        UpdateNorm::L2 => 2,
    });
}

fn read_plasticity_config(r: &mut Reader) -> Result<PlasticityConfig> {
    Ok(PlasticityConfig {
        top_fraction: r.f64()?,
        alpha: r.f64()?,
        beta: r.f64()?,
        interval: r.len()?,
        norm: match r.u8()? {
            1 => UpdateNorm::L1,
            2 => UpdateNorm::L2,
            tag => return Err(Error::Checkpoint(format!("unknown norm tag {tag}"))),
        },
    })
}

fn write_ledger_state(w: &mut Writer, s: &LedgerState) {
    w.f64s(&s.avg_change);
    w.usizes(&s.protected);
    w.len(s.tasks_finalized);
    w.f64s(&s.change_sum);
    w.f64s(&s.cum_activation);
    w.len(s.intervals);
    match &s.snapshot {
        Some(t) => {
            w.u8(1);
            w.tensor(t);
        }
        None => w.u8(0),
    }
    w.f64s(&s.pending_activation);
    w.len(s.pending_batches);
}

fn read_ledger_state(r: &mut Reader) -> Result<LedgerState> {
    Ok(LedgerState {
        avg_change: r.f64s()?,
        protected: r.usizes()?,
        tasks_finalized: r.len()?,
        change_sum: r.f64s()?,
        cum_activation: r.f64s()?,
        intervals: r.len()?,
        snapshot: match r.u8()? {
            0 => None,
            _ => Some(r.tensor()?),
        },
        pending_activation: r.f64s()?,
        pending_batches: r.len()?,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.bytes(s.as_bytes());
    }
    fn usizes(&mut self, v: &[usize]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.len(x));
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.usizes(t.shape());
        self.f64s(t.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
    /// A count of items each at least `min_item` bytes, checked against what is left.
    fn count(&mut self, min_item: usize) -> Result<usize> {
        let n = self.len()?;
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("length {n} at byte {} exceeds the file", self.pos - 8)));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.len()).collect()
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.usizes()?;
        let data = self.f64s()?;
        Ok(Tensor::new(shape, data)?)
    }
}

//! Kernel plasticity: per-kernel change tracking, activation ranking and
//! neuromodulated update gating.
//!
//! During a task the ledger samples the layer weights every `interval`
//! batches. Each interval contributes the summed absolute cell change of every
//! kernel and the kernel's mean soft activation. When the task ends the mean
//! interval change becomes the kernel's change threshold and the most active
//! kernels join the protected set for good.
//!
//! On later tasks an incoming update is rescaled per kernel:
//!
//! | case                                                    | factor |
//! |---------------------------------------------------------|--------|
//! | some protected kernel exceeds its threshold, `j` unprotected | `alpha` |
//! | `j` protected and its own update exceeds its threshold  | `beta` |
//! | otherwise                                               | `1`    |

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::softhebb::{l2, RawUpdate};
use crate::tensor::{channel_means, Tensor};

/// Magnitude used both for interval changes and incoming updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateNorm {
    /// Sum of absolute cell values.
    #[default]
    L1,
    L2,
}

impl UpdateNorm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            UpdateNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            UpdateNorm::L2 => l2(v),
        }
    }

    fn of_difference(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            UpdateNorm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            UpdateNorm::L2 => math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlasticityConfig {
    /// Fraction of kernels protected after each task.
    pub top_fraction: f64,
    /// Factor applied to unprotected kernels while a protected kernel is over threshold.
    pub alpha: f64,
    /// Factor applied to protected kernels over their own threshold.
    pub beta: f64,
    /// Tracking interval in batches.
    pub interval: usize,
    pub norm: UpdateNorm,
}

impl Default for PlasticityConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.6,
            alpha: 0.15,
            beta: 0.9,
            interval: 5,
            norm: UpdateNorm::L1,
        }
    }
}

impl PlasticityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.top_fraction) {
            return Err(Error::InvalidArgument(alloc::format!(
                "top_fraction must lie in [0, 1], got {}",
                self.top_fraction
            )));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        if self.interval == 0 {
            return Err(Error::InvalidArgument("interval must be at least one batch".into()));
        }
        Ok(())
    }

    /// Number of kernels added to the protected set per task.
    pub fn protected_count(&self, kernels: usize) -> usize {
        let raw = math::ceil(self.top_fraction * kernels as f64 - 1e-9);
        (raw.max(0.0) as usize).min(kernels)
    }
}

/// Complete ledger contents, exposed for checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerState {
    /// Committed mean interval change per kernel, merged across tasks.
    pub avg_change: Vec<f64>,
    /// Protected kernel indices, ascending.
    pub protected: Vec<usize>,
    pub tasks_finalized: usize,
    /// Sum of interval changes in the current task.
    pub change_sum: Vec<f64>,
    /// Cumulative interval activation in the current task.
    pub cum_activation: Vec<f64>,
    /// Intervals closed in the current task.
    pub intervals: usize,
    pub snapshot: Option<Tensor>,
    /// Activation sums of the batches in the open interval.
    pub pending_activation: Vec<f64>,
    pub pending_batches: usize,
}

impl LedgerState {
    fn empty(kernels: usize) -> Self {
        Self {
            avg_change: vec![0.0; kernels],
            protected: Vec::new(),
            tasks_finalized: 0,
            change_sum: vec![0.0; kernels],
            cum_activation: vec![0.0; kernels],
            intervals: 0,
            snapshot: None,
            pending_activation: vec![0.0; kernels],
            pending_batches: 0,
        }
    }
}

/// Plasticity bookkeeping for one Hebbian layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticityLedger {
    config: PlasticityConfig,
    kernels: usize,
    state: LedgerState,
}

impl PlasticityLedger {
    pub fn new(kernels: usize, config: PlasticityConfig) -> Self {
        Self {
            config,
            kernels,
            state: LedgerState::empty(kernels),
        }
    }

    pub fn from_state(kernels: usize, config: PlasticityConfig, state: LedgerState) -> Result<Self> {
        let lengths = [
            state.avg_change.len(),
            state.change_sum.len(),
            state.cum_activation.len(),
            state.pending_activation.len(),
        ];
        if lengths.iter().any(|&n| n != kernels) {
            return Err(Error::dim("plasticity ledger", "per-kernel vectors disagree with the kernel count"));
        }
        if state.protected.iter().any(|&j| j >= kernels) || state.protected.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::dim("plasticity ledger", "protected set must be ascending kernel indices"));
        }
        Ok(Self { config, kernels, state })
    }

    pub fn config(&self) -> &PlasticityConfig {
        &self.config
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn state(&self) -> &LedgerState {
        &self.state
    }

    pub fn avg_change(&self) -> &[f64] {
        &self.state.avg_change
    }

    pub fn cum_activation(&self) -> &[f64] {
        &self.state.cum_activation
    }

    pub fn protected(&self) -> &[usize] {
        &self.state.protected
    }

    pub fn is_protected(&self, j: usize) -> bool {
        self.state.protected.binary_search(&j).is_ok()
    }

    pub fn intervals_seen(&self) -> usize {
        self.state.intervals
    }

    pub fn tasks_finalized(&self) -> usize {
        self.state.tasks_finalized
    }

    pub fn pending_batches(&self) -> usize {
        self.state.pending_batches
    }

    /// Starts a task: snapshots the weights and clears the task accumulators.
    pub fn begin_task(&mut self, weights: &Tensor) -> Result<()> {
        self.check_kernels(weights)?;
        let s = &mut self.state;
        s.change_sum.iter_mut().for_each(|v| *v = 0.0);
        s.cum_activation.iter_mut().for_each(|v| *v = 0.0);
        s.pending_activation.iter_mut().for_each(|v| *v = 0.0);
        s.intervals = 0;
        s.pending_batches = 0;
        s.snapshot = Some(weights.clone());
        Ok(())
    }

    /// Adds one batch of post-activations to the open interval.
    pub fn record_activation(&mut self, post_act: &Tensor) -> Result<()> {
        let means = channel_means(post_act)?;
        if means.len() != self.kernels {
            return Err(Error::Shape {
                context: "ledger activations",
                expected: vec![self.kernels],
                found: vec![means.len()],
            });
        }
        for (acc, m) in self.state.pending_activation.iter_mut().zip(means) {
            *acc += m;
        }
        self.state.pending_batches += 1;
        Ok(())
    }

    /// Records the closing batch of an interval and closes it.
    pub fn track_interval(&mut self, current_weights: &Tensor, batch_activations: &Tensor) -> Result<()> {
        self.record_activation(batch_activations)?;
        self.close_interval(current_weights)
    }

    /// Closes the open interval against the weights at its end.
    pub fn close_interval(&mut self, current_weights: &Tensor) -> Result<()> {
        self.check_kernels(current_weights)?;
        let norm = self.config.norm;
        let s = &mut self.state;
        let snapshot = s
            .snapshot
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("interval closed before begin_task".into()))?;
        if snapshot.shape() != current_weights.shape() {
            return Err(Error::Shape {
                context: "ledger snapshot",
                expected: snapshot.shape().to_vec(),
                found: current_weights.shape().to_vec(),
            });
        }
        for j in 0..self.kernels {
            s.change_sum[j] += norm.of_difference(current_weights.row(j), snapshot.row(j));
        }
        let batches = s.pending_batches.max(1) as f64;
        for (a, pending) in s.cum_activation.iter_mut().zip(s.pending_activation.iter_mut()) {
            *a += *pending / batches;
            *pending = 0.0;
        }
        s.pending_batches = 0;
        s.intervals += 1;
        s.snapshot = Some(current_weights.clone());
        Ok(())
    }

    /// Commits the task's mean change and protects its most active kernels.
    pub fn finalize_task(&mut self) -> Result<()> {
        let s = &mut self.state;
        if s.intervals == 0 {
            return Err(Error::NothingTracked);
        }
        let n = s.intervals as f64;
        let t = s.tasks_finalized as f64;
        for (avg, sum) in s.avg_change.iter_mut().zip(&s.change_sum) {
            let task_mean = sum / n;
            *avg = (*avg * t + task_mean) / (t + 1.0);
        }

        let mut order: Vec<usize> = (0..self.kernels).collect();
        let a = &s.cum_activation;
        order.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));
        let keep = self.config.protected_count(self.kernels);
        s.protected.extend_from_slice(&order[..keep]);
        s.protected.sort_unstable();
        s.protected.dedup();

        s.tasks_finalized += 1;
        s.change_sum.iter_mut().for_each(|v| *v = 0.0);
        s.cum_activation.iter_mut().for_each(|v| *v = 0.0);
        s.pending_activation.iter_mut().for_each(|v| *v = 0.0);
        s.pending_batches = 0;
        s.intervals = 0;
        s.snapshot = None;
        Ok(())
    }

    fn exceeds(&self, raw: &RawUpdate, j: usize) -> bool {
        self.config.norm.of(raw.kernel(j)) > self.state.avg_change[j]
    }

    /// True iff some protected kernel's incoming update exceeds its threshold.
    pub fn modulation_condition(&self, raw: &RawUpdate) -> bool {
        self.state.tasks_finalized > 0 && self.state.protected.iter().any(|&k| self.exceeds(raw, k))
    }

    /// Per-kernel factor in `{alpha, beta, 1}`.
    pub fn scale_factors(&self, raw: &RawUpdate) -> Vec<f64> {
        if self.state.tasks_finalized == 0 {
            return vec![1.0; self.kernels];
        }
        let cond = self.modulation_condition(raw);
        (0..self.kernels)
            .map(|j| {
                let protected = self.is_protected(j);
                if cond && !protected {
                    self.config.alpha
                } else if protected && self.exceeds(raw, j) {
                    self.config.beta
                } else {
                    1.0
                }
            })
            .collect()
    }

    pub fn modulate(&self, raw: &RawUpdate) -> RawUpdate {
        let factors = self.scale_factors(raw);
        let mut delta = raw.delta.clone();
        let n = delta.len() / self.kernels.max(1);
        for (kernel, f) in delta.data_mut().chunks_mut(n.max(1)).zip(&factors) {
            if *f != 1.0 {
                kernel.iter_mut().for_each(|v| *v *= f);
            }
        }
        RawUpdate { delta }
    }

    fn check_kernels(&self, weights: &Tensor) -> Result<()> {
        if weights.shape().first() != Some(&self.kernels) {
            return Err(Error::Shape {
                context: "ledger weights",
                expected: vec![self.kernels],
                found: weights.shape().to_vec(),
            });
        }
        Ok(())
    }
}

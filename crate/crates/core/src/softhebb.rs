//! Soft winner-take-all Hebbian convolution.
//!
//! Kernels compete through a softmax over channels at every site. The update
//! for kernel `j` is
//!
//! ```text
//! dw_j = eta_j * mean_p  y_j(p) * (x_p - u_j(p) * w_j)
//! ```
//!
//! where `u = w . x` is the pre-activation, `y = softmax(u / tau)` and the
//! subtractive `u * w` term keeps kernel norms bounded. The rate `eta_j`
//! shrinks as `||w_j||` approaches the target radius.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{conv2d_forward, softmax_channels, window_correlation, ConvSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HebbianParams {
    pub base_lr: f64,
    pub lr_min: f64,
    /// Target kernel norm.
    pub radius: f64,
    /// Softmax temperature of the competition.
    pub temperature: f64,
    /// Kernels whose norm exceeds `radius * (1 + clamp_slack)` are rescaled to `radius`.
    pub clamp_slack: f64,
}

impl Default for HebbianParams {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            lr_min: 1e-4,
            radius: 1.0,
            temperature: 1.0,
            clamp_slack: 0.1,
        }
    }
}

impl HebbianParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("radius", self.radius),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.base_lr) {
            return Err(Error::InvalidArgument(alloc::format!(
                "lr_min must lie in [0, base_lr], got {}",
                self.lr_min
            )));
        }
        if !(self.clamp_slack >= 0.0 && self.clamp_slack.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "clamp_slack must be nonnegative, got {}",
                self.clamp_slack
            )));
        }
        Ok(())
    }
}

/// Proposed weight change for one batch, before neuromodulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawUpdate {
    pub delta: Tensor,
}

impl RawUpdate {
    pub fn kernel(&self, j: usize) -> &[f64] {
        self.delta.row(j)
    }

    pub fn kernels(&self) -> usize {
        self.delta.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HebbianConvLayer {
    spec: ConvSpec,
    weights: Tensor,
    params: HebbianParams,
}

impl HebbianConvLayer {
    /// Gaussian kernels, each rescaled to norm `radius / 2`.
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, params: HebbianParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let n = spec.kernel_len();
        let mut data = Vec::with_capacity(spec.out_channels * n);
        for _ in 0..spec.out_channels {
            let kernel: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = l2(&kernel);
            let scale = if norm > 0.0 { 0.5 * params.radius / norm } else { 0.0 };
            data.extend(kernel.iter().map(|v| v * scale));
        }
        let weights = Tensor::new(spec.weight_shape(), data)?;
        Ok(Self {
            spec,
            weights,
            params,
        })
    }

    pub fn from_weights(spec: ConvSpec, params: HebbianParams, weights: Tensor) -> Result<Self> {
        params.validate()?;
        if weights.shape() != spec.weight_shape().as_slice() {
            return Err(Error::Shape {
                context: "hebbian layer weights",
                expected: spec.weight_shape(),
                found: weights.shape().to_vec(),
            });
        }
        if !weights.is_finite() {
            return Err(Error::NonFinite("hebbian layer weights"));
        }
        Ok(Self {
            spec,
            weights,
            params,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn params(&self) -> &HebbianParams {
        &self.params
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn kernels(&self) -> usize {
        self.spec.out_channels
    }

    pub fn kernel(&self, j: usize) -> &[f64] {
        self.weights.row(j)
    }

    pub fn kernel_norms(&self) -> Vec<f64> {
        (0..self.kernels()).map(|j| l2(self.kernel(j))).collect()
    }

    /// Pre-activations and their channel softmax.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tensor)> {
        let pre = conv2d_forward(input, &self.weights, &self.spec)?;
        let post = softmax_channels(&pre, self.params.temperature)?;
        Ok((pre, post))
    }

    /// `base_lr * |R - ||w_j||| / R`, clamped to `[lr_min, base_lr]`.
    pub fn adaptive_rate(&self) -> Vec<f64> {
        let p = &self.params;
        self.kernel_norms()
            .into_iter()
            .map(|norm| {
                let rate = p.base_lr * (p.radius - norm).abs() / p.radius;
                rate.clamp(p.lr_min, p.base_lr)
            })
            .collect()
    }

    pub fn compute_raw_update(&self, input: &Tensor, pre_act: &Tensor, post_act: &Tensor) -> Result<RawUpdate> {
        let [batch, k, oh, ow] = pre_act.dims4("hebbian pre-activation")?;
        if post_act.shape() != pre_act.shape() || k != self.kernels() {
            return Err(Error::Shape {
                context: "hebbian post-activation",
                expected: pre_act.shape().to_vec(),
                found: post_act.shape().to_vec(),
            });
        }
        // sum_p y_j(p) x_p
        let hebbian = window_correlation(input, post_act, &self.spec)?;
        // sum_p y_j(p) u_j(p)
        let plane = oh * ow;
        let mut yu = alloc::vec![0.0; k];
        for b in 0..batch {
            for (j, acc) in yu.iter_mut().enumerate() {
                let start = (b * k + j) * plane;
                let u = &pre_act.data()[start..start + plane];
                let y = &post_act.data()[start..start + plane];
                *acc += u.iter().zip(y).map(|(u, y)| u * y).sum::<f64>();
            }
        }
        let count = (batch * plane) as f64;
        let rates = self.adaptive_rate();
        let n = self.spec.kernel_len();
        let mut delta = hebbian.into_data();
        for j in 0..k {
            let w = self.kernel(j);
            let scale = rates[j] / count;
            for (d, wv) in delta[j * n..(j + 1) * n].iter_mut().zip(w) {
                *d = scale * (*d - yu[j] * wv);
            }
        }
        Ok(RawUpdate {
            delta: Tensor::new(self.spec.weight_shape(), delta)?,
        })
    }

    /// Adds the update, then rescales any kernel that left the norm bound.
    pub fn apply_update(&mut self, update: &RawUpdate) -> Result<()> {
        if update.delta.shape() != self.weights.shape() {
            return Err(Error::Shape {
                context: "hebbian update",
                expected: self.weights.shape().to_vec(),
                found: update.delta.shape().to_vec(),
            });
        }
        if !update.delta.is_finite() {
            return Err(Error::NonFinite("hebbian update"));
        }
        let n = self.spec.kernel_len();
        let bound = self.params.radius * (1.0 + self.params.clamp_slack);
        let radius = self.params.radius;
        let w = self.weights.data_mut();
        for (wv, d) in w.iter_mut().zip(update.delta.data()) {
            *wv += d;
        }
        for kernel in w.chunks_mut(n) {
            let norm = l2(kernel);
            if norm > bound {
                let scale = radius / norm;
                kernel.iter_mut().for_each(|v| *v *= scale);
            }
        }
        Ok(())
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

//! Dense `f64` tensors and the forward primitives of the feature extractor.
//!
//! Rank-4 tensors use the `[batch, channels, height, width]` layout, row-major.
//! All reductions run in a fixed order so results are bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                alloc::format!(
                    "shape {:?} holds {} elements but {} were given",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Dimensions of a rank-4 tensor.
    pub fn dims4(&self, context: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            other => Err(Error::dim(
                context,
                alloc::format!("expected a rank-4 tensor, found shape {:?}", other),
            )),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or(Error::EmptyDataset("nothing to stack"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(Error::Shape {
                    context: "stack",
                    expected: first.shape.clone(),
                    found: item.shape.clone(),
                });
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.data.len() / self.shape[0].max(1);
        &self.data[i * width..(i + 1) * width]
    }

    /// Collapses everything but the leading axis.
    pub fn flatten_rows(self) -> Self {
        let rows = self.shape.first().copied().unwrap_or(1);
        let width = self.data.len().checked_div(rows).unwrap_or(0);
        Self {
            shape: vec![rows, width],
            data: self.data,
        }
    }
}

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Square kernel with "same"-style padding for odd sizes.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn kernel_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Output spatial size `floor((in + 2p - k) / s) + 1`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::dim("conv2d", "stride must be at least 1"));
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel_h || pw < self.kernel_w || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::dim(
                "conv2d",
                alloc::format!(
                    "kernel {}x{} does not fit padded input {}x{}",
                    self.kernel_h,
                    self.kernel_w,
                    ph,
                    pw
                ),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    fn check(&self, input: &Tensor, weights: &Tensor) -> Result<[usize; 4]> {
        let dims = input.dims4("conv2d input")?;
        if dims[1] != self.in_channels {
            return Err(Error::Shape {
                context: "conv2d input channels",
                expected: vec![self.in_channels],
                found: vec![dims[1]],
            });
        }
        if weights.shape() != self.weight_shape().as_slice() {
            return Err(Error::Shape {
                context: "conv2d weights",
                expected: self.weight_shape(),
                found: weights.shape().to_vec(),
            });
        }
        Ok(dims)
    }
}

/// Valid output index range `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // need 0 <= o*stride + k - pad < in_len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let limit = in_len + pad;
    let hi = if limit > k {
        ((limit - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Input windows of one batch item as rows: `[oh * ow, cin * kh * kw]`,
/// zero where the window overhangs the padding.
fn patches(plane_set: &[f64], spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize, out: &mut Vec<f64>) {
    let (cin, kh, kw, s, p) = (spec.in_channels, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding);
    let klen = cin * kh * kw;
    out.clear();
    out.resize(oh * ow * klen, 0.0);
    for ci in 0..cin {
        let in_plane = &plane_set[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            let (oy0, oy1) = valid_range(ky, p, s, h, oh);
            for kx in 0..kw {
                let (ox0, ox1) = valid_range(kx, p, s, w, ow);
                let col = (ci * kh + ky) * kw + kx;
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - p;
                    for ox in ox0..ox1 {
                        out[(oy * ow + ox) * klen + col] = in_plane[iy * w + ox * s + kx - p];
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cross-correlation of `input` with a bank of kernels.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let [batch, cin, h, w] = spec.check(input, weights)?;
    let (oh, ow) = spec.output_size(h, w)?;
    let cout = spec.out_channels;
    let klen = spec.kernel_len();
    let sites = oh * ow;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; batch * cout * sites];
    let mut cols = Vec::new();

    for b in 0..batch {
        patches(&x[b * cin * h * w..(b + 1) * cin * h * w], spec, h, w, oh, ow, &mut cols);
        for co in 0..cout {
            let kernel = &wt[co * klen..(co + 1) * klen];
            let out_plane = &mut out[(b * cout + co) * sites..(b * cout + co + 1) * sites];
            for (o, patch) in out_plane.iter_mut().zip(cols.chunks_exact(klen)) {
                *o = dot(kernel, patch);
            }
        }
    }
    Tensor::new(vec![batch, cout, oh, ow], out)
}

/// Correlates the input windows with per-site output weights:
/// `out[j, c, ky, kx] = sum_{b, oy, ox} weight[b, j, oy, ox] * input[b, c, oy*s + ky - p, ox*s + kx - p]`.
///
/// With `weight = 1` this sums every input patch a kernel sees.
pub fn window_correlation(input: &Tensor, site_weights: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let [batch, cin, h, w] = input.dims4("window correlation input")?;
    if cin != spec.in_channels {
        return Err(Error::Shape {
            context: "window correlation input channels",
            expected: vec![spec.in_channels],
            found: vec![cin],
        });
    }
    let (oh, ow) = spec.output_size(h, w)?;
    let cout = spec.out_channels;
    let expected = [batch, cout, oh, ow];
    if site_weights.shape() != expected {
        return Err(Error::Shape {
            context: "window correlation site weights",
            expected: expected.to_vec(),
            found: site_weights.shape().to_vec(),
        });
    }
    let klen = spec.kernel_len();
    let sites = oh * ow;
    let x = input.data();
    let y = site_weights.data();
    let mut out = vec![0.0; cout * klen];
    let mut cols = Vec::new();

    for b in 0..batch {
        patches(&x[b * cin * h * w..(b + 1) * cin * h * w], spec, h, w, oh, ow, &mut cols);
        for co in 0..cout {
            let acc = &mut out[co * klen..(co + 1) * klen];
            let y_plane = &y[(b * cout + co) * sites..(b * cout + co + 1) * sites];
            for (&yv, patch) in y_plane.iter().zip(cols.chunks_exact(klen)) {
                for (a, v) in acc.iter_mut().zip(patch) {
                    *a += yv * v;
                }
            }
        }
    }
    Tensor::new(spec.weight_shape(), out)
}

fn pool_dims(input: &Tensor, window: usize, stride: usize, context: &'static str) -> Result<([usize; 4], usize, usize)> {
    let dims = input.dims4(context)?;
    if window == 0 || stride == 0 {
        return Err(Error::dim(context, "window and stride must be at least 1"));
    }
    let [_, _, h, w] = dims;
    if window > h || window > w {
        return Err(Error::dim(
            context,
            alloc::format!("window {} larger than spatial extent {}x{}", window, h, w),
        ));
    }
    Ok((dims, (h - window) / stride + 1, (w - window) / stride + 1))
}

fn pool_with(
    input: &Tensor,
    window: usize,
    stride: usize,
    context: &'static str,
    reduce: impl Fn(&mut dyn Iterator<Item = f64>) -> f64,
) -> Result<Tensor> {
    let ([batch, channels, h, w], oh, ow) = pool_dims(input, window, stride, context)?;
    let x = input.data();
    let mut out = Vec::with_capacity(batch * channels * oh * ow);
    for plane in 0..batch * channels {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut cells = (0..window).flat_map(|dy| {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    x[row..row + window].iter().copied()
                });
                out.push(reduce(&mut cells));
            }
        }
    }
    Tensor::new(vec![batch, channels, oh, ow], out)
}

pub fn max_pool(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    pool_with(input, window, stride, "max_pool", |cells| {
        cells.fold(f64::NEG_INFINITY, f64::max)
    })
}

pub fn avg_pool(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let n = (window * window) as f64;
    pool_with(input, window, stride, "avg_pool", |cells| {
        cells.sum::<f64>() / n
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization state with a learnable affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalizes each channel. Train mode uses batch statistics (biased variance)
/// and folds them into the running estimates (unbiased variance); eval mode
/// applies the running estimates.
pub fn batch_norm(input: &Tensor, state: &mut BatchNormState, mode: BnMode) -> Result<Tensor> {
    if mode == BnMode::Eval {
        return batch_norm_eval(input, state);
    }
    let [batch, channels, h, w] = input.dims4("batch_norm")?;
    if channels != state.channels() {
        return Err(Error::Shape {
            context: "batch_norm channels",
            expected: vec![state.channels()],
            found: vec![channels],
        });
    }
    let plane = h * w;
    let count = batch * plane;
    let x = input.data();
    let mut out = vec![0.0; x.len()];

    for c in 0..channels {
        let planes = || (0..batch).map(move |b| (b * channels + c) * plane);
        let (mean, var) = match mode {
            BnMode::Eval => (state.running_mean[c], state.running_var[c]),
            BnMode::Train => {
                if count < 2 {
                    return Err(Error::dim(
                        "batch_norm",
                        "train mode needs at least two values per channel",
                    ));
                }
                let mut sum = 0.0;
                for start in planes() {
                    sum += x[start..start + plane].iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for start in planes() {
                    sq += x[start..start + plane]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = sq / (count - 1) as f64;
                let m = state.momentum;
                state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean;
                state.running_var[c] = (1.0 - m) * state.running_var[c] + m * unbiased;
                (mean, var)
            }
        };
        let scale = state.gamma[c] / math::sqrt(var + state.eps);
        let shift = state.beta[c] - mean * scale;
        for start in planes() {
            for i in start..start + plane {
                out[i] = x[i] * scale + shift;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Eval-mode batch normalization, which never touches the state.
pub fn batch_norm_eval(input: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    let [batch, channels, h, w] = input.dims4("batch_norm")?;
    if channels != state.channels() {
        return Err(Error::Shape {
            context: "batch_norm channels",
            expected: vec![state.channels()],
            found: vec![channels],
        });
    }
    let plane = h * w;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        let scale = state.gamma[c] / math::sqrt(state.running_var[c] + state.eps);
        let shift = state.beta[c] - state.running_mean[c] * scale;
        for b in 0..batch {
            let start = (b * channels + c) * plane;
            for i in start..start + plane {
                out[i] = x[i] * scale + shift;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// `max(0, x - mean over channels)` at every spatial site.
pub fn triangle_activation(pre_act: &Tensor) -> Result<Tensor> {
    let [batch, channels, h, w] = pre_act.dims4("triangle_activation")?;
    let plane = h * w;
    let x = pre_act.data();
    let mut out = vec![0.0; x.len()];
    if channels == 0 {
        return Ok(pre_act.clone());
    }
    let mut mean = vec![0.0; plane];
    let mut low = vec![0.0; plane];
    for b in 0..batch {
        let base = b * channels * plane;
        // offset from the site minimum so a constant site has an exact mean
        low.copy_from_slice(&x[base..base + plane]);
        for c in 1..channels {
            for (l, v) in low.iter_mut().zip(&x[base + c * plane..base + (c + 1) * plane]) {
                *l = l.min(*v);
            }
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for c in 0..channels {
            let src = &x[base + c * plane..base + (c + 1) * plane];
            for ((m, v), l) in mean.iter_mut().zip(src).zip(&low) {
                *m += v - l;
            }
        }
        for (m, l) in mean.iter_mut().zip(&low) {
            *m = l + *m / channels as f64;
        }
        for c in 0..channels {
            let range = base + c * plane..base + (c + 1) * plane;
            for ((o, v), m) in out[range.clone()].iter_mut().zip(&x[range]).zip(&mean) {
                *o = (v - m).max(0.0);
            }
        }
    }
    Tensor::new(pre_act.shape().to_vec(), out)
}

/// Numerically stable softmax of `v / temperature`.
pub fn softmax(v: &[f64], temperature: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out, temperature);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64], temperature: f64) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = math::exp((*x - max) / temperature);
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Softmax across the channel axis at every site of a rank-4 tensor.
pub fn softmax_channels(pre_act: &Tensor, temperature: f64) -> Result<Tensor> {
    let [batch, channels, h, w] = pre_act.dims4("softmax_channels")?;
    let plane = h * w;
    let x = pre_act.data();
    let mut out = vec![0.0; x.len()];
    let mut site = vec![0.0; channels];
    for b in 0..batch {
        let base = b * channels * plane;
        for s in 0..plane {
            for (c, v) in site.iter_mut().enumerate() {
                *v = x[base + c * plane + s];
            }
            softmax_in_place(&mut site, temperature);
            for (c, v) in site.iter().enumerate() {
                out[base + c * plane + s] = *v;
            }
        }
    }
    Tensor::new(pre_act.shape().to_vec(), out)
}

/// Mean of each channel over batch and space.
pub fn channel_means(t: &Tensor) -> Result<Vec<f64>> {
    let [batch, channels, h, w] = t.dims4("channel_means")?;
    let plane = h * w;
    let mut means = vec![0.0; channels];
    for b in 0..batch {
        for (c, m) in means.iter_mut().enumerate() {
            let start = (b * channels + c) * plane;
            *m += t.data()[start..start + plane].iter().sum::<f64>();
        }
    }
    let count = (batch * plane).max(1) as f64;
    means.iter_mut().for_each(|m| *m /= count);
    Ok(means)
}

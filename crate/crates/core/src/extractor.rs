//! Stacked Hebbian feature extractor.
//!
//! Each block runs batch normalization on its input, a Hebbian convolution,
//! the Triangle activation and a pooling stage. Training is a single forward
//! sweep per batch: every block learns from the normalized input it sees and
//! passes its activation on.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::plasticity::PlasticityLedger;
use crate::softhebb::{HebbianConvLayer, HebbianParams};
use crate::tensor::{
    avg_pool, batch_norm, batch_norm_eval, max_pool, triangle_activation, BatchNormState, BnMode,
    ConvSpec, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    None,
    Max { window: usize, stride: usize },
    Avg { window: usize, stride: usize },
    /// Average over the whole remaining spatial extent.
    GlobalAvg,
}

impl PoolKind {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match *self {
            PoolKind::None => Ok(x.clone()),
            PoolKind::Max { window, stride } => max_pool(x, window, stride),
            PoolKind::Avg { window, stride } => avg_pool(x, window, stride),
            PoolKind::GlobalAvg => {
                let [b, c, h, w] = x.dims4("global average pool")?;
                let plane = h * w;
                let data = x
                    .data()
                    .chunks(plane.max(1))
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect();
                Tensor::new(alloc::vec![b, c, 1, 1], data)
            }
        }
    }

    fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match *self {
            PoolKind::None => Ok((h, w)),
            PoolKind::GlobalAvg => Ok((1, 1)),
            PoolKind::Max { window, stride } | PoolKind::Avg { window, stride } => {
                if window == 0 || stride == 0 || window > h || window > w {
                    return Err(Error::dim(
                        "pool",
                        alloc::format!("window {window} does not fit {h}x{w}"),
                    ));
                }
                Ok(((h - window) / stride + 1, (w - window) / stride + 1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub pool: PoolKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureConfig {
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub hebbian: HebbianParams,
}

impl ArchitectureConfig {
    /// Square kernels with "same" padding, max pooling after every block but
    /// the last, which averages globally.
    pub fn stacked(in_channels: usize, channels: &[usize], kernel: usize, pool: usize, hebbian: HebbianParams) -> Self {
        let layers = channels
            .iter()
            .enumerate()
            .map(|(i, &out_channels)| LayerSpec {
                out_channels,
                kernel,
                stride: 1,
                padding: kernel / 2,
                pool: if i + 1 == channels.len() {
                    PoolKind::GlobalAvg
                } else if pool > 1 {
                    PoolKind::Max {
                        window: pool,
                        stride: pool,
                    }
                } else {
                    PoolKind::None
                },
            })
            .collect();
        Self {
            in_channels,
            layers,
            hebbian,
        }
    }

    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let mut cin = self.in_channels;
        self.layers
            .iter()
            .map(|l| {
                let spec = ConvSpec {
                    in_channels: cin,
                    out_channels: l.out_channels,
                    kernel_h: l.kernel,
                    kernel_w: l.kernel,
                    stride: l.stride,
                    padding: l.padding,
                };
                cin = l.out_channels;
                spec
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HebbianBlock {
    pub norm: BatchNormState,
    pub conv: HebbianConvLayer,
    pub pool: PoolKind,
}

impl HebbianBlock {
    fn activate(&self, pre: &Tensor) -> Result<Tensor> {
        self.pool.apply(&triangle_activation(pre)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    blocks: Vec<HebbianBlock>,
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        if arch.layers.is_empty() {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        }
        let blocks = arch
            .conv_specs()
            .into_iter()
            .zip(&arch.layers)
            .map(|(spec, layer)| {
                Ok(HebbianBlock {
                    norm: BatchNormState::new(spec.in_channels),
                    conv: HebbianConvLayer::new(spec, arch.hebbian, rng)?,
                    pool: layer.pool,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn from_blocks(blocks: Vec<HebbianBlock>) -> Result<Self> {
        for pair in blocks.windows(2) {
            if pair[0].conv.spec().out_channels != pair[1].conv.spec().in_channels {
                return Err(Error::dim("feature extractor", "consecutive blocks disagree on channel count"));
            }
        }
        for block in &blocks {
            if block.norm.channels() != block.conv.spec().in_channels {
                return Err(Error::dim("feature extractor", "normalization width differs from conv input"));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[HebbianBlock] {
        &self.blocks
    }

    /// One ledger per block, sized to the block's kernel count.
    pub fn new_ledgers(&self, config: crate::plasticity::PlasticityConfig) -> Vec<PlasticityLedger> {
        self.blocks
            .iter()
            .map(|b| PlasticityLedger::new(b.conv.kernels(), config))
            .collect()
    }

    /// Length of the flattened feature vector for an input of `h x w`.
    pub fn feature_dim(&self, h: usize, w: usize) -> Result<usize> {
        let (mut h, mut w) = (h, w);
        for block in &self.blocks {
            (h, w) = block.conv.spec().output_size(h, w)?;
            (h, w) = block.pool.output_size(h, w)?;
        }
        let channels = self.blocks.last().map_or(0, |b| b.conv.kernels());
        Ok(channels * h * w)
    }

    /// Eval-mode features, `[batch, feature_dim]`.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        let mut x = batch.clone();
        for block in &self.blocks {
            let normed = batch_norm_eval(&x, &block.norm)?;
            let (pre, _) = block.conv.forward(&normed)?;
            x = block.activate(&pre)?;
        }
        Ok(x.flatten_rows())
    }

    /// One unsupervised step on a batch.
    ///
    /// With `ledgers`, each block's post-activations are recorded and, when
    /// `modulate` is set, the raw update is gated through the block's ledger
    /// before it is applied. Returns, per block, whether the gating condition
    /// fired.
    pub fn train_batch(
        &mut self,
        batch: &Tensor,
        mut ledgers: Option<&mut [PlasticityLedger]>,
        modulate: bool,
    ) -> Result<Vec<bool>> {
        if let Some(l) = ledgers.as_deref() {
            if l.len() != self.blocks.len() {
                return Err(Error::dim("train_batch", "one ledger per block required"));
            }
        }
        let mut fired = alloc::vec![false; self.blocks.len()];
        let mut x = batch.clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let normed = batch_norm(&x, &mut block.norm, BnMode::Train)?;
            let (pre, post) = block.conv.forward(&normed)?;
            let raw = block.conv.compute_raw_update(&normed, &pre, &post)?;
            let update = match ledgers.as_deref_mut() {
                Some(ledgers) => {
                    let ledger = &mut ledgers[i];
                    ledger.record_activation(&post)?;
                    if modulate {
                        fired[i] = ledger.modulation_condition(&raw);
                        ledger.modulate(&raw)
                    } else {
                        raw
                    }
                }
                None => raw,
            };
            block.conv.apply_update(&update)?;
            x = block.activate(&pre)?;
        }
        Ok(fired)
    }
}

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, BatchNorm, Conv3x3, LeakyRelu, MaxPool2, Mode, Param, Spatial,
};
use crate::dataset::Image;
use crate::error::{Result, RosError};

/// Feature extractor contract: images in, one `F`-dimensional column per image out.
///
/// Implementations own their parameters and forward caches; `backward` must follow
/// a `Mode::Train` forward on the same batch and accumulates into parameter grads.
pub trait Encoder: Send + Sync + std::fmt::Debug {
    fn config(&self) -> EncoderConfig;
    fn feature_dim(&self) -> usize;
    fn forward(&mut self, images: &[&Image], mode: Mode) -> Result<Array2<f32>>;
    fn backward(&mut self, grad_features: &Array2<f32>);
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Every persistent tensor (parameters and running statistics) by name.
    fn state(&self) -> Vec<(String, &Array2<f32>)>;
    fn state_mut(&mut self) -> Vec<(String, &mut Array2<f32>)>;
    fn box_clone(&self) -> Box<dyn Encoder>;
}

impl Clone for Box<dyn Encoder> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    /// Stack of conv3x3 → batch norm → ReLU → 2×2 max-pool blocks followed by
    /// global average pooling. `frozen_blocks` leading blocks receive no updates.
    SmallConv {
        in_channels: usize,
        widths: Vec<usize>,
        frozen_blocks: usize,
    },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::SmallConv {
            in_channels: 3,
            widths: vec![16, 32, 64, 128],
            frozen_blocks: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            EncoderConfig::SmallConv {
                in_channels,
                widths,
                frozen_blocks,
            } => {
                if *in_channels == 0 || widths.is_empty() || widths.contains(&0) {
                    return Err(RosError::validation("encoder widths and channels must be positive"));
                }
                if *frozen_blocks > widths.len() {
                    return Err(RosError::validation(format!(
                        "frozen_blocks={frozen_blocks} exceeds {} encoder blocks",
                        widths.len()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Box<dyn Encoder>> {
        self.validate()?;
        match self {
            EncoderConfig::SmallConv { .. } => Ok(Box::new(SmallConvEncoder::new(self.clone(), rng))),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv3x3,
    bn: BatchNorm,
    relu: LeakyRelu,
    pool: MaxPool2,
}

#[derive(Clone, Debug)]
pub struct SmallConvEncoder {
    config: EncoderConfig,
    blocks: Vec<ConvBlock>,
    in_channels: usize,
    frozen_blocks: usize,
    spatial: Vec<Spatial>,
    last: Option<Spatial>,
}

impl SmallConvEncoder {
    fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Self {
        let EncoderConfig::SmallConv {
            in_channels,
            ref widths,
            frozen_blocks,
        } = config;
        let mut prev = in_channels;
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let block = ConvBlock {
                    conv: Conv3x3::new(&format!("encoder.block{i}.conv"), prev, w, rng),
                    bn: BatchNorm::new(&format!("encoder.block{i}.bn"), w),
                    relu: LeakyRelu::new(0.0),
                    pool: MaxPool2::default(),
                };
                prev = w;
                block
            })
            .collect::<Vec<_>>();
        let mut enc = Self {
            config: config.clone(),
            blocks,
            in_channels,
            frozen_blocks,
            spatial: Vec::new(),
            last: None,
        };
        for (i, block) in enc.blocks.iter_mut().enumerate() {
            let trainable = i >= frozen_blocks;
            block.conv.weight.trainable = trainable;
            block.bn.gamma.trainable = trainable;
            block.bn.beta.trainable = trainable;
        }
        enc
    }

    fn pack(&self, images: &[&Image]) -> Result<(Array2<f32>, Spatial)> {
        let first = images
            .first()
            .ok_or_else(|| RosError::shape("encoder called with an empty batch"))?;
        let (h, w) = (first.height(), first.width());
        if first.channels() != self.in_channels {
            return Err(RosError::shape(format!(
                "encoder expects {} channels, got {}",
                self.in_channels,
                first.channels()
            )));
        }
        let sp = Spatial { n: images.len(), h, w };
        let hw = h * w;
        let mut x = Array2::<f32>::zeros((self.in_channels, sp.columns()));
        for (n, img) in images.iter().enumerate() {
            if img.height() != h || img.width() != w || img.channels() != self.in_channels {
                return Err(RosError::shape("images in a batch must share one shape"));
            }
            let data = img.data();
            for p in 0..hw {
                for c in 0..self.in_channels {
                    x[[c, n * hw + p]] = data[p * self.in_channels + c];
                }
            }
        }
        Ok((x, sp))
    }
}

impl Encoder for SmallConvEncoder {
    fn config(&self) -> EncoderConfig {
        self.config.clone()
    }

    fn feature_dim(&self) -> usize {
        self.blocks
            .last()
            .map(|b| b.bn.gamma.value.nrows())
            .unwrap_or(self.in_channels)
    }

    fn forward(&mut self, images: &[&Image], mode: Mode) -> Result<Array2<f32>> {
        let (mut x, mut sp) = self.pack(images)?;
        let mut spatial = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            if sp.h < 2 || sp.w < 2 {
                return Err(RosError::shape("input too small for the encoder depth"));
            }
            spatial.push(sp);
            let y = block.conv.forward(&x, sp, mode);
            let y = block.bn.forward(&y, mode);
            let y = block.relu.forward(y, mode);
            x = block.pool.forward(&y, sp, mode);
            sp = MaxPool2::output(sp);
        }
        if mode == Mode::Train {
            self.spatial = spatial;
            self.last = Some(sp);
        }
        Ok(global_avg_pool(&x, sp))
    }

    fn backward(&mut self, grad_features: &Array2<f32>) {
        let last = self.last.take().expect("encoder backward without a training forward");
        let mut grad = global_avg_pool_backward(grad_features, last);
        let frozen = self.frozen_blocks;
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            if i < frozen {
                break;
            }
            grad = block.pool.backward(&grad);
            grad = block.relu.backward(grad);
            grad = block.bn.backward(&grad);
            match block.conv.backward(&grad, i > frozen) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }

    fn params(&self) -> Vec<&Param> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.conv.weight, &b.bn.gamma, &b.bn.beta])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.conv.weight, &mut b.bn.gamma, &mut b.bn.beta])
            .collect()
    }

    fn state(&self) -> Vec<(String, &Array2<f32>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((b.conv.weight.name.clone(), &b.conv.weight.value));
            out.push((b.bn.gamma.name.clone(), &b.bn.gamma.value));
            out.push((b.bn.beta.name.clone(), &b.bn.beta.value));
            out.push((format!("encoder.block{i}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("encoder.block{i}.bn.running_var"), &b.bn.running_var));
        }
        out
    }

    fn state_mut(&mut self) -> Vec<(String, &mut Array2<f32>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((b.conv.weight.name.clone(), &mut b.conv.weight.value));
            out.push((b.bn.gamma.name.clone(), &mut b.bn.gamma.value));
            out.push((b.bn.beta.name.clone(), &mut b.bn.beta.value));
            out.push((format!("encoder.block{i}.bn.running_mean"), &mut b.bn.running_mean));
            out.push((format!("encoder.block{i}.bn.running_var"), &mut b.bn.running_var));
        }
        out
    }

    fn box_clone(&self) -> Box<dyn Encoder> {
        Box::new(self.clone())
    }
}

//! Miniaturized residual backbone: a two-conv stride-2 stem (the pooling
//! stage is replaced by a stride-2 conv so every op stays in the
//! differentiable kernel set), then four residual stages producing the
//! feature pyramid at exact 4x / 8x / 16x / 32x reductions of the input.
//! A width multiplier scales the (64, 128, 256, 512) channel schedule
//! down to desk size.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, ConvBNReLU};
use crate::ops::{self, Mode};
use crate::params::{with_prefix, HasParams, Param};
use crate::tensor::{Scalar, Tensor4};

pub const BASE_CHANNELS: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, Copy)]
pub struct BackboneConfig {
    /// width multiplier in (0, 1]
    pub mu: f64,
    pub blocks_per_stage: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            mu: 1.0,
            blocks_per_stage: 2,
        }
    }
}

impl BackboneConfig {
    pub fn channels(&self) -> [usize; 4] {
        BASE_CHANNELS.map(|base| ((self.mu * base as f64).round() as usize).max(4))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!(
                "width multiplier must be in (0, 1], got {}",
                self.mu
            )));
        }
        if self.blocks_per_stage == 0 {
            return Err(Error::Config("blocks_per_stage must be >= 1".into()));
        }
        Ok(())
    }
}

/// The four stage outputs at 4x/8x/16x/32x reduction.
pub struct FeaturePyramid<T> {
    pub f4: Tensor4<T>,
    pub f8: Tensor4<T>,
    pub f16: Tensor4<T>,
    pub f32x: Tensor4<T>,
}

/// skip + cbr2(cbr1(x)); the skip is the identity, or a 1x1 stride-2
/// projection (conv + BN) when the block changes resolution or width.
/// With all residual-branch weights zero the block reduces to its skip.
pub struct ResidualBlock<T> {
    cbr1: ConvBNReLU<T>,
    cbr2: ConvBNReLU<T>,
    projection: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    cached_skip_input: bool,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> ResidualBlock<T> {
        let projection = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv2d::new(c_in, c_out, 1, stride, 0, false, rng),
                BatchNorm2d::new(c_out),
            )
        });
        ResidualBlock {
            cbr1: ConvBNReLU::new(c_in, c_out, 3, stride, rng),
            cbr2: ConvBNReLU::new(c_out, c_out, 3, 1, rng),
            projection,
            cached_skip_input: false,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let branch = self.cbr2.forward(&self.cbr1.forward(x, mode)?, mode)?;
        let skip = match self.projection.as_mut() {
            Some((conv, bn)) => bn.forward(&conv.forward(x, mode)?, mode)?,
            None => x.clone(),
        };
        self.cached_skip_input = mode == Mode::Train;
        ops::add(&skip, &branch)
    }

    /// Returns grad with respect to the block input.
    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        assert!(
            self.cached_skip_input,
            "residual block backward requires a cached train-mode forward"
        );
        let g_branch = self.cbr1.backward(&self.cbr2.backward(grad_out)?)?;
        let g_skip = match self.projection.as_mut() {
            Some((conv, bn)) => conv.backward(&bn.backward(grad_out))?,
            None => grad_out.clone(),
        };
        ops::add(&g_branch, &g_skip)
    }
}

impl<T: Scalar> HasParams<T> for ResidualBlock<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("cbr1", self.cbr1.params_mut());
        v.extend(with_prefix("cbr2", self.cbr2.params_mut()));
        if let Some((conv, bn)) = self.projection.as_mut() {
            v.extend(with_prefix("proj.conv", conv.params_mut()));
            v.extend(with_prefix("proj.bn", bn.params_mut()));
        }
        v
    }
}

pub struct Backbone<T> {
    stem1: ConvBNReLU<T>,
    stem2: ConvBNReLU<T>,
    stages: [Vec<ResidualBlock<T>>; 4],
    channels: [usize; 4],
}

impl<T: Scalar> Backbone<T> {
    pub fn new(cfg: &BackboneConfig, in_channels: usize, rng: &mut ChaCha8Rng) -> Result<Backbone<T>> {
        cfg.validate()?;
        let ch = cfg.channels();
        let stem1 = ConvBNReLU::new(in_channels, ch[0], 3, 2, rng);
        let stem2 = ConvBNReLU::new(ch[0], ch[0], 3, 2, rng);
        let mut stages: [Vec<ResidualBlock<T>>; 4] = [vec![], vec![], vec![], vec![]];
        let mut c_in = ch[0];
        for (si, stage) in stages.iter_mut().enumerate() {
            let c_out = ch[si];
            // stage 0 keeps the stem's 4x resolution; later stages halve
            let first_stride = if si == 0 { 1 } else { 2 };
            stage.push(ResidualBlock::new(c_in, c_out, first_stride, rng));
            for _ in 1..cfg.blocks_per_stage {
                stage.push(ResidualBlock::new(c_out, c_out, 1, rng));
            }
            c_in = c_out;
        }
        Ok(Backbone {
            stem1,
            stem2,
            stages,
            channels: ch,
        })
    }

    pub fn channels(&self) -> [usize; 4] {
        self.channels
    }

    pub fn check_input(x_h: usize, x_w: usize) -> Result<()> {
        if x_h % 32 != 0 || x_w % 32 != 0 {
            return Err(Error::geometry(
                "backbone",
                format!("input spatial size {x_h}x{x_w} must be divisible by 32"),
            ));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<FeaturePyramid<T>> {
        Self::check_input(x.h(), x.w())?;
        let mut cur = self.stem2.forward(&self.stem1.forward(x, mode)?, mode)?;
        let mut outs: Vec<Tensor4<T>> = Vec::with_capacity(4);
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                cur = block.forward(&cur, mode)?;
            }
            outs.push(cur.clone());
        }
        let f32x = outs.pop().unwrap();
        let f16 = outs.pop().unwrap();
        let f8 = outs.pop().unwrap();
        let f4 = outs.pop().unwrap();
        Ok(FeaturePyramid { f4, f8, f16, f32x })
    }

    /// Takes the gradients flowing into the four pyramid outputs and
    /// returns the gradient with respect to the backbone input.
    pub fn backward(&mut self, grads: FeaturePyramid<T>) -> Result<Tensor4<T>> {
        let stage_grads = [grads.f4, grads.f8, grads.f16, grads.f32x];
        let mut flowing: Option<Tensor4<T>> = None;
        for (si, stage) in self.stages.iter_mut().enumerate().rev() {
            let mut g = match flowing.take() {
                Some(g) => ops::add(&g, &stage_grads[si])?,
                None => stage_grads[si].clone(),
            };
            for block in stage.iter_mut().rev() {
                g = block.backward(&g)?;
            }
            flowing = Some(g);
        }
        let g = flowing.expect("at least one stage");
        self.stem1.backward(&self.stem2.backward(&g)?)
    }
}

impl<T: Scalar> HasParams<T> for Backbone<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("stem1", self.stem1.params_mut());
        v.extend(with_prefix("stem2", self.stem2.params_mut()));
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                v.extend(with_prefix(&format!("rb{}.{bi}", si + 1), block.params_mut()));
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn full_width_pyramid_shapes_match_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BackboneConfig {
            mu: 1.0,
            blocks_per_stage: 2,
        };
        let mut bb = Backbone::<f32>::new(&cfg, 3, &mut rng).unwrap();
        let x = Tensor4::full(2, 3, 64, 64, 0.1);
        let p = bb.forward(&x, Mode::Train).unwrap();
        assert_eq!(p.f4.shape(), crate::tensor::Shape4::new(2, 64, 16, 16));
        assert_eq!(p.f8.shape(), crate::tensor::Shape4::new(2, 128, 8, 8));
        assert_eq!(p.f16.shape(), crate::tensor::Shape4::new(2, 256, 4, 4));
        assert_eq!(p.f32x.shape(), crate::tensor::Shape4::new(2, 512, 2, 2));
    }

    #[test]
    fn quarter_width_scales_channels_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BackboneConfig {
            mu: 0.25,
            blocks_per_stage: 2,
        };
        assert_eq!(cfg.channels(), [16, 32, 64, 128]);
        let mut bb = Backbone::<f32>::new(&cfg, 3, &mut rng).unwrap();
        let x = Tensor4::full(2, 3, 64, 64, 0.1);
        let p = bb.forward(&x, Mode::Train).unwrap();
        assert_eq!(p.f4.shape(), crate::tensor::Shape4::new(2, 16, 16, 16));
        assert_eq!(p.f8.shape(), crate::tensor::Shape4::new(2, 32, 8, 8));
        assert_eq!(p.f16.shape(), crate::tensor::Shape4::new(2, 64, 4, 4));
        assert_eq!(p.f32x.shape(), crate::tensor::Shape4::new(2, 128, 2, 2));
    }

    #[test]
    fn tiny_width_clamps_to_four_channels() {
        let cfg = BackboneConfig {
            mu: 0.01,
            blocks_per_stage: 2,
        };
        assert_eq!(cfg.channels(), [4, 4, 4, 5]);
    }

    #[test]
    fn indivisible_input_is_rejected_before_compute() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BackboneConfig {
            mu: 0.125,
            blocks_per_stage: 1,
        };
        let mut bb = Backbone::<f32>::new(&cfg, 3, &mut rng).unwrap();
        let x = Tensor4::full(1, 3, 48, 64, 0.1);
        assert!(matches!(
            bb.forward(&x, Mode::Train),
            Err(Error::Geometry { .. })
        ));
    }

    #[test]
    fn zero_residual_branch_makes_blocks_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = ResidualBlock::<f64>::new(4, 4, 1, &mut rng);
        // zero the branch weights; BN(0) = beta = 0, relu(0) = 0
        for (name, p) in block.params_mut() {
            if name.contains("conv.weight") {
                p.value.fill(0.0);
            }
        }
        let x = Tensor4::from_vec(1, 4, 5, 5, (0..100).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y, x);
    }
}

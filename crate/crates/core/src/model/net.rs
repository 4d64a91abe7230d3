//! The assembled cascade: 4 horizontal paths (4x, 8x, 16x, 32x) and up to
//! 3 vertical stages. Stage k runs the pyramid-fusion block on the path
//! 3-k map from the previous stage (the raw 32x backbone map for stage 1)
//! and fuses downward through selective-resolution blocks until the
//! variant's target path. Backbone maps are pruned to the working width c
//! by 1x1 conv-bn-relu blocks at the stage where a path first consumes
//! one. The head is a 1x1 conv to class logits on the final 4x map,
//! bilinearly upsampled by 4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig, FeaturePyramid};
use crate::blocks::{Spfm, Srm};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvBNReLU};
use crate::model::config::ModelConfig;
use crate::ops::{self, Mode};
use crate::params::{with_prefix, HasParams, Param};
use crate::tensor::{Scalar, Tensor4};

/// The global-context block at the top of each stage: the pyramid-fusion
/// module, or its ablation replacement (a single 1x1 conv-bn-relu).
enum ContextBlock<T> {
    Spfm(Spfm<T>),
    Conv(ConvBNReLU<T>),
}

impl<T: Scalar> ContextBlock<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match self {
            ContextBlock::Spfm(s) => s.forward(x, mode),
            ContextBlock::Conv(c) => c.forward(x, mode),
        }
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            ContextBlock::Spfm(s) => s.backward(grad_out),
            ContextBlock::Conv(c) => c.backward(grad_out),
        }
    }
}

struct Stage<T> {
    context: ContextBlock<T>,
    /// fusion steps in execution order: path spfm_path-1 down to fuse_to
    srms: Vec<Srm<T>>,
    /// aligned with srms: whether the step's high input is a freshly
    /// pruned backbone map (true) or a map produced by an earlier stage
    high_from_backbone: Vec<bool>,
}

/// Per-stage refined maps at the 4x path, when the stage reaches it.
#[derive(Debug, Clone)]
pub struct StageOutputs<T> {
    pub low_refined: Option<Tensor4<T>>,
    pub mid_refined: Option<Tensor4<T>>,
    pub high_refined: Option<Tensor4<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTap {
    Low,
    Mid,
    High,
}

impl StageTap {
    pub fn parse(s: &str) -> Result<StageTap> {
        match s {
            "low" => Ok(StageTap::Low),
            "mid" => Ok(StageTap::Mid),
            "high" => Ok(StageTap::High),
            other => Err(Error::Config(format!(
                "unknown stage tap '{other}' (expected low, mid or high)"
            ))),
        }
    }
}

impl<T: Scalar> StageOutputs<T> {
    pub fn get(&self, tap: StageTap) -> Option<&Tensor4<T>> {
        match tap {
            StageTap::Low => self.low_refined.as_ref(),
            StageTap::Mid => self.mid_refined.as_ref(),
            StageTap::High => self.high_refined.as_ref(),
        }
    }
}

pub struct ForwardOutput<T> {
    /// (n, num_classes, H, W) raw logits; class probabilities are a
    /// softmax over the channel axis at evaluation time
    pub logits: Tensor4<T>,
    pub stage_outputs: StageOutputs<T>,
}

pub struct Csrnet<T> {
    pub cfg: ModelConfig,
    backbone: Backbone<T>,
    /// pruning convs for paths 0..=2 (4x, 8x, 16x), present where used
    prune: [Option<ConvBNReLU<T>>; 3],
    stages: Vec<Stage<T>>,
    head: Conv2d<T>,
}

pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Csrnet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb_cfg = BackboneConfig {
        mu: cfg.mu,
        ..BackboneConfig::default()
    };
    let backbone = Backbone::new(&bb_cfg, 3, &mut rng)?;
    let ch = backbone.channels();

    // simulate the path registers to find where backbone maps are pruned
    let mut have_path = [false; 4];
    let mut prune_at: Vec<Vec<bool>> = Vec::new();
    for stage in 0..cfg.stages {
        let sp = ModelConfig::spfm_path(stage);
        let ft = cfg.fuse_to(stage);
        let mut from_backbone = Vec::new();
        for p in (ft..sp).rev() {
            from_backbone.push(!have_path[p]);
            have_path[p] = true;
        }
        prune_at.push(from_backbone);
    }

    let mut prune: [Option<ConvBNReLU<T>>; 3] = [None, None, None];
    for (stage, flags) in prune_at.iter().enumerate() {
        let sp = ModelConfig::spfm_path(stage);
        for (i, &fresh) in flags.iter().enumerate() {
            let p = sp - 1 - i;
            if fresh {
                prune[p] = Some(ConvBNReLU::new(ch[p], cfg.c, 1, 1, &mut rng));
            }
        }
    }

    let mut stages = Vec::new();
    for (stage, flags) in prune_at.into_iter().enumerate() {
        let sp = ModelConfig::spfm_path(stage);
        let c_in = if stage == 0 { ch[3] } else { cfg.c };
        let context = if cfg.spfm_enabled {
            ContextBlock::Spfm(Spfm::new(c_in, cfg.c, &mut rng))
        } else {
            ContextBlock::Conv(ConvBNReLU::new(c_in, cfg.c, 1, 1, &mut rng))
        };
        let ft = cfg.fuse_to(stage);
        let srms = (ft..sp)
            .map(|_| Srm::new(cfg.c, cfg.attention_enabled, cfg.fuse_conv1x1_enabled, &mut rng))
            .collect();
        stages.push(Stage {
            context,
            srms,
            high_from_backbone: flags,
        });
    }

    let head = Conv2d::new(cfg.c, cfg.num_classes, 1, 1, 0, true, &mut rng);
    Ok(Csrnet {
        cfg: *cfg,
        backbone,
        prune,
        stages,
        head,
    })
}

impl<T: Scalar> Csrnet<T> {
    pub fn num_classes(&self) -> usize {
        self.head.weight.value.n()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        let pyramid = self.backbone.forward(x, mode)?;
        let raw = [pyramid.f4, pyramid.f8, pyramid.f16, pyramid.f32x];
        let mut latest: [Option<Tensor4<T>>; 4] = [None, None, None, None];
        let mut taps: [Option<Tensor4<T>>; 3] = [None, None, None];

        for (k, stage) in self.stages.iter_mut().enumerate() {
            let sp = ModelConfig::spfm_path(k);
            let ft = self.cfg.fuse_to(k);
            let src = if k == 0 {
                raw[3].clone()
            } else {
                latest[sp].clone().expect("previous stage fills the spfm path")
            };
            let mut cur = stage.context.forward(&src, mode)?;
            for (i, p) in (ft..sp).rev().enumerate() {
                let high = if stage.high_from_backbone[i] {
                    self.prune[p]
                        .as_mut()
                        .expect("prune conv exists where a backbone map is consumed")
                        .forward(&raw[p], mode)?
                } else {
                    latest[p].clone().expect("filled by an earlier stage")
                };
                cur = stage.srms[i].forward(&high, &cur, mode)?;
                latest[p] = Some(cur.clone());
            }
            if ft == 0 {
                taps[k] = Some(cur);
            }
        }

        let final_map = latest[0]
            .as_ref()
            .expect("the last stage always reaches the 4x path");
        let logits4 = self.head.forward(final_map, mode)?;
        let logits = ops::bilinear_upsample_forward(&logits4, 4)?;
        let [low, mid, high] = taps;
        Ok(ForwardOutput {
            logits,
            stage_outputs: StageOutputs {
                low_refined: low,
                mid_refined: mid,
                high_refined: high,
            },
        })
    }

    /// Reverse pass from the logits gradient; accumulates parameter
    /// gradients and returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (gh, gw) = (grad_logits.h(), grad_logits.w());
        let g4 = ops::bilinear_resize_backward(gh / 4, gw / 4, grad_logits);
        let g_final = self.head.backward(&g4)?;

        let mut grad_latest: [Option<Tensor4<T>>; 4] = [None, None, None, None];
        let mut grad_raw: [Option<Tensor4<T>>; 4] = [None, None, None, None];
        grad_latest[0] = Some(g_final);

        fn acc<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) -> Result<()> {
            *slot = Some(match slot.take() {
                Some(prev) => ops::add(&prev, &g)?,
                None => g,
            });
            Ok(())
        }

        for (k, stage) in self.stages.iter_mut().enumerate().rev() {
            let sp = ModelConfig::spfm_path(k);
            let ft = self.cfg.fuse_to(k);
            let mut g_cur = grad_latest[ft]
                .take()
                .expect("stage output gradient present");
            for p in ft..sp {
                let i = sp - 1 - p;
                let (g_high, g_low) = stage.srms[i].backward(&g_cur)?;
                if stage.high_from_backbone[i] {
                    let g_raw = self.prune[p]
                        .as_mut()
                        .expect("prune conv exists where a backbone map is consumed")
                        .backward(&g_high)?;
                    acc(&mut grad_raw[p], g_raw)?;
                } else {
                    acc(&mut grad_latest[p], g_high)?;
                }
                g_cur = if p + 1 < sp {
                    match grad_latest[p + 1].take() {
                        Some(cross) => ops::add(&g_low, &cross)?,
                        None => g_low,
                    }
                } else {
                    g_low
                };
            }
            let g_src = stage.context.backward(&g_cur)?;
            if k == 0 {
                acc(&mut grad_raw[3], g_src)?;
            } else {
                acc(&mut grad_latest[sp], g_src)?;
            }
        }

        let [g4x, g8x, g16x, g32x] = grad_raw;
        let zero_like = |p: &Option<Tensor4<T>>| -> Tensor4<T> {
            p.clone().expect("every backbone path is consumed")
        };
        let grads = FeaturePyramid {
            f4: zero_like(&g4x),
            f8: zero_like(&g8x),
            f16: zero_like(&g16x),
            f32x: zero_like(&g32x),
        };
        self.backbone.backward(grads)
    }
}

impl<T: Scalar> HasParams<T> for Csrnet<T> {
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v = with_prefix("backbone", self.backbone.params_mut());
        for (p, conv) in self.prune.iter_mut().enumerate() {
            if let Some(conv) = conv {
                v.extend(with_prefix(&format!("prune{}", 4 << p), conv.params_mut()));
            }
        }
        for (k, stage) in self.stages.iter_mut().enumerate() {
            let prefix = format!("stage{}", k + 1);
            match &mut stage.context {
                ContextBlock::Spfm(s) => v.extend(with_prefix(&format!("{prefix}.spfm"), s.params_mut())),
                ContextBlock::Conv(c) => {
                    v.extend(with_prefix(&format!("{prefix}.context_conv"), c.params_mut()))
                }
            }
            let sp = ModelConfig::spfm_path(k);
            for (i, srm) in stage.srms.iter_mut().enumerate() {
                let reduction = 4 << (sp - 1 - i);
                v.extend(with_prefix(&format!("{prefix}.srm{reduction}"), srm.params_mut()));
            }
        }
        v.extend(with_prefix("head", self.head.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;
    use crate::params::trainable_count;

    fn cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            stages: 3,
            c: 8,
            mu: 0.125,
            num_classes: 5,
            ..ModelConfig::default()
        }
    }

    fn srm_count<T: Scalar>(model: &Csrnet<T>) -> usize {
        model.stages.iter().map(|s| s.srms.len()).sum()
    }

    fn spfm_count<T: Scalar>(model: &Csrnet<T>) -> usize {
        model
            .stages
            .iter()
            .filter(|s| matches!(s.context, ContextBlock::Spfm(_)))
            .count()
    }

    #[test]
    fn heavy_has_three_spfm_and_six_srm() {
        let model = build_model::<f32>(&cfg(Variant::Heavy), 0).unwrap();
        assert_eq!(spfm_count(&model), 3);
        assert_eq!(srm_count(&model), 6);
    }

    #[test]
    fn medium_has_four_srm_and_light_three() {
        let medium = build_model::<f32>(&cfg(Variant::Medium), 0).unwrap();
        assert_eq!(spfm_count(&medium), 3);
        assert_eq!(srm_count(&medium), 4);
        let light = build_model::<f32>(&cfg(Variant::Light), 0).unwrap();
        assert_eq!(spfm_count(&light), 3);
        assert_eq!(srm_count(&light), 3);
    }

    #[test]
    fn parameter_count_strictly_decreases_heavy_medium_light() {
        let mut heavy = build_model::<f32>(&cfg(Variant::Heavy), 0).unwrap();
        let mut medium = build_model::<f32>(&cfg(Variant::Medium), 0).unwrap();
        let mut light = build_model::<f32>(&cfg(Variant::Light), 0).unwrap();
        let (h, m, l) = (
            trainable_count(&mut heavy),
            trainable_count(&mut medium),
            trainable_count(&mut light),
        );
        assert!(h > m && m > l, "{h} {m} {l}");
    }

    #[test]
    fn forward_shapes_and_taps() {
        let mut model = build_model::<f32>(&cfg(Variant::Heavy), 1).unwrap();
        let x = Tensor4::full(1, 3, 64, 64, 0.2);
        let out = model.forward(&x, Mode::Train).unwrap();
        assert_eq!(out.logits.shape(), crate::tensor::Shape4::new(1, 5, 64, 64));
        for tap in [
            &out.stage_outputs.low_refined,
            &out.stage_outputs.mid_refined,
            &out.stage_outputs.high_refined,
        ] {
            let t = tap.as_ref().unwrap();
            assert_eq!(t.shape(), crate::tensor::Shape4::new(1, 8, 16, 16));
        }

        let mut light = build_model::<f32>(&cfg(Variant::Light), 1).unwrap();
        let out = light.forward(&x, Mode::Train).unwrap();
        assert!(out.stage_outputs.low_refined.is_none());
        assert!(out.stage_outputs.mid_refined.is_none());
        assert!(out.stage_outputs.high_refined.is_some());
    }

    #[test]
    fn truncated_heavy_taps_stop_at_the_truncation() {
        let mut c = cfg(Variant::Heavy);
        c.stages = 2;
        let mut model = build_model::<f32>(&c, 1).unwrap();
        let x = Tensor4::full(1, 3, 32, 32, 0.2);
        let out = model.forward(&x, Mode::Train).unwrap();
        assert!(out.stage_outputs.low_refined.is_some());
        assert!(out.stage_outputs.mid_refined.is_some());
        assert!(out.stage_outputs.high_refined.is_none());
        assert_eq!(out.logits.shape(), crate::tensor::Shape4::new(1, 5, 32, 32));
    }

    #[test]
    fn batch_permutation_permutes_eval_logits() {
        let mut model = build_model::<f64>(&cfg(Variant::Light), 5).unwrap();
        // prime running stats, then evaluate
        let warm = Tensor4::full(2, 3, 32, 32, 0.1);
        model.forward(&warm, Mode::Train).unwrap();

        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut ab = a.clone();
        ab.extend_from_slice(&b);
        let mut ba = b.clone();
        ba.extend_from_slice(&a);
        let x_ab = Tensor4::from_vec(2, 3, 32, 32, ab).unwrap();
        let x_ba = Tensor4::from_vec(2, 3, 32, 32, ba).unwrap();
        let y_ab = model.forward(&x_ab, Mode::Eval).unwrap().logits;
        let y_ba = model.forward(&x_ba, Mode::Eval).unwrap().logits;
        for ch in 0..5 {
            assert_eq!(y_ab.plane(0, ch), y_ba.plane(1, ch));
            assert_eq!(y_ab.plane(1, ch), y_ba.plane(0, ch));
        }
    }

    #[test]
    fn spfm_replacement_changes_no_shapes() {
        let mut c = cfg(Variant::Light);
        c.spfm_enabled = false;
        let mut model = build_model::<f32>(&c, 2).unwrap();
        let x = Tensor4::full(1, 3, 64, 64, 0.2);
        let out = model.forward(&x, Mode::Train).unwrap();
        assert_eq!(out.logits.shape(), crate::tensor::Shape4::new(1, 5, 64, 64));
        assert_eq!(
            out.stage_outputs.high_refined.unwrap().shape(),
            crate::tensor::Shape4::new(1, 8, 16, 16)
        );
    }
}

//! Procedural multi-scale segmentation scenes, the on-disk dataset
//! format, and the training-time augmentation pipeline.

pub mod augment;
pub mod format;
pub mod scene;

pub use augment::{augment, augment_with, AugmentParams, SCALE_CHOICES};
pub use format::{Dataset, DatasetReader, RawSample, DATASET_MAGIC, DATASET_VERSION};
pub use scene::{generate_dataset, generate_dataset_file, generate_scenes, SceneSpec, SceneTags};

use crate::tensor::{Scalar, Tensor4};

/// Integer label grid; 255 is the ignore index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn full(h: usize, w: usize, v: u8) -> LabelMap {
        LabelMap {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }
}

/// One scene: an RGB image in [0, 1] stored as a (1, 3, H, W) tensor and
/// its pixel-exact label map.
#[derive(Debug, Clone)]
pub struct SegSample<T> {
    pub image: Tensor4<T>,
    pub labels: LabelMap,
}

impl<T: Scalar> SegSample<T> {
    pub fn from_raw(raw: &RawSample) -> SegSample<T> {
        let (h, w) = (raw.h, raw.w);
        let mut data = vec![T::zero(); 3 * h * w];
        let scale = T::from_f64(1.0 / 255.0);
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * 3;
                for ch in 0..3 {
                    data[ch * h * w + y * w + x] =
                        T::from_f64(raw.rgb[src + ch] as f64) * scale;
                }
            }
        }
        SegSample {
            image: Tensor4::from_vec(1, 3, h, w, data).expect("sized by construction"),
            labels: LabelMap {
                h,
                w,
                data: raw.labels.clone(),
            },
        }
    }
}

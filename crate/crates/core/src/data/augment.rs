//! Training augmentation: random horizontal flip, random scale from a
//! fixed spectrum (bilinear for the image, nearest-neighbor for labels),
//! and a random crop to a fixed size. When the scaled sample is smaller
//! than the crop it is placed at a random offset on a zero image /
//! ignore-label canvas.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabelMap, SegSample};
use crate::ops;
use crate::tensor::{Scalar, Tensor4};

pub const SCALE_CHOICES: [f64; 6] = [0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    /// source offset when the scaled sample is at least crop-sized,
    /// destination offset on the padded canvas otherwise
    pub off_y: usize,
    pub off_x: usize,
}

fn flip_image<T: Scalar>(img: &Tensor4<T>) -> Tensor4<T> {
    let (c, h, w) = (img.c(), img.h(), img.w());
    let mut out = Tensor4::zeros(1, c, h, w);
    for ch in 0..c {
        let src = img.plane(0, ch);
        let dst = out.plane_mut(0, ch);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[y * w + (w - 1 - x)];
            }
        }
    }
    out
}

fn flip_labels(l: &LabelMap) -> LabelMap {
    let mut out = LabelMap::full(l.h, l.w, 0);
    for y in 0..l.h {
        for x in 0..l.w {
            out.set(y, x, l.at(y, l.w - 1 - x));
        }
    }
    out
}

/// Nearest-neighbor label resize with half-pixel source coordinates.
fn resize_labels_nearest(l: &LabelMap, oh: usize, ow: usize) -> LabelMap {
    let mut out = LabelMap::full(oh, ow, 0);
    for y in 0..oh {
        let sy = (((y as f64 + 0.5) * l.h as f64 / oh as f64).floor() as usize).min(l.h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * l.w as f64 / ow as f64).floor() as usize).min(l.w - 1);
            out.set(y, x, l.at(sy, sx));
        }
    }
    out
}

/// Deterministic core; `augment` draws the parameters.
pub fn augment_with<T: Scalar>(
    sample: &SegSample<T>,
    p: &AugmentParams,
    crop: usize,
) -> SegSample<T> {
    let (mut img, mut labels) = (sample.image.clone(), sample.labels.clone());
    if p.flip {
        img = flip_image(&img);
        labels = flip_labels(&labels);
    }
    let sh = ((labels.h as f64) * p.scale).round().max(1.0) as usize;
    let sw = ((labels.w as f64) * p.scale).round().max(1.0) as usize;
    if (sh, sw) != (labels.h, labels.w) {
        img = ops::bilinear_resize_forward(&img, sh, sw).expect("valid resize extents");
        labels = resize_labels_nearest(&labels, sh, sw);
    }

    let mut out_img = Tensor4::zeros(1, img.c(), crop, crop);
    let mut out_labels = LabelMap::full(crop, crop, 255);
    let (src_y, src_x, dst_y, dst_x) = (
        if sh >= crop { p.off_y } else { 0 },
        if sw >= crop { p.off_x } else { 0 },
        if sh >= crop { 0 } else { p.off_y },
        if sw >= crop { 0 } else { p.off_x },
    );
    let copy_h = sh.min(crop);
    let copy_w = sw.min(crop);
    for ch in 0..img.c() {
        let src = img.plane(0, ch);
        let dst = out_img.plane_mut(0, ch);
        for y in 0..copy_h {
            for x in 0..copy_w {
                dst[(dst_y + y) * crop + dst_x + x] = src[(src_y + y) * sw + src_x + x];
            }
        }
    }
    for y in 0..copy_h {
        for x in 0..copy_w {
            out_labels.set(dst_y + y, dst_x + x, labels.at(src_y + y, src_x + x));
        }
    }
    SegSample {
        image: out_img,
        labels: out_labels,
    }
}

pub fn augment<T: Scalar>(sample: &SegSample<T>, crop: usize, rng: &mut ChaCha8Rng) -> SegSample<T> {
    let flip = rng.gen_bool(0.5);
    let scale = SCALE_CHOICES[rng.gen_range(0..SCALE_CHOICES.len())];
    let sh = ((sample.labels.h as f64) * scale).round().max(1.0) as usize;
    let sw = ((sample.labels.w as f64) * scale).round().max(1.0) as usize;
    let range_y = sh.abs_diff(crop);
    let range_x = sw.abs_diff(crop);
    let off_y = if range_y == 0 { 0 } else { rng.gen_range(0..=range_y) };
    let off_x = if range_x == 0 { 0 } else { rng.gen_range(0..=range_x) };
    augment_with(
        sample,
        &AugmentParams {
            flip,
            scale,
            off_y,
            off_x,
        },
        crop,
    )
}

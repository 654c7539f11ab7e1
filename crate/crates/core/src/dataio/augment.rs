//! Joint geometric augmentation: scale, horizontal flip, crop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::sample::RgbdSample;
use crate::error::{contract, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Output `(height, width)`.
    pub crop: (usize, usize),
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
    pub void_label: u8,
}

impl AugmentConfig {
    pub fn new(crop: (usize, usize), void_label: u8) -> Self {
        AugmentConfig { crop, scale_min: 0.75, scale_max: 1.25, flip_prob: 0.5, void_label }
    }
}

/// One geometric draw. `offset` is the crop's top-left corner in the scaled
/// image and may be negative when the scaled image is smaller than the crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub flip: bool,
    pub offset: (isize, isize),
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw { scale: 1.0, flip: false, offset: (0, 0) };
}

fn scaled_len(len: usize, scale: f64) -> usize {
    ((len as f64 * scale).round() as usize).max(1)
}

fn draw_offset<R: Rng + ?Sized>(scaled: usize, crop: usize, rng: &mut R) -> isize {
    if scaled >= crop {
        rng.random_range(0..=scaled - crop) as isize
    } else {
        -(rng.random_range(0..=crop - scaled) as isize)
    }
}

pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut R) -> AugmentDraw {
    let scale = if cfg.scale_max > cfg.scale_min { rng.random_range(cfg.scale_min..=cfg.scale_max) } else { cfg.scale_min };
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let oy = draw_offset(scaled_len(height, scale), cfg.crop.0, rng);
    let ox = draw_offset(scaled_len(width, scale), cfg.crop.1, rng);
    AugmentDraw { scale, flip, offset: (oy, ox) }
}

/// Source coordinate of each output row/column, `None` outside the scaled
/// image's support.
fn axis_map(out_len: usize, offset: isize, src_len: usize, scale: f64, flip: bool) -> Vec<Option<f64>> {
    let scaled = scaled_len(src_len, scale) as isize;
    let ratio = src_len as f64 / scaled as f64;
    (0..out_len)
        .map(|o| {
            let mut p = o as isize + offset;
            if p < 0 || p >= scaled {
                return None;
            }
            if flip {
                p = scaled - 1 - p;
            }
            Some(((p as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src_len - 1) as f64))
        })
        .collect()
}

fn lerp_taps(pos: f64, len: usize) -> (usize, usize, f32) {
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, (pos - i0 as f64) as f32)
}

fn resample(src: &Tensor<f32>, ys: &[Option<f64>], xs: &[Option<f64>]) -> Tensor<f32> {
    let s = src.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ys.len(), xs.len()));
    for c in 0..s.c {
        for (oy, y) in ys.iter().enumerate() {
            let Some(y) = *y else { continue };
            let (y0, y1, fy) = lerp_taps(y, s.h);
            for (ox, x) in xs.iter().enumerate() {
                let Some(x) = *x else { continue };
                let (x0, x1, fx) = lerp_taps(x, s.w);
                let top = src.at(0, c, y0, x0) * (1.0 - fx) + src.at(0, c, y0, x1) * fx;
                let bottom = src.at(0, c, y1, x0) * (1.0 - fx) + src.at(0, c, y1, x1) * fx;
                out.set(0, c, oy, ox, top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

fn resample_labels(src: &LabelMap, ys: &[Option<f64>], xs: &[Option<f64>], void: u8) -> LabelMap {
    let mut out = LabelMap::filled(ys.len(), xs.len(), void);
    for (oy, y) in ys.iter().enumerate() {
        let Some(y) = *y else { continue };
        for (ox, x) in xs.iter().enumerate() {
            let Some(x) = *x else { continue };
            out.set(oy, ox, src.get(y.round() as usize, x.round() as usize));
        }
    }
    out
}

/// Applies one draw identically to rgb, depth and labels. Image channels
/// are bilinear, labels nearest-neighbour; areas outside the scaled image
/// become 0 (images) and void (labels).
pub fn apply(sample: &RgbdSample, d: &AugmentDraw, cfg: &AugmentConfig) -> Result<RgbdSample> {
    contract!(d.scale > 0.0, "augmentation scale must be positive");
    let (h, w) = (sample.height(), sample.width());
    let ys = axis_map(cfg.crop.0, d.offset.0, h, d.scale, false);
    let xs = axis_map(cfg.crop.1, d.offset.1, w, d.scale, d.flip);
    Ok(RgbdSample {
        id: sample.id.clone(),
        rgb: resample(&sample.rgb, &ys, &xs),
        depth: resample(&sample.depth, &ys, &xs),
        labels: resample_labels(&sample.labels, &ys, &xs, cfg.void_label),
        depth_valid: sample.depth_valid,
    })
}

/// Draws from `seed` and applies.
pub fn augment(sample: &RgbdSample, cfg: &AugmentConfig, seed: u64) -> Result<RgbdSample> {
    contract!(
        cfg.crop.0 > 0 && cfg.crop.1 > 0,
        "crop size must be positive, got {}x{}",
        cfg.crop.0,
        cfg.crop.1
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = draw(cfg, sample.height(), sample.width(), &mut rng);
    apply(sample, &d, cfg)
}

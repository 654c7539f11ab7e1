//! Naive reference implementations, written from the definitions with plain
//! nested loops over `Vec<f64>` in NCHW order.

use std::collections::BTreeSet;

use rand::Rng;

use mmaf_core::LabelMap;

/// Cross-correlation with zero padding. Products are accumulated over
/// `(ci, ky, kx)` in order, then the bias is added.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: Option<&[f64]>,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((o * c + ci) * k + ky) * k + kx];
                                acc += wv * xv;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias[o];
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Padded positions are skipped; the average divides by the number of
/// in-bounds taps.
pub fn pool2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    max: bool,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut taps = Vec::new();
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            taps.push(x[(plane * h + iy as usize) * w + ix as usize]);
                        }
                    }
                }
                out.push(if max {
                    taps.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    taps.iter().sum::<f64>() / taps.len() as f64
                });
            }
        }
    }
    (out, oh, ow)
}

/// Per pixel: `exp(l_c − max) / Σ exp(l − max)`.
pub fn softmax(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (b * c + ch) * plane + p;
            let m = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..c).map(|ch| (x[at(ch)] - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for ch in 0..c {
                out[at(ch)] = e[ch] / s;
            }
        }
    }
    out
}

/// `−log p_y`, written as `log Σ exp(l − max) − (l_y − max)`, averaged over
/// non-void pixels in `(n, y, x)` order.
pub fn cross_entropy(x: &[f64], (n, c, h, w): (usize, usize, usize, usize), labels: &[Vec<u8>], void: u8) -> f64 {
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for b in 0..n {
        for p in 0..plane {
            let y = labels[b][p];
            if y == void {
                continue;
            }
            let at = |ch: usize| (b * c + ch) * plane + p;
            let m = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..c).map(|ch| (x[at(ch)] - m).exp()).sum();
            total += s.ln() - (x[at(y as usize)] - m);
            count += 1;
        }
    }
    total / count as f64
}

/// Per-image `(G, M, IoU)` over the classes seen in non-void ground truth or
/// the prediction at those pixels. `None` for an all-void image.
pub fn per_image(pred: &[u8], gt: &[u8], void: u8) -> Option<(f64, f64, f64)> {
    let counted: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] != void).collect();
    if counted.is_empty() {
        return None;
    }
    let classes: BTreeSet<u8> = counted.iter().flat_map(|&i| [gt[i], pred[i]]).collect();
    let correct = counted.iter().filter(|&&i| pred[i] == gt[i]).count();
    let (mut acc_sum, mut acc_n, mut iou_sum, mut iou_n) = (0.0, 0usize, 0.0, 0usize);
    for &l in &classes {
        let tp = counted.iter().filter(|&&i| gt[i] == l && pred[i] == l).count();
        let fneg = counted.iter().filter(|&&i| gt[i] == l && pred[i] != l).count();
        let fpos = counted.iter().filter(|&&i| gt[i] != l && pred[i] == l).count();
        if tp + fneg > 0 {
            acc_sum += tp as f64 / (tp + fneg) as f64;
            acc_n += 1;
        }
        if tp + fneg + fpos > 0 {
            iou_sum += tp as f64 / (tp + fneg + fpos) as f64;
            iou_n += 1;
        }
    }
    Some((correct as f64 / counted.len() as f64, acc_sum / acc_n as f64, iou_sum / iou_n as f64))
}

/// Row-major boundary points of `class`: pixels of the class with an
/// in-image 4-neighbour of another label. The map is embedded in a frame
/// filled with the class itself so that the border never counts.
pub fn boundary(map: &[u8], h: usize, w: usize, class: u8) -> Vec<(usize, usize)> {
    let (fh, fw) = (h + 2, w + 2);
    let mut framed = vec![class; fh * fw];
    for y in 0..h {
        for x in 0..w {
            framed[(y + 1) * fw + x + 1] = map[y * w + x];
        }
    }
    let mut pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y + 1, x + 1);
            if framed[fy * fw + fx] != class {
                continue;
            }
            let nbrs = [framed[(fy - 1) * fw + fx], framed[(fy + 1) * fw + fx], framed[fy * fw + fx - 1], framed[fy * fw + fx + 1]];
            if nbrs.iter().any(|&v| v != class) {
                pts.push((y, x));
            }
        }
    }
    pts
}

/// All-pairs boundary displacement: the mean of the two directed mean
/// nearest-point distances.
pub fn bde(pred: &[u8], gt: &[u8], h: usize, w: usize, class: u8) -> Option<f64> {
    let bp = boundary(pred, h, w, class);
    let bg = boundary(gt, h, w, class);
    if bp.is_empty() || bg.is_empty() {
        return None;
    }
    let directed = |a: &[(usize, usize)], b: &[(usize, usize)]| {
        let mut total = 0.0;
        for &(ay, ax) in a {
            let mut best_sq = f64::INFINITY;
            for &(by, bx) in b {
                let (dy, dx) = (ay as f64 - by as f64, ax as f64 - bx as f64);
                best_sq = best_sq.min(dy * dy + dx * dx);
            }
            total += best_sq.sqrt();
        }
        total / a.len() as f64
    };
    Some(0.5 * (directed(&bp, &bg) + directed(&bg, &bp)))
}

/// Blobby random label map: a few random rectangles painted over a random
/// background, with optional void pixels.
pub fn random_label_map<R: Rng>(rng: &mut R, h: usize, w: usize, classes: u8, void: Option<u8>) -> LabelMap {
    let mut data = vec![rng.random_range(0..classes); h * w];
    for _ in 0..rng.random_range(1..5) {
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (rng.random_range(y0..h) + 1, rng.random_range(x0..w) + 1);
        let l = rng.random_range(0..classes);
        for y in y0..y1 {
            for x in x0..x1 {
                data[y * w + x] = l;
            }
        }
    }
    if let Some(v) = void {
        let p = rng.random_range(0.0..0.3);
        for d in data.iter_mut() {
            if rng.random_bool(p) {
                *d = v;
            }
        }
    }
    LabelMap::new(h, w, data).unwrap()
}

pub fn random_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()
}

use crate::error::{contract, Result};
use crate::labels::LabelMap;
use crate::metrics::cdf::MetricCdf;

/// Pixels of one class that touch a differently labelled 4-neighbour.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundarySet {
    pub class: u8,
    /// `(y, x)` in row-major order.
    pub points: Vec<(usize, usize)>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The image border does not by itself make a pixel a boundary pixel.
pub fn extract_boundary(map: &LabelMap, class: u8) -> BoundarySet {
    let (h, w) = map.dims();
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if map.get(y, x) != class {
                continue;
            }
            let differs = (y > 0 && map.get(y - 1, x) != class)
                || (y + 1 < h && map.get(y + 1, x) != class)
                || (x > 0 && map.get(y, x - 1) != class)
                || (x + 1 < w && map.get(y, x + 1) != class);
            if differs {
                points.push((y, x));
            }
        }
    }
    BoundarySet { class, points }
}

/// Mean over `from` of the Euclidean distance to the nearest point of `to`.
fn directed_mean(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(ay, ax) in from {
        let mut best = f64::INFINITY;
        for &(by, bx) in to {
            let dy = ay as f64 - by as f64;
            let dx = ax as f64 - bx as f64;
            best = best.min((dy * dy + dx * dx).sqrt());
        }
        total += best;
    }
    total / from.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bde {
    /// Mean distance from predicted boundary points to the ground-truth boundary.
    pub pred_to_gt: f64,
    pub gt_to_pred: f64,
}

impl Bde {
    /// Arithmetic mean of the two directed means.
    pub fn value(&self) -> f64 {
        0.5 * (self.pred_to_gt + self.gt_to_pred)
    }
}

/// Both directed boundary displacement means for `class`, or `None` when the
/// class has no boundary in one of the maps.
pub fn bde_directed(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<Bde>> {
    contract!(pred.dims() == gt.dims(), "prediction {:?} and ground truth {:?} differ", pred.dims(), gt.dims());
    let bp = extract_boundary(pred, class);
    let bg = extract_boundary(gt, class);
    if bp.is_empty() || bg.is_empty() {
        return Ok(None);
    }
    Ok(Some(Bde { pred_to_gt: directed_mean(&bp.points, &bg.points), gt_to_pred: directed_mean(&bg.points, &bp.points) }))
}

/// Boundary displacement error of `class` in pixels.
pub fn bde_class(pred: &LabelMap, gt: &LabelMap, class: u8) -> Result<Option<f64>> {
    Ok(bde_directed(pred, gt, class)?.map(|b| b.value()))
}

#[derive(Clone, Debug)]
pub struct ClassBde {
    pub class: u8,
    /// `(image index, bde)` for every image where the class was measurable.
    pub values: Vec<(usize, f64)>,
    /// Images skipped because a boundary set was empty.
    pub excluded: usize,
    pub cdf: Option<MetricCdf>,
}

/// Per-class BDE distribution over `(pred, gt)` pairs.
pub fn bde_report(pairs: &[(LabelMap, LabelMap)], classes: usize) -> Result<Vec<ClassBde>> {
    contract!(!pairs.is_empty(), "BDE report needs at least one image");
    contract!(classes <= 255, "at most 255 classes");
    (0..classes as u8)
        .map(|class| {
            let mut values = Vec::new();
            let mut excluded = 0;
            for (i, (pred, gt)) in pairs.iter().enumerate() {
                match bde_class(pred, gt, class)? {
                    Some(v) => values.push((i, v)),
                    None => excluded += 1,
                }
            }
            let cdf = if values.is_empty() {
                None
            } else {
                Some(MetricCdf::new(&values.iter().map(|v| v.1).collect::<Vec<_>>())?)
            };
            Ok(ClassBde { class, values, excluded, cdf })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(h: usize, w: usize, y0: usize, x0: usize, size: usize) -> LabelMap {
        let mut m = LabelMap::filled(h, w, 0);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                m.set(y, x, 1);
            }
        }
        m
    }

    #[test]
    fn uniform_map_has_no_boundary() {
        assert!(extract_boundary(&LabelMap::filled(4, 4, 2), 2).is_empty());
    }

    #[test]
    fn isolated_pixel() {
        let m = block(5, 5, 2, 2, 1);
        assert_eq!(extract_boundary(&m, 1).points, vec![(2, 2)]);
    }

    #[test]
    fn three_by_three_perimeter() {
        let m = block(7, 7, 2, 2, 3);
        let b = extract_boundary(&m, 1);
        assert_eq!(b.len(), 8);
        assert!(!b.points.contains(&(3, 3)));
    }

    #[test]
    fn shifted_block_displacement() {
        // A 2x2 block is all boundary: half the points coincide, half are 1 away.
        let gt = block(12, 12, 4, 4, 2);
        let pred = block(12, 12, 4, 5, 2);
        assert_eq!(bde_class(&pred, &gt, 1).unwrap(), Some(0.5));
        let pred = block(12, 12, 4, 4, 1);
        let gt = block(12, 12, 4, 5, 1);
        assert_eq!(bde_class(&pred, &gt, 1).unwrap(), Some(1.0));
        assert_eq!(bde_class(&gt, &gt, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn missing_class_is_absent() {
        let gt = block(8, 8, 2, 2, 2);
        let pred = LabelMap::filled(8, 8, 0);
        assert_eq!(bde_class(&pred, &gt, 1).unwrap(), None);
        let report = bde_report(&[(pred, gt)], 3).unwrap();
        assert_eq!(report[1].excluded, 1);
        assert!(report[1].cdf.is_none());
        assert!(report[2].values.is_empty());
    }
}

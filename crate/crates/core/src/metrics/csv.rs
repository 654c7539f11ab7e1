use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::labels::LabelMap;
use crate::metrics::boundary::{bde_report, ClassBde};
use crate::metrics::cdf::MetricCdf;
use crate::metrics::confusion::{per_image_metrics, ConfusionMatrix, DatasetMetrics};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    pub g: f64,
    pub m: f64,
    pub iou: f64,
}

/// Everything the evaluation step writes to disk.
#[derive(Clone, Debug)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub dataset: DatasetMetrics,
    pub per_image: Vec<ImageScore>,
    /// Ids of images whose ground truth is entirely void.
    pub excluded: Vec<String>,
    pub bde: Vec<ClassBde>,
    pub image_ids: Vec<String>,
}

impl EvaluationReport {
    /// Scores `(image_id, pred, gt)` triples in the given order.
    pub fn build(items: &[(String, LabelMap, LabelMap)], classes: usize, void: u8) -> Result<Self> {
        let mut confusion = ConfusionMatrix::new(classes);
        let mut per_image = Vec::new();
        let mut excluded = Vec::new();
        for (id, pred, gt) in items {
            confusion.accumulate(pred, gt, void)?;
            match per_image_metrics(pred, gt, void)? {
                Some((g, m, iou)) => per_image.push(ImageScore { image_id: id.clone(), g, m, iou }),
                None => excluded.push(id.clone()),
            }
        }
        let dataset = confusion.dataset_metrics()?;
        let pairs: Vec<(LabelMap, LabelMap)> = items.iter().map(|(_, p, g)| (p.clone(), g.clone())).collect();
        let bde = bde_report(&pairs, classes)?;
        Ok(EvaluationReport {
            confusion,
            dataset,
            per_image,
            excluded,
            bde,
            image_ids: items.iter().map(|i| i.0.clone()).collect(),
        })
    }

    pub fn cdf(&self, metric: &str) -> Result<MetricCdf> {
        let values: Vec<f64> = self
            .per_image
            .iter()
            .map(|s| match metric {
                "G" => s.g,
                "M" => s.m,
                _ => s.iou,
            })
            .collect();
        MetricCdf::new(&values)
    }
}

pub(crate) fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// `x,F(x)` rows, one per distinct value.
pub fn cdf_csv(cdf: &MetricCdf) -> String {
    let mut s = String::from("x,F(x)\n");
    for (x, f) in cdf.steps() {
        let _ = writeln!(s, "{},{}", f6(x), f6(f));
    }
    s
}

/// Writes `dataset_metrics.csv`, `per_image.csv`, `bde.csv` and
/// `cdf_<metric>.csv` for G, M, IoU and each class's BDE into `dir`.
pub fn write_evaluation(dir: &Path, report: &EvaluationReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let d = &report.dataset;
    let mut s = String::from("metric,value\n");
    for (name, v) in [("G", d.g), ("M", d.m), ("IoU", d.iou), ("W-IoU", d.w_iou)] {
        let _ = writeln!(s, "{name},{}", f6(v));
    }
    fs::write(dir.join("dataset_metrics.csv"), s)?;

    let mut s = String::from("image_id,G,M,IoU\n");
    for r in &report.per_image {
        let _ = writeln!(s, "{},{},{},{}", r.image_id, f6(r.g), f6(r.m), f6(r.iou));
    }
    fs::write(dir.join("per_image.csv"), s)?;

    let mut s = String::from("class_id,image_id,bde\n");
    for class in &report.bde {
        for &(i, v) in &class.values {
            let _ = writeln!(s, "{},{},{}", class.class, report.image_ids[i], f6(v));
        }
    }
    fs::write(dir.join("bde.csv"), s)?;

    if !report.per_image.is_empty() {
        for metric in ["G", "M", "IoU"] {
            fs::write(dir.join(format!("cdf_{metric}.csv")), cdf_csv(&report.cdf(metric)?))?;
        }
    }
    for class in &report.bde {
        if let Some(cdf) = &class.cdf {
            fs::write(dir.join(format!("cdf_bde_class{}.csv", class.class)), cdf_csv(cdf))?;
        }
    }
    Ok(())
}

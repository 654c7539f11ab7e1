//! Fusion ablation: every variant trained on the same data, over several seeds.

use std::fmt::Write as _;

use crate::dataio::RgbdSample;
use crate::error::{contract, Error, Result};
use crate::metrics::DatasetMetrics;
use crate::model::{count_flops, count_parameters, MmafNet, ModelConfig, Variant};
use crate::tensor::Shape;
use crate::train::{confusion_on, train, TrainConfig};

pub const CSV_HEADER: &str = "variant,seed,G,M,IoU,W_IoU,params,flops,status";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    /// Shared backbone and decoder; the variant field is overridden per run.
    pub model: ModelConfig,
    /// Its `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged { epoch: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    /// Test-split metrics; `None` when the run failed.
    pub metrics: Option<DatasetMetrics>,
    pub params: usize,
    pub flops: u64,
    pub status: RunStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantMedian {
    pub variant: Variant,
    /// Median over the successful runs; `None` if every run failed.
    pub metrics: Option<DatasetMetrics>,
    pub params: usize,
    pub flops: u64,
    pub succeeded: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
    pub medians: Vec<VariantMedian>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_metrics(ms: &[DatasetMetrics]) -> Option<DatasetMetrics> {
    if ms.is_empty() {
        return None;
    }
    let pick = |f: fn(&DatasetMetrics) -> f64| median(&mut ms.iter().map(f).collect::<Vec<_>>());
    Some(DatasetMetrics { g: pick(|m| m.g), m: pick(|m| m.m), iou: pick(|m| m.iou), w_iou: pick(|m| m.w_iou) })
}

impl AblationResult {
    pub fn median(&self, variant: Variant) -> Option<&VariantMedian> {
        self.medians.iter().find(|m| m.variant == variant)
    }

    pub fn median_iou(&self, variant: Variant) -> Option<f64> {
        self.median(variant)?.metrics.map(|m| m.iou)
    }

    pub fn to_csv(&self) -> String {
        let metric_cols = |m: &Option<DatasetMetrics>| match m {
            Some(m) => format!("{:.6},{:.6},{:.6},{:.6}", m.g, m.m, m.iou, m.w_iou),
            None => ",,,".to_string(),
        };
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.runs {
            let status = match r.status {
                RunStatus::Ok => "ok".to_string(),
                RunStatus::Diverged { epoch } => format!("failed: diverged at epoch {epoch}"),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{status}",
                r.variant.name(),
                r.seed,
                metric_cols(&r.metrics),
                r.params,
                r.flops
            );
        }
        for m in &self.medians {
            let status = match m.succeeded {
                0 => "failed: no successful runs".to_string(),
                k if k == m.runs => "ok".to_string(),
                k => format!("partial: {k} of {} runs", m.runs),
            };
            let _ = writeln!(
                out,
                "{},median,{},{},{},{status}",
                m.variant.name(),
                metric_cols(&m.metrics),
                m.params,
                m.flops
            );
        }
        out
    }
}

/// Data shared by every run; metrics come from `test`.
pub struct AblationData<'a> {
    pub train: &'a [RgbdSample],
    pub test: &'a [RgbdSample],
    pub void_label: u8,
}

/// Trains each `(variant, seed)` pair with the same data order and
/// schedule, evaluates on the test split and reduces to per-variant medians.
/// A diverged run is recorded and left out of its variant's median.
pub fn run_ablation(
    cfg: &AblationConfig,
    data: &AblationData<'_>,
    progress: &mut dyn FnMut(&AblationRun),
) -> Result<AblationResult> {
    contract!(cfg.seeds.len() >= 3, "the ablation needs at least 3 seeds, got {}", cfg.seeds.len());
    contract!(!cfg.variants.is_empty(), "no variants to run");
    contract!(!data.test.is_empty(), "the test split is empty");
    let probe = data.test[0].rgb.shape();
    let mut result = AblationResult::default();
    for &variant in &cfg.variants {
        let model = cfg.model.with_variant(variant);
        let mut done = Vec::new();
        let mut cost = (0, 0);
        for &seed in &cfg.seeds {
            let (net, mut store) = MmafNet::seeded::<f32>(model, seed)?;
            cost = (count_parameters(&store).total(), count_flops(&net, Shape::new(1, 3, probe.h, probe.w))?.total());
            let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let outcome = train(&net, &mut store, data.train, &[], data.void_label, &train_cfg, 0, &mut |_, _| Ok(()));
            let run = match outcome {
                Ok(_) => {
                    let cm = confusion_on(&net, &mut store, data.test, data.void_label)?;
                    AblationRun {
                        variant,
                        seed,
                        metrics: Some(cm.dataset_metrics()?),
                        params: cost.0,
                        flops: cost.1,
                        status: RunStatus::Ok,
                    }
                }
                Err(Error::Diverged { epoch }) => AblationRun {
                    variant,
                    seed,
                    metrics: None,
                    params: cost.0,
                    flops: cost.1,
                    status: RunStatus::Diverged { epoch },
                },
                Err(e) => return Err(e),
            };
            progress(&run);
            if let Some(m) = run.metrics {
                done.push(m);
            }
            result.runs.push(run);
        }
        result.medians.push(VariantMedian {
            variant,
            metrics: median_metrics(&done),
            params: cost.0,
            flops: cost.1,
            succeeded: done.len(),
            runs: cfg.seeds.len(),
        });
    }
    Ok(result)
}

/// Parameters the attention blocks add over plain summation, for `model`.
pub fn afb_overhead(model: &ModelConfig) -> usize {
    4 * model.afb_config().param_count()
}

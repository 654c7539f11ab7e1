use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Empirical distribution of a per-image quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCdf {
    sorted: Vec<f64>,
    summary: Summary,
}

impl MetricCdf {
    pub fn new(values: &[f64]) -> Result<Self> {
        contract!(!values.is_empty(), "a CDF needs at least one value");
        contract!(values.iter().all(|v| !v.is_nan()), "CDF values must not be NaN");
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // Summation over the sorted values keeps the result independent of input order.
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let summary = Summary { min: sorted[0], max: sorted[n - 1], median, mean, std: var.sqrt() };
        Ok(MetricCdf { sorted, summary })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn summary(&self) -> Summary {
        self.summary
    }

    /// `F(x)` = fraction of values `≤ x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Fraction of values strictly greater than `x`.
    pub fn fraction_above(&self, x: f64) -> f64 {
        1.0 - self.eval(x)
    }

    /// Fraction of values strictly below `x`.
    pub fn fraction_below(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.sorted.len() as f64
    }

    /// One `(x, F(x))` step per distinct value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let n = self.sorted.len() as f64;
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }
}

pub fn metric_cdf(values: &[f64]) -> Result<MetricCdf> {
    MetricCdf::new(values)
}

//! Training-time scaling benchmark.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::mix_seed;
use crate::neuralnet::SgdConfig;
use crate::simgen::{gen_scenario, SimScenario};

use super::models::{train_method, Method, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub d_list: Vec<usize>,
    /// Architecture and optimizer; latent sizes should be fixed so that only
    /// the input and output layers change with `d`.
    pub training: TrainingConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    /// Each cell is timed this many times and the fastest run is kept.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_method() -> Method {
    Method::Inva
}

fn default_repeats() -> usize {
    1
}

impl Default for BenchConfig {
    /// 100 epochs, batch 64, widths (32, 32), `p = 8`, `q = 4`.
    fn default() -> Self {
        BenchConfig {
            n_list: vec![100, 300, 600, 900, 1200],
            d_list: vec![3],
            training: TrainingConfig {
                sgd: SgdConfig {
                    learning_rate: 1e-3,
                    momentum: 0.0,
                    batch_size: 64,
                    epochs: 100,
                },
                shallow_dim: Some(8),
                deep_dim: Some(4),
                ..TrainingConfig::default()
            },
            method: Method::Inva,
            seed: 0,
            repeats: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub cells: usize,
    pub seconds: f64,
}

/// Least-squares line `seconds = intercept + slope · n` for one `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub d: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// One fit per `d` with at least two distinct `n`.
    pub fits: Vec<LinearFit>,
}

/// Ordinary least squares of `y` on `x`; returns `(slope, intercept, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("linear fit needs >= 2 paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Times one training run per `(n, d)` in `n_list × d_list`, sequentially.
pub fn bench_scaling(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.n_list.is_empty() || cfg.d_list.is_empty() {
        return Err(Error::InvalidArgument("bench needs nonempty n and d lists".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidArgument("bench repeats must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for &d in &cfg.d_list {
        for &n in &cfg.n_list {
            let sc = SimScenario::new(n, d, 1, 0.1, mix_seed(&[cfg.seed, n as u64, d as u64]));
            let data = gen_scenario(&sc)?;
            let mut best = f64::INFINITY;
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                train_method(cfg.method, &cfg.training, &data.split.train, cfg.seed)?;
                best = best.min(start.elapsed().as_secs_f64());
            }
            log::info!("bench n={n} d={d}: {best:.3}s");
            rows.push(BenchRow {
                n,
                d,
                cells: sc.cells(),
                seconds: best.max(f64::MIN_POSITIVE),
            });
        }
    }
    let mut fits = Vec::new();
    for &d in &cfg.d_list {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.d == d)
            .map(|r| (r.n as f64, r.seconds))
            .unzip();
        if let Ok((slope, intercept, r2)) = linear_fit(&x, &y) {
            fits.push(LinearFit { d, slope, intercept, r2 });
        }
    }
    Ok(BenchReport { rows, fits })
}

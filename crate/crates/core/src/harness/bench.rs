//! Image benchmarks: method comparison, support location and noise.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::generate::NoiseSpec;
use super::pool::Pool;
use super::trial::{build_instance, extent_label, run_on_instance, run_trial, Placement, SignalSource, TrialOutcome, TrialSpec};
use crate::error::{Error, Result};
use crate::io::TrialResult;
use crate::types::{Field, Method, SolverConfig};

/// Repeated recoveries of one image over fresh backgrounds.
#[derive(Clone, Debug)]
pub struct ImageBenchConfig {
    pub image: Arc<Field<f64>>,
    /// Background extent per axis is `round(k_ratio·n)`.
    pub k_ratio: f64,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub max_iter: usize,
    pub eps: f64,
    /// Used by BDR1 and HIO only.
    pub beta: f64,
    pub lambda: f64,
    pub placement: Placement,
    pub noise: NoiseSpec,
    pub record_timing: bool,
}

impl ImageBenchConfig {
    pub fn new(image: Field<f64>, k_ratio: f64, trials: usize, seed: u64) -> Self {
        ImageBenchConfig {
            image: Arc::new(image),
            k_ratio,
            trials,
            seed,
            methods: vec![Method::Pgd, Method::Bdr],
            max_iter: SolverConfig::<f64>::DEFAULT_MAX_ITER,
            eps: 1e-12,
            beta: 0.9,
            lambda: 1.0,
            placement: Placement::Centered,
            noise: NoiseSpec::default(),
            record_timing: true,
        }
    }

    pub fn background_sizes(&self) -> Vec<usize> {
        self.image.shape().extents().iter().map(|&n| (self.k_ratio * n as f64).round() as usize).collect()
    }

    pub fn solver(&self, method: Method) -> SolverConfig<f64> {
        let mut s = SolverConfig::new(method).with_max_iter(self.max_iter).with_eps(self.eps).with_lambda(self.lambda);
        if matches!(method, Method::Bdr1 | Method::Hio) {
            s = s.with_beta(self.beta);
        }
        s
    }

    pub fn spec(&self, method: Method, placement: &Placement) -> TrialSpec {
        let mut s = TrialSpec::new(self.image.shape().extents(), &self.background_sizes(), self.solver(method), self.seed);
        s.signal = SignalSource::Image(self.image.clone());
        s.placement = placement.clone();
        s.noise = self.noise;
        s.record_timing = self.record_timing;
        s
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.methods.is_empty() {
            return Err(Error::InvalidConfig("benchmark needs at least one trial and one method".into()));
        }
        if !(self.k_ratio >= 0.0 && self.k_ratio.is_finite()) {
            return Err(Error::InvalidConfig("k_ratio must be finite and nonnegative".into()));
        }
        for &m in &self.methods {
            self.solver(m).validate()?;
        }
        Ok(())
    }
}

/// 25th percentile, median and 75th percentile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Linear interpolation between order statistics at `p·(len−1)`; NaNs are
/// dropped. Returns NaN for an empty input.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (v[pos.floor() as usize], v[pos.ceil() as usize]);
    let frac = pos - pos.floor();
    if lo == hi || frac == 0.0 {
        lo
    } else if frac == 1.0 || hi.is_infinite() && lo.is_infinite() {
        hi
    } else {
        lo + frac * (hi - lo)
    }
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Quantiles {
            q25: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q75: quantile(values, 0.75),
        }
    }
}

/// Per-method summary of an image benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageAggregate {
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub psnr: Quantiles,
    pub ssim: Quantiles,
    pub relative_error: Quantiles,
    pub wall_ms: Quantiles,
}

impl ImageAggregate {
    pub fn from_rows(method: Method, rows: &[TrialResult]) -> Self {
        let col = |f: fn(&TrialResult) -> f64| Quantiles::of(&rows.iter().map(f).collect::<Vec<_>>());
        ImageAggregate {
            method,
            trials: rows.len(),
            successes: rows.iter().filter(|r| r.success).count(),
            psnr: col(|r| r.psnr),
            ssim: col(|r| r.ssim),
            relative_error: col(|r| r.relative_error),
            wall_ms: col(|r| r.wall_ms),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub aggregates: Vec<ImageAggregate>,
    /// Method-major, then trial index.
    pub outcomes: Vec<TrialOutcome>,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<TrialResult> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }

    pub fn aggregate(&self, method: Method) -> Option<&ImageAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

fn aggregate_by_method(methods: &[Method], outcomes: &[TrialOutcome]) -> Vec<ImageAggregate> {
    methods
        .iter()
        .map(|&m| {
            let rows: Vec<TrialResult> = outcomes.iter().filter(|o| o.row.method == m).map(|o| o.row.clone()).collect();
            ImageAggregate::from_rows(m, &rows)
        })
        .collect()
}

/// Every method on the same `trials` backgrounds.
pub fn image_benchmark(cfg: &ImageBenchConfig, pool: &Pool) -> Result<BenchReport> {
    cfg.validate()?;
    let specs: Vec<TrialSpec> = cfg.methods.iter().map(|&m| cfg.spec(m, &cfg.placement)).collect();
    let items: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let outcomes = pool.map(&items, |&(s, t)| run_trial(&specs[s], t));
    Ok(BenchReport {
        aggregates: aggregate_by_method(&cfg.methods, &outcomes),
        outcomes,
    })
}

/// Means over the trials at one support offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    pub method: Method,
    pub offset: String,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_relative_error: f64,
}

impl PositionSummary {
    pub fn from_rows(offset: &[usize], rows: &[TrialResult]) -> Self {
        let t = rows.len().max(1) as f64;
        let mean = |f: fn(&TrialResult) -> f64| rows.iter().map(f).sum::<f64>() / t;
        PositionSummary {
            method: rows.first().map_or(Method::Bdr, |r| r.method),
            offset: extent_label(offset),
            trials: rows.len(),
            success_rate: rows.iter().filter(|r| r.success).count() as f64 / t,
            mean_psnr: mean(|r| r.psnr),
            mean_ssim: mean(|r| r.ssim),
            mean_relative_error: mean(|r| r.relative_error),
        }
    }
}

/// `{0, k/4, k/2}` on each axis: the corner-to-centre quarter of the grid.
pub fn default_offsets(background_sizes: &[usize]) -> Vec<Vec<usize>> {
    let per_axis: Vec<[usize; 3]> = background_sizes.iter().map(|&k| [0, k / 4, k / 2]).collect();
    match per_axis.as_slice() {
        [a] => a.iter().map(|&o| vec![o]).collect(),
        [a, b] => a.iter().flat_map(|&r| b.iter().map(move |&c| vec![r, c])).collect(),
        _ => Vec::new(),
    }
}

#[derive(Clone, Debug)]
pub struct LocationReport {
    pub positions: Vec<PositionSummary>,
    pub outcomes: Vec<TrialOutcome>,
}

/// Runs the first method of `cfg` at every offset, all offsets sharing the
/// same background draws per trial.
pub fn location_bias_study(cfg: &ImageBenchConfig, offsets: &[Vec<usize>], pool: &Pool) -> Result<LocationReport> {
    cfg.validate()?;
    let k = cfg.background_sizes();
    if offsets.is_empty() {
        return Err(Error::InvalidConfig("no support offsets given".into()));
    }
    for off in offsets {
        if off.len() != k.len() || off.iter().zip(&k).any(|(o, k)| o > k) {
            return Err(Error::OffsetOutOfRange {
                offset: off.clone(),
                grid: k.clone(),
            });
        }
    }
    let method = cfg.methods[0];
    let specs: Vec<TrialSpec> = offsets.iter().map(|o| cfg.spec(method, &Placement::Offset(o.clone()))).collect();
    let items: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let outcomes = pool.map(&items, |&(s, t)| run_trial(&specs[s], t));
    let positions = offsets
        .iter()
        .zip(outcomes.chunks(cfg.trials))
        .map(|(o, chunk)| PositionSummary::from_rows(o, &chunk.iter().map(|x| x.row.clone()).collect::<Vec<_>>()))
        .collect();
    Ok(LocationReport { positions, outcomes })
}

#[derive(Clone, Debug)]
pub struct NoiseReport {
    pub aggregates: Vec<ImageAggregate>,
    /// Trial-major: every method on trial 0, then trial 1, …
    pub outcomes: Vec<TrialOutcome>,
    /// Trials where BDR1 ends with a strictly smaller relative error than BDR.
    pub bdr1_beats_bdr: usize,
    pub trials: usize,
}

impl NoiseReport {
    pub fn rows(&self) -> Vec<TrialResult> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }
}

/// Each noisy instance is generated once and handed to every method.
pub fn noise_benchmark(cfg: &ImageBenchConfig, pool: &Pool) -> Result<NoiseReport> {
    cfg.validate()?;
    let base = cfg.spec(cfg.methods[0], &cfg.placement);
    let trials: Vec<usize> = (0..cfg.trials).collect();
    let per_trial: Vec<Vec<TrialOutcome>> = pool.map(&trials, |&t| match build_instance(&base, t) {
        Ok(inst) => cfg.methods.iter().map(|&m| run_on_instance(&base, &inst, &cfg.solver(m), t)).collect(),
        Err(_) => cfg
            .methods
            .iter()
            .map(|&m| {
                let mut s = base.clone();
                s.solver = cfg.solver(m);
                run_trial(&s, t)
            })
            .collect(),
    });
    let err_of = |set: &[TrialOutcome], m: Method| set.iter().find(|o| o.row.method == m).map(|o| o.row.relative_error);
    let bdr1_beats_bdr = per_trial
        .iter()
        .filter(|set| matches!((err_of(set, Method::Bdr1), err_of(set, Method::Bdr)), (Some(a), Some(b)) if a < b))
        .count();
    let outcomes: Vec<TrialOutcome> = per_trial.into_iter().flatten().collect();
    Ok(NoiseReport {
        aggregates: aggregate_by_method(&cfg.methods, &outcomes),
        outcomes,
        bdr1_beats_bdr,
        trials: cfg.trials,
    })
}

//! Recovery-rate sweeps over `(n, k/n)` grids.

use serde::{Deserialize, Serialize};

use super::generate::{NoiseSpec, SignalKind};
use super::pool::Pool;
use super::trial::{run_trial, Placement, SignalSource, TrialOutcome, TrialSpec};
use crate::error::{Error, Result};
use crate::io::TrialResult;
use crate::types::{Method, SolverConfig};

/// A 1-D phase-transition experiment.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub k_ratios: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverConfig<f64>,
    pub signal: SignalKind,
    pub placement: Placement,
    pub noise: NoiseSpec,
    pub record_timing: bool,
}

impl SweepConfig {
    pub fn new(method: Method, ns: &[usize], k_ratios: &[f64], trials: usize, seed: u64) -> Self {
        SweepConfig {
            ns: ns.to_vec(),
            k_ratios: k_ratios.to_vec(),
            trials,
            seed,
            solver: SolverConfig::new(method),
            signal: SignalKind::Gaussian,
            placement: Placement::Leading,
            noise: NoiseSpec::default(),
            record_timing: true,
        }
    }

    /// `start, start+step, …` up to `stop` inclusive, rounded to 1e-9.
    pub fn ratio_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
    }

    fn spec(&self, n: usize, ratio: f64) -> TrialSpec {
        let k = (ratio * n as f64).round() as usize;
        let mut s = TrialSpec::new(&[n], &[k], self.solver.clone(), self.seed);
        s.signal = SignalSource::Kind(self.signal.clone());
        s.placement = self.placement.clone();
        s.noise = self.noise;
        s.record_timing = self.record_timing;
        s
    }
}

/// Aggregates of one `(n, k)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub n: String,
    pub k: String,
    pub k_ratio: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    /// Binomial standard error `√(p(1−p)/T)`.
    pub stderr: f64,
    pub mean_iterations: f64,
    pub mean_wall_ms: f64,
    /// Trials whose generation or solve aborted.
    pub aborted: usize,
    /// `complete`, or `aborted` when every trial aborted.
    pub status: String,
}

pub fn binomial_stderr(rate: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (rate * (1.0 - rate) / trials as f64).sqrt()
}

fn label_product(s: &str) -> f64 {
    s.split('x').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).product()
}

/// Aggregates the rows of a single cell. Aborted trials are recognised by a
/// zero iteration count with a NaN error.
pub fn summarize_cell(rows: &[TrialResult]) -> Option<SweepCell> {
    let first = rows.first()?;
    let t = rows.len();
    let successes = rows.iter().filter(|r| r.success).count();
    let aborted = rows.iter().filter(|r| r.iterations == 0 && r.relative_error.is_nan()).count();
    let rate = successes as f64 / t as f64;
    let n = label_product(&first.n);
    let k = label_product(&first.k);
    let ratio = if first.n.contains('x') { (k / n).sqrt() } else { k / n };
    Some(SweepCell {
        method: first.method,
        n: first.n.clone(),
        k: first.k.clone(),
        k_ratio: ratio,
        trials: t,
        successes,
        rate,
        stderr: binomial_stderr(rate, t),
        mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>() / t as f64,
        mean_wall_ms: rows.iter().map(|r| r.wall_ms).sum::<f64>() / t as f64,
        aborted,
        status: if aborted == t { "aborted" } else { "complete" }.to_string(),
    })
}

/// Groups consecutive rows sharing `(method, n, k)` and summarises each.
pub fn aggregate_rows(rows: &[TrialResult]) -> Vec<SweepCell> {
    rows.chunk_by(|a, b| a.method == b.method && a.n == b.n && a.k == b.k)
        .filter_map(summarize_cell)
        .collect()
}

/// Smallest `k/n` reaching each target rate for one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub n: String,
    pub k90: Option<f64>,
    pub k99: Option<f64>,
}

pub fn transitions(cells: &[SweepCell]) -> Vec<Transition> {
    let mut ns: Vec<&str> = Vec::new();
    for c in cells {
        if !ns.contains(&c.n.as_str()) {
            ns.push(&c.n);
        }
    }
    ns.into_iter()
        .map(|n| {
            let first = |target: f64| {
                cells
                    .iter()
                    .filter(|c| c.n == n && c.rate >= target)
                    .map(|c| c.k_ratio)
                    .min_by(f64::total_cmp)
            };
            Transition {
                n: n.to_string(),
                k90: first(0.90),
                k99: first(0.99),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
    pub transitions: Vec<Transition>,
    /// Every trial, cell-major then trial index.
    pub outcomes: Vec<TrialOutcome>,
}

impl SweepGrid {
    pub fn rows(&self) -> Vec<TrialResult> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }

    pub fn cell(&self, n: usize, ratio: f64) -> Option<&SweepCell> {
        let n = n.to_string();
        self.cells.iter().find(|c| c.n == n && (c.k_ratio - ratio).abs() < 1e-9)
    }
}

/// Runs every `(n, k/n, trial)` on the pool and aggregates per cell.
pub fn sweep_phase_transition(config: &SweepConfig, pool: &Pool) -> Result<SweepGrid> {
    if config.ns.is_empty() || config.k_ratios.is_empty() || config.trials == 0 {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    config.solver.validate()?;
    let specs: Vec<TrialSpec> = config
        .ns
        .iter()
        .flat_map(|&n| config.k_ratios.iter().map(move |&r| (n, r)))
        .map(|(n, r)| config.spec(n, r))
        .collect();
    let items: Vec<(usize, usize)> = (0..specs.len()).flat_map(|c| (0..config.trials).map(move |t| (c, t))).collect();
    let outcomes = pool.map(&items, |&(c, t)| run_trial(&specs[c], t));
    let cells: Vec<SweepCell> = outcomes
        .chunks(config.trials)
        .filter_map(|chunk| summarize_cell(&chunk.iter().map(|o| o.row.clone()).collect::<Vec<_>>()))
        .collect();
    Ok(SweepGrid {
        transitions: transitions(&cells),
        cells,
        outcomes,
    })
}

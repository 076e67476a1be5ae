//! One Monte Carlo trial: draw an instance, solve it, score it.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::generate::{background_from, bias_background, noise_from, signal_from, NoiseSpec, SignalKind};
use crate::error::{Error, Result};
use crate::io::TrialResult;
use crate::metrics::{measurement_error, psnr, relative_error, ssim, success, SsimParams};
use crate::rng::{mix_seed, Rng};
use crate::solvers::{cbdr_parallel_real, fixed_point_residual, run, Problem};
use crate::spectral::intensity_on;
use crate::types::{assemble, Dims, Field, IntensityMeasurements, Method, Shape, SolverConfig, SolverRun, SupportMask};

/// Where the sample sits inside the background.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// First corner at the origin.
    #[default]
    Leading,
    /// Offset `k/2` per axis.
    Centered,
    /// Explicit per-axis offset, each at most `k` on its axis.
    Offset(Vec<usize>),
}

impl Placement {
    pub fn mask(&self, dims: &Dims) -> Result<SupportMask> {
        match self {
            Placement::Leading => Ok(SupportMask::leading(dims)),
            Placement::Centered => Ok(SupportMask::centered(dims)),
            Placement::Offset(off) => {
                let ok = off.len() == dims.ndim() && off.iter().zip(dims.background_sizes()).all(|(o, k)| o <= k);
                if !ok {
                    return Err(Error::OffsetOutOfRange {
                        offset: off.clone(),
                        grid: dims.background_sizes().to_vec(),
                    });
                }
                SupportMask::block(dims.object_shape(), off, dims.sizes())
            }
        }
    }
}

/// Where the unknown sample comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SignalSource {
    /// Drawn or computed per trial, flattened to the sample size.
    Kind(SignalKind),
    /// The same image in every trial; only the background changes.
    Image(Arc<Field<f64>>),
}

/// Everything needed to run trials of one grid cell.
#[derive(Clone, Debug)]
pub struct TrialSpec {
    pub sizes: Vec<usize>,
    pub background_sizes: Vec<usize>,
    pub placement: Placement,
    pub signal: SignalSource,
    pub background_mu: f64,
    pub background_sigma: f64,
    pub noise: NoiseSpec,
    pub solver: SolverConfig<f64>,
    pub master_seed: u64,
    /// When false `wall_ms` is written as 0 so result files are reproducible.
    pub record_timing: bool,
}

impl TrialSpec {
    pub fn new(sizes: &[usize], background_sizes: &[usize], solver: SolverConfig<f64>, master_seed: u64) -> Self {
        TrialSpec {
            sizes: sizes.to_vec(),
            background_sizes: background_sizes.to_vec(),
            placement: Placement::Leading,
            signal: SignalSource::Kind(SignalKind::Gaussian),
            background_mu: 0.0,
            background_sigma: 1.0,
            noise: NoiseSpec::default(),
            solver,
            master_seed,
            record_timing: true,
        }
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::unpadded(&self.sizes, &self.background_sizes)
    }

    /// `(∏n << 32) | ∏k`: independent of method, placement and noise, so
    /// those can be compared on identical draws.
    pub fn cell(&self) -> u64 {
        let n: usize = self.sizes.iter().product();
        let k: usize = self.background_sizes.iter().product();
        ((n as u64) << 32) | (k as u64 & 0xFFFF_FFFF)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        mix_seed(self.master_seed, self.cell(), trial as u64)
    }
}

/// Formats extents as `64x64` or `100`.
pub fn extent_label(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x")
}

/// A generated problem together with its ground truth.
#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub x: Vec<f64>,
    /// Exact background; the solver sees `problem.background()`, which
    /// carries the bias if one was requested.
    pub y: Field<f64>,
    pub clean: IntensityMeasurements<f64>,
    pub problem: Problem<f64>,
}

/// Draws the instance for `trial`: signal, background, noise, bias, in
/// that order from a single stream.
pub fn build_instance(spec: &TrialSpec, trial: usize) -> Result<Instance> {
    let dims = spec.dims()?;
    let mask = spec.placement.mask(&dims)?;
    let seed = spec.trial_seed(trial);
    let mut rng = Rng::new(seed);
    let n: usize = spec.sizes.iter().product();
    let x = match &spec.signal {
        SignalSource::Kind(kind) => signal_from(kind, n, &mut rng)?,
        SignalSource::Image(img) => {
            if img.shape().extents() != spec.sizes.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: spec.sizes.clone(),
                    actual: img.shape().extents().to_vec(),
                });
            }
            img.as_slice().to_vec()
        }
    };
    let y = background_from(&mask, spec.background_mu, spec.background_sigma, &mut rng)?;
    let z = assemble(&x, &y, &mask)?;
    let clean = intensity_on(z.values(), &dims.measurement_shape())?;
    let observed = noise_from(&clean, &spec.noise, &mut rng);
    let known = bias_background(&y, &mask, spec.noise.background_bias, &mut rng);
    let problem = Problem::new(observed, known, mask)?;
    Ok(Instance {
        seed,
        x,
        y,
        clean,
        problem,
    })
}

/// Dispatches on the method; CBDR runs both DC branches.
pub fn solve(problem: &Problem<f64>, config: &SolverConfig<f64>, truth: Option<&[f64]>) -> Result<SolverRun<f64>> {
    match config.method {
        Method::Cbdr => cbdr_parallel_real(problem, config, truth),
        _ => run(problem, config, truth),
    }
}

/// Row plus the diagnostics that do not go into the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub row: TrialResult,
    pub converged: bool,
    /// `‖|DFT(P_B z̄)|² − b‖∞ / max b` at the final iterate; `None` for HIO
    /// and for failed runs.
    pub fixed_point_residual: Option<f64>,
    pub error: Option<String>,
}

fn dynamic_range(x: &[f64]) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Scores an estimate against the truth of `inst`.
pub fn score(inst: &Instance, estimate: &[f64], sample_shape: &Shape) -> Result<(f64, f64, f64, f64)> {
    let rel = relative_error(estimate, &inst.x)?;
    let p = inst.problem.intensities();
    let meas = measurement_error(estimate, inst.problem.background(), inst.problem.mask(), p)?;
    let range = dynamic_range(&inst.x);
    let ps = psnr(estimate, &inst.x, range)?;
    let a = Field::new(sample_shape.clone(), estimate.to_vec())?;
    let b = Field::new(sample_shape.clone(), inst.x.clone())?;
    let ss = ssim(&a, &b, &SsimParams::standard(range))?.value;
    Ok((rel, meas, ps, ss))
}

/// Solves an already generated instance with `config` and scores it.
pub fn run_on_instance(spec: &TrialSpec, inst: &Instance, config: &SolverConfig<f64>, trial: usize) -> TrialOutcome {
    let mut row = TrialResult {
        trial,
        seed: inst.seed,
        method: config.method,
        n: extent_label(&spec.sizes),
        k: extent_label(&spec.background_sizes),
        iterations: 0,
        relative_error: f64::NAN,
        measurement_error: f64::NAN,
        psnr: f64::NAN,
        ssim: f64::NAN,
        success: false,
        wall_ms: 0.0,
    };
    let start = Instant::now();
    let result = solve(&inst.problem, config, None).and_then(|r| {
        let shape = Shape::new(&spec.sizes)?;
        let s = score(inst, &r.estimate, &shape)?;
        Ok((r, s))
    });
    if spec.record_timing {
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    match result {
        Ok((r, (rel, meas, ps, ss))) => {
            row.iterations = r.iterations_used;
            row.relative_error = rel;
            row.measurement_error = meas;
            row.psnr = ps;
            row.ssim = ss;
            row.success = success(rel);
            let fpr = (r.converged && config.method != Method::Hio)
                .then(|| fixed_point_residual(r.final_iterate.as_slice(), &inst.problem));
            TrialOutcome {
                row,
                converged: r.converged,
                fixed_point_residual: fpr,
                error: None,
            }
        }
        Err(e) => TrialOutcome {
            row,
            converged: false,
            fixed_point_residual: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs trial `trial` of the cell described by `spec`. Generation and
/// solver errors become failed rows.
pub fn run_trial(spec: &TrialSpec, trial: usize) -> TrialOutcome {
    match build_instance(spec, trial) {
        Ok(inst) => run_on_instance(spec, &inst, &spec.solver, trial),
        Err(e) => TrialOutcome {
            row: TrialResult {
                trial,
                seed: spec.trial_seed(trial),
                method: spec.solver.method,
                n: extent_label(&spec.sizes),
                k: extent_label(&spec.background_sizes),
                iterations: 0,
                relative_error: f64::NAN,
                measurement_error: f64::NAN,
                psnr: f64::NAN,
                ssim: f64::NAN,
                success: false,
                wall_ms: 0.0,
            },
            converged: false,
            fixed_point_residual: None,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::pool::Pool;

    fn spec(n: usize, k: usize, method: Method) -> TrialSpec {
        let mut s = TrialSpec::new(&[n], &[k], SolverConfig::new(method).with_max_iter(300), 7);
        s.record_timing = false;
        s
    }

    #[test]
    fn huge_background_recovers() {
        for m in [Method::Bdr, Method::Cbdr] {
            let out = run_trial(&spec(10, 80, m), 0);
            assert!(out.row.success, "{m}: {:?}", out.row);
            assert!(out.error.is_none());
        }
    }

    #[test]
    fn rows_are_deterministic() {
        let s = spec(20, 40, Method::Bdr);
        assert_eq!(run_trial(&s, 3), run_trial(&s, 3));
        assert_ne!(run_trial(&s, 3).row.seed, run_trial(&s, 4).row.seed);
    }

    #[test]
    fn methods_share_instances() {
        let a = spec(20, 40, Method::Bdr);
        let b = spec(20, 40, Method::Pgd);
        assert_eq!(build_instance(&a, 2).unwrap().x, build_instance(&b, 2).unwrap().x);
        assert_eq!(run_trial(&a, 2).row.seed, run_trial(&b, 2).row.seed);
    }

    #[test]
    fn rate_matches_recount() {
        let s = spec(20, 40, Method::Bdr);
        let trials: Vec<usize> = (0..30).collect();
        let rows = Pool::new(2).unwrap().map(&trials, |&t| run_trial(&s, t).row);
        let rate = rows.iter().filter(|r| r.success).count() as f64 / 30.0;
        let recount = rows.iter().filter(|r| r.relative_error < 1e-5).count() as f64 / 30.0;
        assert_eq!(rate, recount);
        assert!(rows.iter().enumerate().all(|(i, r)| r.trial == i));
    }

    #[test]
    fn bad_offsets_become_failed_rows() {
        let mut s = spec(10, 20, Method::Bdr);
        s.placement = Placement::Offset(vec![21]);
        let out = run_trial(&s, 0);
        assert!(!out.row.success);
        assert!(out.error.unwrap().contains("offset"));
        s.placement = Placement::Offset(vec![20]);
        assert!(run_trial(&s, 0).error.is_none());
    }

    #[test]
    fn image_source_is_fixed() {
        let img = Arc::new(super::super::generate::phantom(8, 8));
        let mut s = TrialSpec::new(&[8, 8], &[8, 8], SolverConfig::new(Method::Bdr).with_max_iter(50), 1);
        s.signal = SignalSource::Image(img.clone());
        s.placement = Placement::Centered;
        let a = build_instance(&s, 0).unwrap();
        let b = build_instance(&s, 1).unwrap();
        assert_eq!(a.x, img.as_slice());
        assert_eq!(a.x, b.x);
        assert_ne!(a.y, b.y);
        assert_eq!(a.problem.mask().indices()[0], 4 * 16 + 4);
    }

    #[test]
    fn noise_and_bias_alter_observations_only() {
        let mut s = spec(10, 30, Method::Bdr);
        s.noise = NoiseSpec::new(1e-3, 1e-3).unwrap();
        let inst = build_instance(&s, 0).unwrap();
        assert_ne!(inst.problem.intensities().values(), inst.clean.values());
        assert_ne!(inst.problem.background(), &inst.y);
        assert!(inst.problem.mask().indices().iter().all(|&i| inst.problem.background().as_slice()[i] == 0.0));
    }
}

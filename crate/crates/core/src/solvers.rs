//! Iterative solvers: PGD, BDR, BDR1, CBDR and HIO.
//!
//! Every method starts from the spectral initialisation
//! `z⁰ = P_B(real((1/∏m)·DFT(√b)))` and stops once
//! `‖z^p − z^{p−1}‖₂ ≤ eps` or after `max_iter` iterations.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::projections::{project_background, DcSign, MagnitudeProjector, MagnitudeTarget};
use crate::scalar::{dist2, norm2, Real};
use crate::spectral::Fourier;
use crate::types::{gather, Field, IntensityMeasurements, Method, Shape, SolverConfig, SolverRun, SupportMask, TraceEntry};

/// Measurements together with the known background.
#[derive(Clone, Debug)]
pub struct Problem<T> {
    b: IntensityMeasurements<T>,
    y: Field<T>,
    mask: SupportMask,
}

impl<T: Real> Problem<T> {
    pub fn new(b: IntensityMeasurements<T>, y: Field<T>, mask: SupportMask) -> Result<Self> {
        if y.shape() != mask.shape() {
            return Err(Error::ShapeMismatch {
                expected: mask.shape().extents().to_vec(),
                actual: y.shape().extents().to_vec(),
            });
        }
        if let Some(&index) = mask.indices().iter().find(|&&i| y.as_slice()[i] != T::zero()) {
            return Err(Error::BackgroundOnSupport { index });
        }
        let (o, m) = (mask.shape(), b.shape());
        if o.ndim() != m.ndim() || o.extents().iter().zip(m.extents()).any(|(a, b)| a > b) {
            return Err(Error::ShapeMismatch {
                expected: m.extents().to_vec(),
                actual: o.extents().to_vec(),
            });
        }
        Ok(Problem { b, y, mask })
    }

    /// Same measurements with a zero background: the support-only setting.
    pub fn support_only(b: IntensityMeasurements<T>, mask: SupportMask) -> Result<Self> {
        let y = Field::zeros(mask.shape().clone());
        Problem::new(b, y, mask)
    }

    pub fn intensities(&self) -> &IntensityMeasurements<T> {
        &self.b
    }

    pub fn background(&self) -> &Field<T> {
        &self.y
    }

    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }

    pub fn object_shape(&self) -> &Shape {
        self.mask.shape()
    }

    pub fn measurement_shape(&self) -> &Shape {
        self.b.shape()
    }

    pub fn project_background(&self, z: &[T]) -> Vec<T> {
        project_background(z, self.y.as_slice(), &self.mask)
    }

    /// `z` with its Ω entries replaced by `x`.
    pub fn assemble(&self, x: &[T]) -> Vec<T> {
        let mut z = self.y.as_slice().to_vec();
        for (&i, &v) in self.mask.indices().iter().zip(x) {
            z[i] = v;
        }
        z
    }
}

/// Solver iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationState<T> {
    pub z: Vec<T>,
    pub iter: usize,
    pub last_step_norm: T,
}

impl<T: Real> IterationState<T> {
    pub fn new(z: Vec<T>) -> Self {
        IterationState {
            z,
            iter: 0,
            last_step_norm: T::zero(),
        }
    }

    fn advance(&self, z: Vec<T>) -> Self {
        let step = dist2(&z, &self.z);
        IterationState {
            z,
            iter: self.iter + 1,
            last_step_norm: step,
        }
    }
}

/// Spectral initialisation.
pub fn init_spectral<T: Real>(problem: &Problem<T>) -> IterationState<T> {
    let meas = problem.measurement_shape();
    let fourier = Fourier::new(meas);
    let mut buf: Vec<Complex<T>> = problem
        .b
        .values()
        .as_slice()
        .iter()
        .map(|&v| Complex::new(v.sqrt(), T::zero()))
        .collect();
    fourier.forward(&mut buf);
    let scale = T::one() / T::from_usize_lossy(meas.len());
    for v in buf.iter_mut() {
        *v = v.scale(scale);
    }
    let z = crate::spectral::truncate_real(&buf, meas, problem.object_shape());
    IterationState::new(problem.project_background(&z))
}

/// `z^p = P_B(z − λ(z − P_A z))`.
pub fn pgd_step<T: Real>(state: &IterationState<T>, p_a: &MagnitudeProjector<T>, problem: &Problem<T>, lambda: T) -> IterationState<T> {
    let pa = p_a.apply(&state.z);
    if lambda == T::one() {
        return state.advance(problem.project_background(&pa));
    }
    let moved: Vec<T> = state.z.iter().zip(&pa).map(|(&z, &a)| z - lambda * (z - a)).collect();
    state.advance(problem.project_background(&moved))
}

/// Background Douglas–Rachford step: `z̃` on Ω, `z − β·z̃ + y` elsewhere.
pub fn bdr_step<T: Real>(state: &IterationState<T>, p_a: &MagnitudeProjector<T>, problem: &Problem<T>, beta: T) -> IterationState<T> {
    let zt = p_a.apply(&state.z);
    let y = problem.y.as_slice();
    let next: Vec<T> = (0..zt.len())
        .map(|i| {
            if problem.mask.contains(i) {
                zt[i]
            } else {
                state.z[i] - beta * zt[i] + y[i]
            }
        })
        .collect();
    state.advance(next)
}

/// BDR step with the ball projector.
pub fn cbdr_step<T: Real>(state: &IterationState<T>, p_ball: &MagnitudeProjector<T>, problem: &Problem<T>) -> IterationState<T> {
    bdr_step(state, p_ball, problem, T::one())
}

/// Sum of squared magnitude misfits `Σ(|ẑ_i| − √b_i)²`.
pub fn magnitude_objective<T: Real>(z: &[T], problem: &Problem<T>) -> T {
    let fourier = Fourier::new(problem.measurement_shape());
    let s = fourier.forward_real(z, problem.object_shape());
    s.iter()
        .zip(problem.b.values().as_slice())
        .map(|(c, &b)| {
            let d = c.norm() - b.sqrt();
            d * d
        })
        .sum()
}

/// `‖|DFT(z̄)|² − b‖₂ / ‖b‖₂` for a full object-grid array (absolute when `b = 0`).
pub(crate) fn intensity_misfit<T: Real>(z: &[T], problem: &Problem<T>, fourier: &Fourier<T>) -> T {
    let s = fourier.forward_real(z, problem.object_shape());
    let b = problem.b.values().as_slice();
    let num = s
        .iter()
        .zip(b)
        .map(|(c, &bv)| {
            let d = c.norm_sqr() - bv;
            d * d
        })
        .sum::<T>()
        .sqrt();
    let den = norm2(b);
    if den > T::zero() {
        num / den
    } else {
        num
    }
}

/// `‖|DFT(P_B z̄)|² − b‖∞ / max(b)`, the fixed-point residual.
pub fn fixed_point_residual<T: Real>(z: &[T], problem: &Problem<T>) -> T {
    let fourier = Fourier::new(problem.measurement_shape());
    let pb = problem.project_background(z);
    let s = fourier.forward_real(&pb, problem.object_shape());
    let b = problem.b.values().as_slice();
    let worst = s.iter().zip(b).fold(T::zero(), |m, (c, &bv)| m.max((c.norm_sqr() - bv).abs()));
    let peak = b.iter().fold(T::zero(), |m, &v| m.max(v));
    if peak > T::zero() {
        worst / peak
    } else {
        worst
    }
}

enum Step<T: Real> {
    Pgd(MagnitudeProjector<T>, T),
    Relaxed(MagnitudeProjector<T>, T),
}

impl<T: Real> Step<T> {
    fn apply(&self, state: &IterationState<T>, problem: &Problem<T>) -> IterationState<T> {
        match self {
            Step::Pgd(p, lambda) => pgd_step(state, p, problem, *lambda),
            Step::Relaxed(p, beta) => bdr_step(state, p, problem, *beta),
        }
    }

    fn fourier(&self) -> &Fourier<T> {
        match self {
            Step::Pgd(p, _) | Step::Relaxed(p, _) => p.fourier(),
        }
    }
}

fn build_step<T: Real>(problem: &Problem<T>, config: &SolverConfig<T>, dc: Option<DcSign>) -> Result<Step<T>> {
    let shape = problem.object_shape();
    Ok(match config.method {
        Method::Pgd => Step::Pgd(MagnitudeProjector::new(shape, MagnitudeTarget::equality(&problem.b))?, config.lambda),
        Method::Bdr => Step::Relaxed(MagnitudeProjector::new(shape, MagnitudeTarget::equality(&problem.b))?, T::one()),
        Method::Bdr1 | Method::Hio => {
            Step::Relaxed(MagnitudeProjector::new(shape, MagnitudeTarget::equality(&problem.b))?, config.beta)
        }
        Method::Cbdr => Step::Relaxed(MagnitudeProjector::new(shape, MagnitudeTarget::ball(&problem.b, dc))?, T::one()),
    })
}

/// Runs `config.method` from the spectral initialisation.
///
/// HIO ignores the background values and treats everything off Ω as free.
/// `truth`, when given, fills the relative-error column of the trace.
pub fn run<T: Real>(problem: &Problem<T>, config: &SolverConfig<T>, truth: Option<&[T]>) -> Result<SolverRun<T>> {
    if config.method == Method::Hio {
        let p = Problem::support_only(problem.b.clone(), problem.mask.clone())?;
        return run_from(&p, config, init_spectral(&p), truth);
    }
    run_from(problem, config, init_spectral(problem), truth)
}

/// Runs `config.method` from an explicit starting state.
pub fn run_from<T: Real>(
    problem: &Problem<T>,
    config: &SolverConfig<T>,
    start: IterationState<T>,
    truth: Option<&[T]>,
) -> Result<SolverRun<T>> {
    iterate(problem, config, start, truth, None)
}

fn iterate<T: Real>(
    problem: &Problem<T>,
    config: &SolverConfig<T>,
    start: IterationState<T>,
    truth: Option<&[T]>,
    dc: Option<DcSign>,
) -> Result<SolverRun<T>> {
    config.validate()?;
    if start.z.len() != problem.object_shape().len() {
        return Err(Error::ShapeMismatch {
            expected: problem.object_shape().extents().to_vec(),
            actual: vec![start.z.len()],
        });
    }
    if let Some(x) = truth {
        if x.len() != problem.mask.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![problem.mask.len()],
                actual: vec![x.len()],
            });
        }
    }
    let truth_norm = truth.map(norm2);
    if truth_norm == Some(T::zero()) {
        return Err(Error::ZeroReference("ground truth"));
    }
    if start.z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { iteration: start.iter });
    }
    let step = build_step(problem, config, dc)?;
    let mut state = start;
    let mut trace = Vec::with_capacity(config.max_iter.min(4096));
    let mut converged = false;
    while state.iter < config.max_iter {
        state = step.apply(&state, problem);
        if !state.last_step_norm.is_finite() || state.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: state.iter });
        }
        let estimate = gather(&state.z, &problem.mask);
        let relative_error = truth.zip(truth_norm).map(|(x, nx)| dist2(&estimate, x) / nx);
        let measurement_error = intensity_misfit(&problem.assemble(&estimate), problem, step.fourier());
        trace.push(TraceEntry {
            relative_error,
            measurement_error,
            step_norm: state.last_step_norm,
        });
        if state.last_step_norm <= config.eps {
            converged = true;
            break;
        }
    }
    // BDR-type methods report the Ω-part of z̃ = P_A(z^p); PGD and HIO report z^p.
    let estimate = match (&step, config.method) {
        (Step::Relaxed(p_a, _), Method::Bdr | Method::Bdr1 | Method::Cbdr) => gather(&p_a.apply(&state.z), &problem.mask),
        _ => gather(&state.z, &problem.mask),
    };
    Ok(SolverRun {
        estimate,
        final_iterate: Field::new(problem.object_shape().clone(), state.z)?,
        iterations_used: state.iter,
        trace,
        converged,
    })
}

/// CBDR on a single DC branch.
pub fn cbdr_branch<T: Real>(
    problem: &Problem<T>,
    config: &SolverConfig<T>,
    sign: DcSign,
    truth: Option<&[T]>,
) -> Result<SolverRun<T>> {
    let mut cfg = config.clone();
    cfg.method = Method::Cbdr;
    iterate(problem, &cfg, init_spectral(problem), truth, Some(sign))
}

/// Runs both DC branches (`+√b₁` first) and keeps the one with the smaller
/// final measurement error; ties keep the `+` branch.
pub fn cbdr_parallel_real<T: Real>(problem: &Problem<T>, config: &SolverConfig<T>, truth: Option<&[T]>) -> Result<SolverRun<T>> {
    let (plus, minus) = rayon::join(
        || cbdr_branch(problem, config, DcSign::Plus, truth),
        || cbdr_branch(problem, config, DcSign::Minus, truth),
    );
    Ok(pick_branch(plus, minus)?.0)
}

/// Picks the better of two branch outcomes and reports which one won.
pub fn pick_branch<T: Real>(plus: Result<SolverRun<T>>, minus: Result<SolverRun<T>>) -> Result<(SolverRun<T>, DcSign)> {
    match (plus, minus) {
        (Ok(p), Ok(m)) => {
            if m.final_measurement_error() < p.final_measurement_error() {
                Ok((m, DcSign::Minus))
            } else {
                Ok((p, DcSign::Plus))
            }
        }
        (Ok(p), Err(_)) => Ok((p, DcSign::Plus)),
        (Err(_), Ok(m)) => Ok((m, DcSign::Minus)),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Classic hybrid input-output with a support constraint only.
pub fn hio_run<T: Real>(b: IntensityMeasurements<T>, support: SupportMask, config: &SolverConfig<T>, truth: Option<&[T]>) -> Result<SolverRun<T>> {
    let problem = Problem::support_only(b, support)?;
    let mut cfg = config.clone();
    cfg.method = Method::Hio;
    run_from(&problem, &cfg, init_spectral(&problem), truth)
}

//! Monte Carlo checks of the linear-algebra results, with machine-readable
//! reports.

use serde::{Deserialize, Serialize};

use super::generate::symmetric_draws;
use super::pool::Pool;
use crate::analysis::{
    build_linear_system, c1_coefficient, dimension_bound_2d, frip_expectation_check, l_nonsingular_check,
    least_squares_recover, robustness_bound, sample_c2, stability_constants, uniqueness_certificate,
};
use crate::error::{Error, Result};
use crate::metrics::relative_error;
use crate::rng::{mix_seed, Rng};
use crate::scalar::dist2;
use crate::spectral::{autocorrelation_from_intensity, autocorrelation_from_values, intensity_on};
use crate::types::{assemble, Dims, Field, SupportMask};

// Stream tags so that different checks never reuse draws.
const UNIQUENESS_STREAM: u64 = 0x7531;
const STABILITY_STREAM: u64 = 0x7532;
const ROBUSTNESS_STREAM: u64 = 0x7533;
const FRIP_STREAM: u64 = 0x7534;

/// A draw counts as recovered below this relative error.
pub const RECOVERY_TOLERANCE: f64 = 1e-8;

fn grid_dims(n: &[usize], k: &[usize]) -> Result<(Dims, SupportMask)> {
    let dims = Dims::unpadded(n, k)?;
    let mask = SupportMask::leading(&dims);
    Ok((dims, mask))
}

fn gaussian_background(mask: &SupportMask, rng: &mut Rng) -> Field<f64> {
    let v = (0..mask.shape().len())
        .map(|i| {
            let g = rng.gaussian();
            if mask.contains(i) {
                0.0
            } else {
                g
            }
        })
        .collect();
    Field::new(mask.shape().clone(), v).expect("sized buffer")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub draws: usize,
    /// Draws whose `M` has full column rank.
    pub unique: usize,
    /// Full-rank draws also recovered by least squares to within
    /// [`RECOVERY_TOLERANCE`].
    pub recovered: usize,
    pub worst_relative_error: f64,
    pub rate: f64,
    pub pass: bool,
}

/// Gaussian `X` and `Y`; certifies rank and recovers from exact data.
pub fn verify_uniqueness(n: &[usize], k: &[usize], draws: usize, seed: u64, pool: &Pool) -> Result<UniquenessReport> {
    if draws == 0 {
        return Err(Error::InvalidConfig("need at least one draw".into()));
    }
    let (dims, mask) = grid_dims(n, k)?;
    let idx: Vec<usize> = (0..draws).collect();
    let results = pool.map(&idx, |&d| -> Result<(bool, f64)> {
        let mut rng = Rng::new(mix_seed(seed, UNIQUENESS_STREAM, d as u64));
        let x = rng.gaussian_vec(mask.len());
        let y = gaussian_background(&mask, &mut rng);
        let z = assemble(&x, &y, &mask)?;
        let cert = uniqueness_certificate(&y, &mask)?;
        let r = autocorrelation_from_intensity(&intensity_on(z.values(), &dims.measurement_shape())?)?;
        let sol = least_squares_recover(&build_linear_system(&y, &mask, &r)?);
        Ok((cert.unique, relative_error(&sol.x, &x)?))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let unique = results.iter().filter(|r| r.0).count();
    let recovered = results.iter().filter(|r| r.0 && r.1 < RECOVERY_TOLERANCE).count();
    let rate = recovered as f64 / draws as f64;
    Ok(UniquenessReport {
        n: n.to_vec(),
        k: k.to_vec(),
        draws,
        unique,
        recovered,
        worst_relative_error: results.iter().map(|r| r.1).fold(0.0, f64::max),
        rate,
        pass: rate >= 0.99,
    })
}

/// Smallest common `k` for which the 2-D dimension count holds.
pub fn minimal_background_2d(n: [usize; 2]) -> Result<usize> {
    let mut k = 0;
    while !dimension_bound_2d(n, [k, k])?.satisfied {
        k += 1;
    }
    Ok(k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `‖X₁−X₂‖_F / (δ₁δ₂/∏m · ‖I₁−I₂‖₁)` seen.
    pub worst_ratio: f64,
    pub pass: bool,
}

/// Per pair: one shared `Y`, two Gaussian samples, and a direct evaluation
/// of `‖X₁−X₂‖_F ≤ δ₁δ₂/∏m · ‖I₁−I₂‖₁`.
pub fn verify_stability(n: [usize; 2], k: [usize; 2], pairs: usize, seed: u64, pool: &Pool) -> Result<StabilityReport> {
    if pairs == 0 {
        return Err(Error::InvalidConfig("need at least one pair".into()));
    }
    let (dims, mask) = grid_dims(&n, &k)?;
    let idx: Vec<usize> = (0..pairs).collect();
    let ratios = pool.map(&idx, |&d| -> Result<f64> {
        let mut rng = Rng::new(mix_seed(seed, STABILITY_STREAM, d as u64));
        let y = gaussian_background(&mask, &mut rng);
        let x1 = rng.gaussian_vec(mask.len());
        let x2 = rng.gaussian_vec(mask.len());
        let i1 = intensity_on(assemble(&x1, &y, &mask)?.values(), &dims.measurement_shape())?;
        let i2 = intensity_on(assemble(&x2, &y, &mask)?.values(), &dims.measurement_shape())?;
        let r = autocorrelation_from_intensity(&i1)?;
        let sc = stability_constants(&build_linear_system(&y, &mask, &r)?)?;
        let di: f64 = i1.values().as_slice().iter().zip(i2.values().as_slice()).map(|(a, b)| (a - b).abs()).sum();
        Ok(dist2(&x1, &x2) / (sc.bound_factor * di))
    });
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    let violations = ratios.iter().filter(|&&r| !(r <= 1.0)).count();
    Ok(StabilityReport {
        n: n.to_vec(),
        k: k.to_vec(),
        pairs,
        violations,
        worst_ratio: ratios.iter().copied().fold(0.0, f64::max),
        pass: violations == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub c1: f64,
    pub c2: f64,
    pub instances: usize,
    pub violations: usize,
    /// Largest measured error over bound.
    pub worst_ratio: f64,
    /// Largest `|bound(c₂=0) − c₁δ₁δ₂| / (c₁δ₁δ₂)` seen.
    pub c2_zero_deviation: f64,
    pub pass: bool,
}

/// Intensity noise uniform in `[−c₁, c₁]` (mirror-averaged) and background
/// bias uniform in `[−c₂, c₂]` off Ω; least squares on the corrupted data.
pub fn verify_robustness(
    n: [usize; 2],
    k: [usize; 2],
    c1: f64,
    c2: f64,
    instances: usize,
    seed: u64,
    pool: &Pool,
) -> Result<RobustnessReport> {
    if instances == 0 || !(c1 >= 0.0 && c2 >= 0.0) {
        return Err(Error::InvalidConfig("need instances ≥ 1 and nonnegative noise levels".into()));
    }
    let (dims, mask) = grid_dims(&n, &k)?;
    let idx: Vec<usize> = (0..instances).collect();
    let out = pool.map(&idx, |&d| -> Result<(f64, f64)> {
        let mut rng = Rng::new(mix_seed(seed, ROBUSTNESS_STREAM, d as u64));
        let y = gaussian_background(&mask, &mut rng);
        let x = rng.gaussian_vec(mask.len());
        let i = intensity_on(assemble(&x, &y, &mask)?.values(), &dims.measurement_shape())?;
        let shape = i.shape().clone();
        let e1 = symmetric_draws(&shape, &mut rng, |r| r.uniform_range(-c1, c1));
        let i_tilde = Field::new(shape, i.values().as_slice().iter().zip(&e1).map(|(a, e)| a + e).collect())?;
        let y_tilde = super::generate::bias_background(&y, &mask, c2, &mut rng);
        let r_tilde = autocorrelation_from_values(&i_tilde)?;
        let sys = build_linear_system(&y_tilde, &mask, &r_tilde)?;
        let x_star = least_squares_recover(&sys).x;
        let bound = robustness_bound(&sys, c1, c2, &i_tilde, &y_tilde)?;
        let sc = stability_constants(&sys)?;
        let special = robustness_bound(&sys, c1, 0.0, &i_tilde, &y_tilde)?;
        let expect = c1 * sc.delta1 * sc.delta2;
        let dev = if expect > 0.0 { (special - expect).abs() / expect } else { special.abs() };
        Ok((dist2(&x_star, &x) / bound, dev))
    });
    let out = out.into_iter().collect::<Result<Vec<_>>>()?;
    let violations = out.iter().filter(|r| !(r.0 <= 1.0)).count();
    let c2_zero_deviation = out.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(RobustnessReport {
        n: n.to_vec(),
        k: k.to_vec(),
        c1,
        c2,
        instances,
        violations,
        worst_ratio: out.iter().map(|r| r.0).fold(0.0, f64::max),
        c2_zero_deviation,
        pass: violations == 0 && c2_zero_deviation <= 1e-12,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMatrixReport {
    pub n: usize,
    pub k: usize,
    pub draws: usize,
    pub nonsingular_fraction: f64,
    pub pass: bool,
}

/// Gaussian `x` fixed by `seed`, fresh Gaussian backgrounds per draw.
pub fn verify_lmatrix(n: usize, k: usize, draws: usize, seed: u64) -> Result<LMatrixReport> {
    let x = Rng::new(seed).gaussian_vec(n);
    let f = l_nonsingular_check(&x, k, draws, seed)?;
    Ok(LMatrixReport {
        n,
        k,
        draws,
        nonsingular_fraction: f,
        pass: f >= 0.99,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FripEntry {
    pub empirical_mean: f64,
    pub predicted: f64,
    pub stderr: f64,
    pub deviation: f64,
    pub c1: f64,
    pub c1_floor: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FripVerifyReport {
    pub n: usize,
    pub k: usize,
    pub draws: usize,
    pub entries: Vec<FripEntry>,
    pub pass: bool,
}

/// `h_count` vectors from C₂, each checked against `draws` backgrounds;
/// agreement is judged at 3 standard errors.
pub fn verify_frip(n: usize, k: usize, h_count: usize, draws: usize, seed: u64) -> Result<FripVerifyReport> {
    if n == 0 || k == 0 || h_count == 0 {
        return Err(Error::InvalidConfig("need n, k and the number of h vectors positive".into()));
    }
    let x = Rng::new(seed).gaussian_vec(n);
    let floor = (k as f64 - n as f64) / k as f64;
    let entries = (0..h_count)
        .map(|j| {
            let h = sample_c2(n + k, mix_seed(seed, FRIP_STREAM, j as u64));
            let rep = frip_expectation_check(&x, &h, draws, mix_seed(seed, FRIP_STREAM + 1, j as u64))?;
            let c1 = c1_coefficient(&h, n, k);
            Ok(FripEntry {
                empirical_mean: rep.empirical_mean,
                predicted: rep.predicted,
                stderr: rep.stderr,
                deviation: rep.deviation,
                c1,
                c1_floor: floor,
                within: rep.within(3.0) && c1 >= floor - 1e-12,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FripVerifyReport {
        n,
        k,
        draws,
        pass: entries.iter().all(|e| e.within),
        entries,
    })
}

//! Recovery quality metrics.

use crate::error::{Error, Result};
use crate::scalar::{dist2, norm2, Real};
use crate::spectral::Fourier;
use crate::types::{Field, IntensityMeasurements, SupportMask};

/// A recovery counts as successful when its relative error is below this.
pub const SUCCESS_THRESHOLD: f64 = 1e-5;

/// Metrics for one recovered sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport<T> {
    pub relative_error: T,
    pub measurement_error: T,
    /// `+∞` for an exact match.
    pub psnr_db: T,
    pub ssim: T,
    pub success: bool,
}

/// `‖x̂ − x‖₂ / ‖x‖₂`, with no sign or shift matching.
pub fn relative_error<T: Real>(x_hat: &[T], x: &[T]) -> Result<T> {
    if x_hat.len() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            actual: vec![x_hat.len()],
        });
    }
    let nx = norm2(x);
    if nx == T::zero() {
        return Err(Error::ZeroReference("ground truth"));
    }
    Ok(dist2(x_hat, x) / nx)
}

/// `‖|DFT(z̄)|² − b‖₂ / ‖b‖₂` with `z̄` the estimate placed in the background.
pub fn measurement_error<T: Real>(x_hat: &[T], y: &Field<T>, mask: &SupportMask, b: &IntensityMeasurements<T>) -> Result<T> {
    if x_hat.len() != mask.len() || y.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.len()],
            actual: vec![x_hat.len()],
        });
    }
    let nb = norm2(b.values().as_slice());
    if nb == T::zero() {
        return Err(Error::ZeroReference("measurements"));
    }
    let mut z = y.as_slice().to_vec();
    for (&i, &v) in mask.indices().iter().zip(x_hat) {
        z[i] = v;
    }
    let s = Fourier::new(b.shape()).forward_real(&z, y.shape());
    let num = s
        .iter()
        .zip(b.values().as_slice())
        .map(|(c, &bv)| {
            let d = c.norm_sqr() - bv;
            d * d
        })
        .sum::<T>()
        .sqrt();
    Ok(num / nb)
}

/// `10·log₁₀(peak²/MSE)`; `+∞` when the inputs are identical.
pub fn psnr<T: Real>(img_hat: &[T], img: &[T], peak: T) -> Result<T> {
    if img_hat.len() != img.len() || img.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![img.len()],
            actual: vec![img_hat.len()],
        });
    }
    let mse = img_hat
        .iter()
        .zip(img)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / T::from_usize_lossy(img.len());
    if mse == T::zero() {
        return Ok(T::infinity());
    }
    Ok(T::lit(10.0) * (peak * peak / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams<T> {
    pub window: usize,
    pub sigma: T,
    pub k1: T,
    pub k2: T,
    pub dynamic_range: T,
}

impl<T: Real> SsimParams<T> {
    /// 11×11 Gaussian window, σ = 1.5, K₁ = 0.01, K₂ = 0.03.
    pub fn standard(dynamic_range: T) -> Self {
        SsimParams {
            window: 11,
            sigma: T::lit(1.5),
            k1: T::lit(0.01),
            k2: T::lit(0.03),
            dynamic_range,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimResult<T> {
    pub value: T,
    /// Set when the image is smaller than the window and a single global
    /// comparison was made instead.
    pub global_fallback: bool,
}

fn ssim_formula<T: Real>(ma: T, mb: T, va: T, vb: T, cov: T, c1: T, c2: T) -> T {
    let two = T::lit(2.0);
    ((two * ma * mb + c1) * (two * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

fn gaussian_weights<T: Real>(size: usize, sigma: T) -> Vec<T> {
    let c = T::from_usize_lossy(size - 1) / T::lit(2.0);
    let w: Vec<T> = (0..size)
        .map(|i| {
            let d = T::from_usize_lossy(i) - c;
            (-(d * d) / (T::lit(2.0) * sigma * sigma)).exp()
        })
        .collect();
    let s: T = w.iter().copied().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every fully contained window.
fn filter_valid<T: Real>(img: &[T], rows: usize, cols: usize, w: &[T]) -> Vec<T> {
    let k = w.len();
    let (or, oc) = (rows + 1 - k, cols + 1 - k);
    let mut horiz = vec![T::zero(); rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            horiz[r * oc + c] = (0..k).map(|j| w[j] * img[r * cols + c + j]).sum();
        }
    }
    let mut out = vec![T::zero(); or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..k).map(|i| w[i] * horiz[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over all valid windows.
pub fn ssim<T: Real>(img_hat: &Field<T>, img: &Field<T>, params: &SsimParams<T>) -> Result<SsimResult<T>> {
    if img_hat.shape() != img.shape() {
        return Err(Error::ShapeMismatch {
            expected: img.shape().extents().to_vec(),
            actual: img_hat.shape().extents().to_vec(),
        });
    }
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let (a, b) = (img_hat.as_slice(), img.as_slice());
    let ext = img.shape().extents();
    let win = params.window;
    if ext.len() != 2 || ext[0] < win || ext[1] < win || win == 0 {
        let n = T::from_usize_lossy(a.len());
        let ma = a.iter().copied().sum::<T>() / n;
        let mb = b.iter().copied().sum::<T>() / n;
        let va = a.iter().map(|&v| (v - ma) * (v - ma)).sum::<T>() / n;
        let vb = b.iter().map(|&v| (v - mb) * (v - mb)).sum::<T>() / n;
        let cov = a.iter().zip(b).map(|(&u, &v)| (u - ma) * (v - mb)).sum::<T>() / n;
        return Ok(SsimResult {
            value: ssim_formula(ma, mb, va, vb, cov, c1, c2),
            global_fallback: true,
        });
    }
    let (rows, cols) = (ext[0], ext[1]);
    let w = gaussian_weights(win, params.sigma);
    let prod = |f: &dyn Fn(T, T) -> T| -> Vec<T> { a.iter().zip(b).map(|(&u, &v)| f(u, v)).collect() };
    let mu_a = filter_valid(a, rows, cols, &w);
    let mu_b = filter_valid(b, rows, cols, &w);
    let aa = filter_valid(&prod(&|u, _| u * u), rows, cols, &w);
    let bb = filter_valid(&prod(&|_, v| v * v), rows, cols, &w);
    let ab = filter_valid(&prod(&|u, v| u * v), rows, cols, &w);
    let total: T = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_formula(ma, mb, aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb, c1, c2)
        })
        .sum();
    Ok(SsimResult {
        value: total / T::from_usize_lossy(mu_a.len()),
        global_fallback: false,
    })
}

/// Strict `e < 1e-5`.
pub fn success<T: Real>(e: T) -> bool {
    e < T::lit(SUCCESS_THRESHOLD)
}

//! Linear-algebra side of the model: non-overlapping autocorrelation shifts,
//! the `M·vec(X) = R₃` system and its least-squares solution, stability and
//! robustness constants, and the circulant matrices behind the convex
//! formulation.
//!
//! # Row convention
//!
//! For a shift `l` whose translate of Ω misses Ω, every product in
//! `R[l] = Σ_p Z[p]·Z[p+l]` pairs an unknown with a background value or two
//! background values, so
//!
//! ```text
//! R[l] = Σ_{q∈Ω} x_q·(Y[q+l] + Y[q−l]) + R_Y[l]
//! ```
//!
//! where `R_Y` is the autocorrelation of `Y` alone. `R[l]` and `R[−l]` carry
//! the same equation; the row stores the coefficients above and the
//! right-hand side `½(R[l] + R[−l]) − R_Y[l]`.

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{mix_seed, Rng};
use crate::scalar::Real;
use crate::spectral::{Autocorrelation, Fourier};
use crate::types::{Field, Shape, SupportMask};

/// Relative threshold below which singular values count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Per-axis shift, each component in `0..m`.
pub type Shift = Vec<usize>;

fn shift_mirror(shape: &Shape, l: &[usize]) -> Shift {
    l.iter().zip(shape.extents()).map(|(&v, &m)| (m - v) % m).collect()
}

/// Shifts `l ≠ 0` with `(Ω + l) ∩ Ω = ∅`, one representative per mirror
/// pair (the lexicographically smaller of `l` and `−l mod m`).
pub fn enumerate_nonoverlap_shifts(mask: &SupportMask) -> Vec<Shift> {
    let shape = mask.shape();
    let ext = shape.extents();
    let mut hits = vec![false; shape.len()];
    let pts: Vec<[usize; 2]> = mask.indices().iter().map(|&i| shape.unravel(i)).collect();
    for p in &pts {
        for q in &pts {
            let mut off = 0;
            for a in 0..ext.len() {
                off = off * ext[a] + (q[a] + ext[a] - p[a]) % ext[a];
            }
            hits[off] = true;
        }
    }
    (0..shape.len())
        .filter(|&o| !hits[o])
        .filter_map(|o| {
            let l: Shift = shape.unravel(o)[..ext.len()].to_vec();
            (l <= shift_mirror(shape, &l)).then_some(l)
        })
        .collect()
}

/// The system `M·vec(X) = R₃` together with the shift behind each row.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T: RealField> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
    pub shifts: Vec<Shift>,
    pub shape: Shape,
}

fn signed(l: &[usize], sign: isize) -> Vec<isize> {
    l.iter().map(|&v| sign * v as isize).collect()
}

/// Coefficient matrix only; its rows follow [`enumerate_nonoverlap_shifts`].
pub fn build_matrix<T: Real + RealField>(y: &Field<T>, mask: &SupportMask) -> Result<(DMatrix<T>, Vec<Shift>)> {
    if y.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape().extents().to_vec(),
            actual: y.shape().extents().to_vec(),
        });
    }
    let shape = mask.shape();
    let shifts = enumerate_nonoverlap_shifts(mask);
    let yv = y.as_slice();
    let mut m = DMatrix::<T>::zeros(shifts.len(), mask.len());
    for (row, l) in shifts.iter().enumerate() {
        let (plus, minus) = (signed(l, 1), signed(l, -1));
        for (col, &q) in mask.indices().iter().enumerate() {
            m[(row, col)] = yv[shape.shifted(q, &plus)] + yv[shape.shifted(q, &minus)];
        }
    }
    Ok((m, shifts))
}

/// Builds `M` and `R₃` from the background and a measured autocorrelation.
pub fn build_linear_system<T: Real + RealField>(y: &Field<T>, mask: &SupportMask, r: &Autocorrelation<T>) -> Result<LinearSystem<T>> {
    if r.values.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape().extents().to_vec(),
            actual: r.values.shape().extents().to_vec(),
        });
    }
    let (matrix, shifts) = build_matrix(y, mask)?;
    let shape = mask.shape();
    let yv = y.as_slice();
    let rv = r.values.as_slice();
    let half = T::lit(0.5);
    let rhs = DVector::from_iterator(
        shifts.len(),
        shifts.iter().map(|l| {
            let plus = signed(l, 1);
            let ryy = yv
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != T::zero())
                .fold(T::zero(), |acc, (p, &v)| acc + v * yv[shape.shifted(p, &plus)]);
            let lo = shape.offset(l);
            let mirror = shape.offset(&shift_mirror(shape, l));
            half * (rv[lo] + rv[mirror]) - ryy
        }),
    );
    Ok(LinearSystem {
        matrix,
        rhs,
        shifts,
        shape: shape.clone(),
    })
}

/// Least-squares solution of a [`LinearSystem`].
#[derive(Clone, Debug, PartialEq)]
pub struct LsSolution<T> {
    /// Minimum-norm minimiser, row-major over Ω.
    pub x: Vec<T>,
    pub rank: usize,
    /// `false` when `M` is column-rank deficient and `x` is one of many minimisers.
    pub unique: bool,
}

fn singular_values<T: Real + RealField>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

fn rank_from<T: Real + RealField>(sv: &[T]) -> usize {
    let smax = sv.iter().fold(T::zero(), |a, &b| Float::max(a, b));
    if smax <= T::zero() {
        return 0;
    }
    let tol = T::lit(RANK_TOLERANCE) * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Numerical rank with threshold `1e-10·σ_max`.
pub fn numerical_rank<T: Real + RealField>(m: &DMatrix<T>) -> usize {
    rank_from(&singular_values(m))
}

/// SVD-based least squares; rank deficiency is reported, not raised.
pub fn least_squares_recover<T: Real + RealField>(sys: &LinearSystem<T>) -> LsSolution<T> {
    let cols = sys.matrix.ncols();
    if sys.matrix.nrows() == 0 || cols == 0 {
        return LsSolution {
            x: vec![T::zero(); cols],
            rank: 0,
            unique: cols == 0,
        };
    }
    let svd = sys.matrix.clone().svd(true, true);
    let sv: Vec<T> = svd.singular_values.iter().copied().collect();
    let rank = rank_from(&sv);
    let smax = sv.iter().fold(T::zero(), |a, &b| Float::max(a, b));
    let tol = T::lit(RANK_TOLERANCE) * smax;
    let x = svd
        .solve(&sys.rhs, tol)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![T::zero(); cols]);
    LsSolution {
        x,
        rank,
        unique: rank == cols,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniquenessCertificate {
    pub unique: bool,
    pub rank: usize,
    pub required_rank: usize,
}

/// Unique recovery is certified when `M` has full column rank.
pub fn uniqueness_certificate<T: Real + RealField>(y: &Field<T>, mask: &SupportMask) -> Result<UniquenessCertificate> {
    let (m, _) = build_matrix(y, mask)?;
    let rank = numerical_rank(&m);
    Ok(UniquenessCertificate {
        unique: rank == mask.len(),
        rank,
        required_rank: mask.len(),
    })
}

/// Outcome of a counting bound `lhs ≥ rhs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DimensionBound {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// Factor `c` such that `k ≥ c·n` on every axis suffices in the symmetric case.
    pub threshold_factor: f64,
}

fn check_sizes(n: &[usize], k: &[usize]) -> Result<()> {
    if n.is_empty() || n.len() != k.len() {
        return Err(Error::InvalidDims(format!("sizes {n:?} and backgrounds {k:?} must be non-empty and equally long")));
    }
    if n.contains(&0) {
        return Err(Error::InvalidDims("sample sizes must be positive".into()));
    }
    Ok(())
}

/// `∏(n_i + k_i) ≥ 2∏n_i + ∏(2n_i − 1)` in any dimension.
pub fn dimension_bound(n: &[usize], k: &[usize]) -> Result<DimensionBound> {
    check_sizes(n, k)?;
    let d = n.len() as f64;
    let lhs: f64 = n.iter().zip(k).map(|(&a, &b)| (a + b) as f64).product();
    let rhs = 2.0 * n.iter().map(|&a| a as f64).product::<f64>() + n.iter().map(|&a| (2 * a - 1) as f64).product::<f64>();
    Ok(DimensionBound {
        satisfied: lhs >= rhs,
        lhs,
        rhs,
        threshold_factor: 2f64.powf((d + 1.0) / d) - 1.0,
    })
}

/// Two-dimensional count `(n₁+k₁)(n₂+k₂) ≥ (2n₁−1)(3n₂−1) + n₂`.
///
/// The threshold factor is the positive root of `(1+c)² = 6`, i.e. `√6 − 1`,
/// the symmetric-case limit of this count for large `n`.
pub fn dimension_bound_2d(n: [usize; 2], k: [usize; 2]) -> Result<DimensionBound> {
    check_sizes(&n, &k)?;
    let lhs = ((n[0] + k[0]) * (n[1] + k[1])) as f64;
    let rhs = ((2 * n[0] - 1) * (3 * n[1] - 1) + n[1]) as f64;
    Ok(DimensionBound {
        satisfied: lhs >= rhs,
        lhs,
        rhs,
        threshold_factor: 6f64.sqrt() - 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityConstants<T> {
    /// Largest singular value of `(MᵀM)⁻¹`, i.e. `1/σ_min(M)²`.
    pub delta1: T,
    /// Largest singular value of `M`.
    pub delta2: T,
    /// `δ₁δ₂ / ∏m`.
    pub bound_factor: T,
}

pub fn stability_constants<T: Real + RealField>(sys: &LinearSystem<T>) -> Result<StabilityConstants<T>> {
    let sv = singular_values(&sys.matrix);
    let required = sys.matrix.ncols();
    let rank = rank_from(&sv);
    if rank < required || sv.len() < required {
        return Err(Error::RankDeficient { rank, required });
    }
    let smax = sv.iter().fold(T::zero(), |a, &b| Float::max(a, b));
    let smin = sv.iter().fold(T::infinity(), |a, &b| Float::min(a, b));
    let delta1 = T::one() / (smin * smin);
    let delta2 = smax;
    Ok(StabilityConstants {
        delta1,
        delta2,
        bound_factor: delta1 * delta2 / T::from_usize_lossy(sys.shape.len()),
    })
}

/// Error certificate for least squares on corrupted data.
///
/// `c1` bounds the intensity noise per entry and `c2` the background error
/// per entry; `i_tilde`/`y_tilde` are the corrupted intensities and
/// background the system was built from. With `N = ∏n`, `Mm = ∏m`:
///
/// ```text
/// δ₁δ₂·(c₁ + c₂(2‖Ỹ‖₁ + c₂·Mm) + √(4c₂²N·‖Ĩ‖₁ + 4c₁c₂²N·Mm) / Mm)
/// ```
pub fn robustness_bound<T: Real + RealField>(
    sys: &LinearSystem<T>,
    c1: T,
    c2: T,
    i_tilde: &Field<T>,
    y_tilde: &Field<T>,
) -> Result<T> {
    if !(c1 >= T::zero() && c2 >= T::zero()) {
        return Err(Error::InvalidConfig("noise levels must be nonnegative".into()));
    }
    let sc = stability_constants(sys)?;
    let grid = T::from_usize_lossy(sys.shape.len());
    let unknowns = T::from_usize_lossy(sys.matrix.ncols());
    let four = T::lit(4.0);
    let y1: T = y_tilde.as_slice().iter().map(|&v| Float::abs(v)).sum();
    let i1: T = i_tilde.as_slice().iter().map(|&v| Float::abs(v)).sum();
    let big_c2 = four * c2 * c2 * unknowns;
    let big_c1 = four * c1 * c2 * c2 * unknowns * grid;
    let root = Float::sqrt(big_c2 * i1 + big_c1);
    Ok(sc.delta1 * sc.delta2 * (c1 + c2 * (T::lit(2.0) * y1 + c2 * grid) + root / grid))
}

/// Full circulant `L` of `z` and its last `k` rows `L₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct CirculantPair<T: RealField> {
    pub l: DMatrix<T>,
    pub l1: DMatrix<T>,
}

/// `L[r][c] = z[(r − c) mod m]`, so `L·h` is the circular convolution `z ⊛ h`
/// and `L` is diagonalised by the DFT. `L₁` keeps rows `n..m`.
pub fn build_circulant<T: Real + RealField>(z: &[T], n: usize) -> Result<CirculantPair<T>> {
    let m = z.len();
    if m == 0 || n > m {
        return Err(Error::InvalidDims(format!("sample length {n} does not fit in {m}")));
    }
    let l = DMatrix::from_fn(m, m, |r, c| z[(r + m - c) % m]);
    let l1 = l.rows(n, m - n).into_owned();
    Ok(CirculantPair { l, l1 })
}

/// Ratio `σ_max/σ_min` (infinite when singular).
pub fn condition_number<T: Real + RealField>(m: &DMatrix<T>) -> T {
    let sv = singular_values(m);
    let smax = sv.iter().fold(T::zero(), |a, &b| Float::max(a, b));
    let smin = sv.iter().fold(T::infinity(), |a, &b| Float::min(a, b));
    if smin > T::zero() {
        smax / smin
    } else {
        T::infinity()
    }
}

/// Fraction of Gaussian backgrounds of length `k` for which `L([x; y])` has
/// condition number below `1e12`.
pub fn l_nonsingular_check(x: &[f64], k: usize, draws: usize, seed: u64) -> Result<f64> {
    if k == 0 || draws == 0 {
        return Err(Error::InvalidConfig("need k ≥ 1 and at least one draw".into()));
    }
    let good = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = Rng::new(mix_seed(seed, 0, d as u64));
            let mut z = x.to_vec();
            z.extend(rng.gaussian_vec(k));
            let pair = build_circulant(&z, x.len()).expect("valid sizes");
            condition_number(&pair.l) < 1e12
        })
        .filter(|&ok| ok)
        .count();
    Ok(good as f64 / draws as f64)
}

/// Largest DFT magnitude of a real vector.
pub fn spectral_peak(h: &[f64]) -> f64 {
    let shape = Shape::line(h.len());
    Fourier::new(&shape).forward_real(h, &shape).iter().fold(0.0f64, |m, c| m.max(c.norm()))
}

/// Random element of `C₂ = {h : |DFT(h)_i| ≤ 2 ∀i}`: a Gaussian vector
/// whose spectrum is radially clamped to magnitude 2.
pub fn sample_c2(m: usize, seed: u64) -> Vec<f64> {
    let shape = Shape::line(m);
    let mut rng = Rng::new(seed);
    let fourier = Fourier::new(&shape);
    let mut s = fourier.forward_real(&rng.gaussian_vec(m), &shape);
    clamp_spectrum(&mut s, 2.0);
    fourier.inverse_real(s, &shape)
}

/// Radial clamp `ŵ = ẑ·min(1, r/|ẑ|)`; preserves conjugate symmetry.
pub fn clamp_spectrum(s: &mut [num_complex::Complex<f64>], radius: f64) {
    for c in s.iter_mut() {
        let mag = c.norm();
        if mag > radius {
            *c = c.scale(radius / mag);
        }
    }
}

/// `c₁(h) = (1/(k‖h‖²))·Σ_{ℓ=n}^{n+k−1} Σ_{i=n}^{n+k−1} h[(ℓ−i) mod m]²`.
pub fn c1_coefficient(h: &[f64], n: usize, k: usize) -> f64 {
    let m = h.len();
    let hh: f64 = h.iter().map(|v| v * v).sum();
    if hh == 0.0 || k == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for l in n..n + k {
        for i in n..n + k {
            let v = h[(l + m - i) % m];
            acc += v * v;
        }
    }
    acc / (k as f64 * hh)
}

fn circular_rows(z: &[f64], h: &[f64], rows: std::ops::Range<usize>) -> Vec<f64> {
    let m = z.len();
    rows.map(|r| (0..m).map(|c| z[(r + m - c) % m] * h[c]).sum()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FripReport {
    pub empirical_mean: f64,
    pub predicted: f64,
    pub stderr: f64,
    pub c1: f64,
    /// `|empirical − predicted|`.
    pub deviation: f64,
}

impl FripReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.deviation <= sigmas * self.stderr
    }
}

/// Monte Carlo mean of `(1/k)‖L₁h‖²` over Gaussian backgrounds against
/// `c₁(h)‖h‖² + ‖Φh‖²`, where `Φh` is the last `k` rows of `[x; 0] ⊛ h`
/// scaled by `1/√k`.
pub fn frip_expectation_check(x: &[f64], h: &[f64], draws: usize, seed: u64) -> Result<FripReport> {
    let n = x.len();
    let m = h.len();
    if m <= n || draws < 2 {
        return Err(Error::InvalidConfig("need len(h) > len(x) and at least two draws".into()));
    }
    let peak = spectral_peak(h);
    if peak > 2.0 + 1e-10 {
        return Err(Error::OutsideSpectralBall { max_magnitude: peak });
    }
    let k = m - n;
    let kf = k as f64;
    let samples: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = Rng::new(mix_seed(seed, 1, d as u64));
            let mut z = x.to_vec();
            z.extend(rng.gaussian_vec(k));
            circular_rows(&z, h, n..m).iter().map(|v| v * v).sum::<f64>() / kf
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / draws as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let stderr = (var / draws as f64).sqrt();
    let mut z1 = x.to_vec();
    z1.resize(m, 0.0);
    let phi: f64 = circular_rows(&z1, h, n..m).iter().map(|v| v * v).sum::<f64>() / kf;
    let c1 = c1_coefficient(h, n, k);
    let hh: f64 = h.iter().map(|v| v * v).sum();
    let predicted = c1 * hh + phi;
    Ok(FripReport {
        empirical_mean: mean,
        predicted,
        stderr,
        c1,
        deviation: (mean - predicted).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spectral::{autocorrelation_direct, autocorrelation_from_intensity, intensity};
    use crate::types::{assemble, Dims};
    use proptest::prelude::*;

    fn instance(n: &[usize], k: &[usize], seed: u64) -> (Field<f64>, SupportMask, Vec<f64>, crate::types::CombinedObject<f64>) {
        let dims = Dims::unpadded(n, k).unwrap();
        let mask = SupportMask::leading(&dims);
        let mut rng = Rng::new(seed);
        let mut y = rng.gaussian_vec(dims.object_shape().len());
        for &i in mask.indices() {
            y[i] = 0.0;
        }
        let y = Field::new(dims.object_shape(), y).unwrap();
        let x = rng.gaussian_vec(mask.len());
        let z = assemble(&x, &y, &mask).unwrap();
        (y, mask, x, z)
    }

    #[test]
    fn shift_examples() {
        let mask = SupportMask::block(Shape::line(4), &[0], &[1]).unwrap();
        assert_eq!(enumerate_nonoverlap_shifts(&mask), vec![vec![1], vec![2]]);
        let full = SupportMask::block(Shape::line(4), &[0], &[4]).unwrap();
        assert!(enumerate_nonoverlap_shifts(&full).is_empty());
        let mask = SupportMask::block(Shape::grid(2, 2), &[0, 0], &[1, 1]).unwrap();
        assert_eq!(enumerate_nonoverlap_shifts(&mask), vec![vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn scalar_system_example() {
        let shape = Shape::line(4);
        let mask = SupportMask::block(shape.clone(), &[0], &[1]).unwrap();
        let y = Field::new(shape, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let z = assemble(&[7.0], &y, &mask).unwrap();
        let r = autocorrelation_direct(z.values());
        assert_eq!(r.values.as_slice(), &[63.0, 36.0, 34.0, 36.0]);
        let sys = build_linear_system(&y, &mask, &r).unwrap();
        assert_eq!(sys.matrix[(0, 0)], 4.0);
        assert_eq!(sys.rhs[0], 28.0);
        let sol = least_squares_recover(&sys);
        assert!(sol.unique);
        assert!((sol.x[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_background_gives_no_information() {
        let shape = Shape::line(6);
        let mask = SupportMask::block(shape.clone(), &[0], &[2]).unwrap();
        let y = Field::<f64>::zeros(shape);
        let (m, _) = build_matrix(&y, &mask).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
        let cert = uniqueness_certificate(&y, &mask).unwrap();
        assert!(!cert.unique);
        assert_eq!(cert.rank, 0);
    }

    #[test]
    fn tiny_generic_background_is_unique() {
        let (y, mask, _, _) = instance(&[1], &[2], 3);
        let cert = uniqueness_certificate(&y, &mask).unwrap();
        assert!(cert.unique);
        assert_eq!(cert.rank, 1);
    }

    #[test]
    fn exact_recovery_in_one_and_two_dimensions() {
        for (n, k) in [(vec![20], vec![59]), (vec![8, 8], vec![12, 12])] {
            let (y, mask, x, z) = instance(&n, &k, 17);
            let r = autocorrelation_from_intensity(&intensity(&z)).unwrap();
            let sys = build_linear_system(&y, &mask, &r).unwrap();
            let sol = least_squares_recover(&sys);
            assert!(sol.unique);
            let err = crate::scalar::dist2(&sol.x, &x) / crate::scalar::norm2(&x);
            assert!(err < 1e-8, "{n:?}: {err}");
        }
    }

    #[test]
    fn rank_deficient_system_is_flagged() {
        let (mut y, mask, _, z) = instance(&[4], &[3], 5);
        y.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        let r = autocorrelation_direct(z.values());
        let sys = build_linear_system(&y, &mask, &r).unwrap();
        let sol = least_squares_recover(&sys);
        assert!(!sol.unique);
        assert!(stability_constants(&sys).is_err());
    }

    #[test]
    fn dimension_bounds() {
        let b = dimension_bound(&[10], &[30]).unwrap();
        assert_eq!(b.threshold_factor, 3.0);
        assert!(b.satisfied);
        assert!(!dimension_bound(&[10], &[28]).unwrap().satisfied);
        let b = dimension_bound(&[5, 5], &[9, 9]).unwrap();
        assert!((b.threshold_factor - (2f64.powf(1.5) - 1.0)).abs() < 1e-15);
        assert!(dimension_bound(&[0], &[3]).is_err());
        let b = dimension_bound_2d([8, 8], [12, 12]).unwrap();
        assert_eq!((b.lhs, b.rhs), (400.0, 353.0));
        assert!(b.satisfied);
    }

    #[test]
    fn orthonormal_columns_have_unit_constants() {
        let sys = LinearSystem {
            matrix: DMatrix::<f64>::identity(3, 2),
            rhs: DVector::zeros(3),
            shifts: vec![vec![1], vec![2], vec![3]],
            shape: Shape::line(4),
        };
        let sc = stability_constants(&sys).unwrap();
        assert!((sc.delta1 - 1.0).abs() < 1e-12 && (sc.delta2 - 1.0).abs() < 1e-12);
        assert!((sc.bound_factor - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constants_scale_with_background() {
        let (y, mask, _, _) = instance(&[3, 3], &[5, 5], 8);
        let (m, shifts) = build_matrix(&y, &mask).unwrap();
        let sys = |m| LinearSystem {
            matrix: m,
            rhs: DVector::zeros(shifts.len()),
            shifts: shifts.clone(),
            shape: mask.shape().clone(),
        };
        let a = stability_constants(&sys(m)).unwrap();
        let (m2, _) = build_matrix(&y.map(|v| 2.5 * v), &mask).unwrap();
        let b = stability_constants(&sys(m2)).unwrap();
        assert!((b.delta2 / a.delta2 - 2.5).abs() < 1e-10);
        assert!((b.delta1 / a.delta1 - 1.0 / 6.25).abs() < 1e-10);
        assert!((b.bound_factor / a.bound_factor - 0.4).abs() < 1e-10);
    }

    #[test]
    fn robustness_collapses_without_background_noise() {
        let (y, mask, _, z) = instance(&[4, 4], &[6, 6], 2);
        let i = intensity(&z);
        let r = autocorrelation_from_intensity(&i).unwrap();
        let sys = build_linear_system(&y, &mask, &r).unwrap();
        let sc = stability_constants(&sys).unwrap();
        assert_eq!(robustness_bound(&sys, 0.0, 0.0, i.values(), &y).unwrap(), 0.0);
        let b = robustness_bound(&sys, 1e-3, 0.0, i.values(), &y).unwrap();
        assert!((b - 1e-3 * sc.delta1 * sc.delta2).abs() <= 1e-12 * b);
    }

    #[test]
    fn perturbed_rhs_moves_solution_within_stability_scale() {
        let (y, mask, _, z) = instance(&[10], &[30], 4);
        let r = autocorrelation_direct(z.values());
        let sys = build_linear_system(&y, &mask, &r).unwrap();
        let sc = stability_constants(&sys).unwrap();
        let base = least_squares_recover(&sys);
        let mut rng = Rng::new(6);
        let mut noisy = sys.clone();
        let delta: Vec<f64> = rng.gaussian_vec(sys.rhs.len()).iter().map(|v| 1e-6 * v).collect();
        for (r, d) in noisy.rhs.iter_mut().zip(&delta) {
            *r += d;
        }
        let moved = least_squares_recover(&noisy);
        let shift = crate::scalar::dist2(&moved.x, &base.x);
        assert!(shift <= sc.delta1 * sc.delta2 * crate::scalar::norm2(&delta));
    }

    #[test]
    fn circulant_example_and_first_column() {
        let pair = build_circulant(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(pair.l.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 2.0]);
        assert_eq!(pair.l.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 1.0, 3.0]);
        assert_eq!(pair.l.row(2).iter().copied().collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        assert_eq!(pair.l1, pair.l.rows(1, 2).into_owned());
        assert_eq!(pair.l.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn nonsingularity_and_degenerate_circulant() {
        assert!(l_nonsingular_check(&[1.0], 4, 100, 1).unwrap() >= 0.99);
        let flat = build_circulant(&[1.0; 6], 2).unwrap();
        assert!(condition_number(&flat.l) >= 1e12);
    }

    #[test]
    fn c2_samples_and_coefficient_bounds() {
        for seed in 0..20 {
            let h = sample_c2(40, seed);
            assert!(spectral_peak(&h) <= 2.0 + 1e-10);
            assert!(h.iter().map(|v| v * v).sum::<f64>() <= 4.0 + 1e-10);
            let c1 = c1_coefficient(&h, 8, 32);
            assert!(c1 >= 24.0 / 32.0 - 1e-12 && c1 <= 1.0 + 1e-12);
        }
        let z = frip_expectation_check(&[1.0, -2.0], &[0.0; 10], 10, 0).unwrap();
        assert_eq!((z.empirical_mean, z.predicted), (0.0, 0.0));
        assert!(frip_expectation_check(&[1.0], &[3.0, 0.0, 0.0], 10, 0).is_err());
    }

    #[test]
    fn frip_identity_without_sample() {
        let h = sample_c2(48, 9);
        let rep = frip_expectation_check(&[0.0; 8], &h, 2000, 3).unwrap();
        assert!((rep.predicted - rep.c1 * h.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-15);
        assert!(rep.within(3.0), "{rep:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn system_is_consistent_with_truth(n1 in 1usize..5, n2 in 1usize..5, k1 in 1usize..8, k2 in 1usize..8, two_d in any::<bool>(), seed in any::<u64>()) {
            let (n, k) = if two_d { (vec![n1, n2], vec![k1, k2]) } else { (vec![n1 + n2], vec![k1 + k2]) };
            let (y, mask, x, z) = instance(&n, &k, seed);
            let r = autocorrelation_direct(z.values());
            let sys = build_linear_system(&y, &mask, &r).unwrap();
            prop_assert_eq!(sys.shifts.len(), sys.matrix.nrows());
            let resid = &sys.matrix * DVector::from_vec(x) - &sys.rhs;
            let scale = crate::scalar::norm_inf(r.values.as_slice());
            prop_assert!(resid.iter().all(|v| v.abs() <= 1e-9 * scale));
        }

        #[test]
        fn extra_shift_rows_never_lose_rank(n in 2usize..8, k in 1usize..16, seed in any::<u64>()) {
            let (y, mask, _, _) = instance(&[n], &[k], seed);
            let (y2, _, _, _) = instance(&[n], &[k], seed ^ 0x5555);
            let (m, _) = build_matrix(&y, &mask).unwrap();
            let (m2, _) = build_matrix(&y2, &mask).unwrap();
            let mut stacked = DMatrix::zeros(m.nrows() + m2.nrows(), m.ncols());
            stacked.rows_mut(0, m.nrows()).copy_from(&m);
            stacked.rows_mut(m.nrows(), m2.nrows()).copy_from(&m2);
            prop_assert!(numerical_rank(&stacked) >= numerical_rank(&m));
        }

        #[test]
        fn circulant_is_diagonalised_by_the_dft(m in 1usize..=512, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let z = rng.gaussian_vec(m);
            let h = rng.gaussian_vec(m);
            let pair = build_circulant(&z, 0).unwrap();
            let lh = &pair.l * DVector::from_vec(h.clone());
            let shape = Shape::line(m);
            let f = Fourier::new(&shape);
            let zh = f.forward_real(&z, &shape);
            let hh = f.forward_real(&h, &shape);
            let prod: Vec<_> = zh.iter().zip(&hh).map(|(a, b)| a * b).collect();
            let conv = f.inverse_real(prod, &shape);
            let scale = 1.0 + crate::scalar::norm_inf(lh.as_slice());
            for (a, b) in lh.iter().zip(&conv) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn c1_lies_between_bounds(n in 1usize..10, k in 1usize..60, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let h = rng.gaussian_vec(n + k);
            let c1 = c1_coefficient(&h, n, k);
            let lower = k.saturating_sub(n) as f64 / k as f64;
            prop_assert!(c1 >= lower - 1e-12 && c1 <= 1.0 + 1e-12);
        }
    }
}

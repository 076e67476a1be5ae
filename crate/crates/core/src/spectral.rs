//! Discrete Fourier transforms, the intensity forward model and circular
//! autocorrelation.
//!
//! The forward transform is unnormalised, `ẑ[i] = Σ_t z[t]·e^{−2πj·i·t/m}`,
//! and the inverse carries `1/∏m`. Multi-axis transforms are separable.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{CombinedObject, Field, IntensityMeasurements, Shape};

/// Precomputed transform plans for one grid shape.
///
/// Plans are immutable and can be shared between threads; scratch space is
/// allocated per call.
#[derive(Clone)]
pub struct Fourier<T: Real> {
    shape: Shape,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
}

impl<T: Real> std::fmt::Debug for Fourier<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("shape", &self.shape).finish()
    }
}

impl<T: Real> Fourier<T> {
    pub fn new(shape: &Shape) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.extents().iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inverse = shape.extents().iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        Fourier {
            shape: shape.clone(),
            forward,
            inverse,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    fn apply(&self, plans: &[Arc<dyn Fft<T>>], data: &mut [Complex<T>]) {
        assert_eq!(data.len(), self.shape.len(), "buffer does not match plan shape");
        let ext = self.shape.extents();
        match ext.len() {
            1 => plans[0].process(data),
            _ => {
                let (rows, cols) = (ext[0], ext[1]);
                // rustfft transforms every contiguous chunk of the plan length.
                plans[1].process(data);
                let mut column = vec![Complex::new(T::zero(), T::zero()); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        column[c * rows + r] = data[r * cols + c];
                    }
                }
                plans[0].process(&mut column);
                for r in 0..rows {
                    for c in 0..cols {
                        data[r * cols + c] = column[c * rows + r];
                    }
                }
            }
        }
    }

    /// In-place unnormalised forward transform.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        self.apply(&self.forward, data);
    }

    /// In-place inverse transform including the `1/∏m` factor.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        self.apply(&self.inverse, data);
        let scale = T::one() / T::from_usize_lossy(self.shape.len());
        for v in data.iter_mut() {
            *v = v.scale(scale);
        }
    }

    /// Transform of a real array living on `source` (top-left aligned,
    /// zero-padded up to the plan shape).
    pub fn forward_real(&self, z: &[T], source: &Shape) -> Vec<Complex<T>> {
        let mut buf = embed(z, source, &self.shape);
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform, truncated to `target`.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex<T>>, target: &Shape) -> Vec<T> {
        self.inverse(&mut spectrum);
        truncate_real(&spectrum, &self.shape, target)
    }
}

/// Zero-pads a real array from `source` into `target` (top-left aligned).
pub(crate) fn embed<T: Real>(z: &[T], source: &Shape, target: &Shape) -> Vec<Complex<T>> {
    let zero = Complex::new(T::zero(), T::zero());
    if source == target {
        return z.iter().map(|&v| Complex::new(v, T::zero())).collect();
    }
    let mut out = vec![zero; target.len()];
    for (i, &v) in z.iter().enumerate() {
        let p = source.unravel(i);
        out[target.offset(&p[..target.ndim()])] = Complex::new(v, T::zero());
    }
    out
}

pub(crate) fn truncate_real<T: Real>(data: &[Complex<T>], source: &Shape, target: &Shape) -> Vec<T> {
    if source == target {
        return data.iter().map(|c| c.re).collect();
    }
    (0..target.len())
        .map(|i| {
            let p = target.unravel(i);
            data[source.offset(&p[..source.ndim()])].re
        })
        .collect()
}

fn fits_inside(inner: &Shape, outer: &Shape) -> bool {
    inner.ndim() == outer.ndim() && inner.extents().iter().zip(outer.extents()).all(|(a, b)| a <= b)
}

/// Complex spectrum on the measurement grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    pub shape: Shape,
    pub values: Vec<Complex<T>>,
}

/// Circular autocorrelation on the object grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Autocorrelation<T> {
    pub values: Field<T>,
}

/// Unnormalised forward DFT of a real array, zero-padded to `measurement`.
pub fn dft_forward<T: Real>(z: &Field<T>, measurement: &Shape) -> Result<Spectrum<T>> {
    if !fits_inside(z.shape(), measurement) {
        return Err(Error::ShapeMismatch {
            expected: measurement.extents().to_vec(),
            actual: z.shape().extents().to_vec(),
        });
    }
    let plan = Fourier::new(measurement);
    Ok(Spectrum {
        shape: measurement.clone(),
        values: plan.forward_real(z.as_slice(), z.shape()),
    })
}

/// Forward DFT of a complex array of the same shape.
pub fn dft_forward_complex<T: Real>(values: &[Complex<T>], shape: &Shape) -> Result<Spectrum<T>> {
    if values.len() != shape.len() {
        return Err(Error::ShapeMismatch {
            expected: shape.extents().to_vec(),
            actual: vec![values.len()],
        });
    }
    let mut buf = values.to_vec();
    Fourier::new(shape).forward(&mut buf);
    Ok(Spectrum {
        shape: shape.clone(),
        values: buf,
    })
}

/// Inverse DFT with `1/∏m` normalisation.
pub fn dft_inverse<T: Real>(s: &Spectrum<T>) -> Vec<Complex<T>> {
    let mut buf = s.values.clone();
    Fourier::new(&s.shape).inverse(&mut buf);
    buf
}

/// `|DFT(z)|²` on the object grid.
pub fn intensity<T: Real>(z: &CombinedObject<T>) -> IntensityMeasurements<T> {
    intensity_on(z.values(), z.shape()).expect("object grid always fits itself")
}

/// `|DFT(z)|²` on a (possibly larger) measurement grid.
pub fn intensity_on<T: Real>(z: &Field<T>, measurement: &Shape) -> Result<IntensityMeasurements<T>> {
    let s = dft_forward(z, measurement)?;
    let values = s.values.iter().map(|c| c.norm_sqr()).collect();
    Ok(IntensityMeasurements::trusted(
        Field::new(measurement.clone(), values)?,
        true,
    ))
}

/// `R[l] = Σ_p z[p]·z[(p+l) mod m]`, evaluated term by term.
pub fn autocorrelation_direct<T: Real>(z: &Field<T>) -> Autocorrelation<T> {
    let shape = z.shape();
    let data = z.as_slice();
    let ext = shape.extents();
    let values: Vec<T> = (0..shape.len())
        .into_par_iter()
        .map(|l| {
            let lp = shape.unravel(l);
            let shift: Vec<isize> = (0..ext.len()).map(|a| lp[a] as isize).collect();
            let mut acc = T::zero();
            for (p, &v) in data.iter().enumerate() {
                if v != T::zero() {
                    acc += v * data[shape.shifted(p, &shift)];
                }
            }
            acc
        })
        .collect();
    Autocorrelation {
        values: Field::new(shape.clone(), values).expect("same shape"),
    }
}

/// `R = IDFT(I)`; requires a real object's intensities.
pub fn autocorrelation_from_intensity<T: Real>(i: &IntensityMeasurements<T>) -> Result<Autocorrelation<T>> {
    if !i.conj_symmetric() {
        return Err(Error::NotConjugateSymmetric { residue: f64::NAN });
    }
    autocorrelation_from_values(i.values())
}

/// `R = IDFT(I)` for raw (possibly noisy, possibly negative) spectra.
///
/// Fails when the imaginary residue exceeds `1e-9·max|I|`.
pub fn autocorrelation_from_values<T: Real>(values: &Field<T>) -> Result<Autocorrelation<T>> {
    let shape = values.shape();
    let mut buf: Vec<Complex<T>> = values.as_slice().iter().map(|&v| Complex::new(v, T::zero())).collect();
    Fourier::new(shape).inverse(&mut buf);
    let scale = values.as_slice().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let residue = buf.iter().fold(T::zero(), |m, c| m.max(c.im.abs()));
    if residue > T::lit(1e-9) * scale {
        return Err(Error::NotConjugateSymmetric {
            residue: residue.to_f64_lossy(),
        });
    }
    Ok(Autocorrelation {
        values: Field::new(shape.clone(), buf.iter().map(|c| c.re).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::types::{assemble, SupportMask};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line(v: &[f64]) -> Field<f64> {
        Field::new(Shape::line(v.len()), v.to_vec()).unwrap()
    }

    fn re(s: &Spectrum<f64>) -> Vec<f64> {
        s.values.iter().map(|c| c.re).collect()
    }

    #[test]
    fn two_point_transforms() {
        let m = Shape::line(2);
        assert_eq!(re(&dft_forward(&line(&[1.0, 0.0]), &m).unwrap()), vec![1.0, 1.0]);
        assert_eq!(re(&dft_forward(&line(&[1.0, 1.0]), &m).unwrap()), vec![2.0, 0.0]);
        assert_eq!(re(&dft_forward(&line(&[3.0, 1.0]), &m).unwrap()), vec![4.0, 2.0]);
        let s = Spectrum {
            shape: m.clone(),
            values: vec![Complex::new(1.0, 0.0), Complex::new(1.0, 0.0)],
        };
        let back: Vec<f64> = dft_inverse(&s).iter().map(|c| c.re).collect();
        assert_eq!(back, vec![1.0, 0.0]);
        let s = Spectrum {
            shape: m,
            values: vec![Complex::new(2.0, 0.0), Complex::new(0.0, 0.0)],
        };
        let back: Vec<f64> = dft_inverse(&s).iter().map(|c| c.re).collect();
        assert_eq!(back, vec![1.0, 1.0]);
    }

    #[test]
    fn sign_convention_matches_direct_sum() {
        let z = [0.3, -1.2, 2.5, 0.7, -0.4];
        let s = dft_forward(&line(&z), &Shape::line(5)).unwrap();
        for (i, c) in s.values.iter().enumerate() {
            let mut acc = Complex::new(0.0, 0.0);
            for (t, &v) in z.iter().enumerate() {
                let ang = -std::f64::consts::TAU * (i * t) as f64 / 5.0;
                acc += Complex::new(ang.cos(), ang.sin()) * v;
            }
            assert_abs_diff_eq!(c.re, acc.re, epsilon = 1e-12);
            assert_abs_diff_eq!(c.im, acc.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_padding_matches_longer_array() {
        let z = line(&[1.0, 2.0, 3.0]);
        let padded = dft_forward(&z, &Shape::line(5)).unwrap();
        let direct = dft_forward(&line(&[1.0, 2.0, 3.0, 0.0, 0.0]), &Shape::line(5)).unwrap();
        assert_eq!(padded, direct);
        assert!(dft_forward(&z, &Shape::line(2)).is_err());
    }

    #[test]
    fn intensity_examples() {
        let shape = Shape::line(2);
        let mask = SupportMask::block(shape.clone(), &[0], &[1]).unwrap();
        let z = assemble(&[1.0], &Field::zeros(shape.clone()), &mask).unwrap();
        assert_eq!(intensity(&z).values().as_slice(), &[1.0, 1.0]);
        let z = assemble(&[1.0], &line(&[0.0, 1.0]), &mask).unwrap();
        assert_eq!(intensity(&z).values().as_slice(), &[4.0, 0.0]);
        let z = assemble(&[0.0], &Field::zeros(shape), &mask).unwrap();
        assert!(intensity(&z).values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocorrelation_examples() {
        assert_eq!(autocorrelation_direct(&line(&[1.0, 2.0])).values.as_slice(), &[5.0, 4.0]);
        assert_eq!(autocorrelation_direct(&line(&[3.0, 0.0, 0.0])).values.as_slice(), &[9.0, 0.0, 0.0]);
        let i = IntensityMeasurements::new(line(&[9.0, 1.0]), true).unwrap();
        let r = autocorrelation_from_intensity(&i).unwrap();
        assert_eq!(r.values.as_slice(), &[5.0, 4.0]);
        let i = IntensityMeasurements::new(line(&[0.0; 4]), true).unwrap();
        assert!(autocorrelation_from_intensity(&i).unwrap().values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_asymmetric_spectrum() {
        let i = IntensityMeasurements::new(line(&[1.0, 2.0, 3.0]), false).unwrap();
        assert!(autocorrelation_from_intensity(&i).is_err());
        assert!(autocorrelation_from_values(&line(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn round_trip_hundred_arrays() {
        let mut rng = Rng::new(5);
        for t in 0..100 {
            let shape = if t % 2 == 0 { Shape::line(1 + t) } else { Shape::grid(1 + t % 13, 2 + t % 7) };
            let z = Field::new(shape.clone(), rng.gaussian_vec(shape.len())).unwrap();
            let back = dft_inverse(&dft_forward(&z, &shape).unwrap());
            let scale = crate::scalar::norm_inf(z.as_slice());
            for (c, &v) in back.iter().zip(z.as_slice()) {
                assert!((c.re - v).abs() <= 1e-12 * scale.max(1.0));
                assert!(c.im.abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }

    fn random_field(dims: (usize, usize, bool), seed: u64) -> Field<f64> {
        let shape = if dims.2 { Shape::grid(dims.0, dims.1) } else { Shape::line(dims.0) };
        let mut rng = Rng::new(seed);
        Field::new(shape.clone(), rng.gaussian_vec(shape.len())).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wiener_khinchin(m1 in 1usize..=64, m2 in 1usize..=24, two_d in any::<bool>(), seed in any::<u64>()) {
            let z = random_field((m1, m2, two_d), seed);
            let i = intensity_on(&z, z.shape()).unwrap();
            let r = autocorrelation_from_intensity(&i).unwrap();
            let direct = autocorrelation_direct(&z);
            let tol = 1e-9 * crate::scalar::norm2(z.as_slice()).powi(2);
            for (a, b) in r.values.as_slice().iter().zip(direct.values.as_slice()) {
                prop_assert!((a - b).abs() <= tol);
            }
        }

        #[test]
        fn parseval(m1 in 1usize..=64, m2 in 1usize..=64, two_d in any::<bool>(), seed in any::<u64>()) {
            let z = random_field((m1, m2, two_d), seed);
            let s = dft_forward(&z, z.shape()).unwrap();
            let lhs: f64 = s.values.iter().map(|c| c.norm_sqr()).sum();
            let rhs = z.len() as f64 * crate::scalar::norm2(z.as_slice()).powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn real_inverse_of_symmetric_spectrum(m1 in 1usize..=64, m2 in 1usize..=24, two_d in any::<bool>(), seed in any::<u64>()) {
            let z = random_field((m1, m2, two_d), seed);
            let s = dft_forward(&z, z.shape()).unwrap();
            let scale = s.values.iter().fold(0.0f64, |m, c| m.max(c.norm()));
            let back = dft_inverse(&s);
            prop_assert!(back.iter().all(|c| c.im.abs() <= 1e-10 * scale));
        }

        #[test]
        fn autocorrelation_is_circularly_symmetric(m1 in 1usize..=32, m2 in 1usize..=32, two_d in any::<bool>(), seed in any::<u64>()) {
            let z = random_field((m1, m2, two_d), seed);
            let r = autocorrelation_direct(&z);
            let shape = r.values.shape();
            let scale = r.values.as_slice()[0].abs().max(1e-300);
            for l in 0..shape.len() {
                let d = r.values.as_slice()[l] - r.values.as_slice()[shape.mirror(l)];
                prop_assert!(d.abs() <= 1e-9 * scale);
            }
        }
    }
}

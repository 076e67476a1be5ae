//! Projectors onto the Fourier magnitude sets and the background set.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::Fourier;
use crate::types::{Field, IntensityMeasurements, Shape, SupportMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MagnitudeMode {
    /// `|ẑ| = √b`.
    Equality,
    /// `|ẑ| ≤ √b`.
    Ball,
}

/// Sign of the pinned zero-frequency coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcSign {
    Plus,
    Minus,
}

impl DcSign {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            DcSign::Plus => v,
            DcSign::Minus => -v,
        }
    }
}

/// Magnitude constraint on the measurement grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnitudeTarget<T> {
    root: Field<T>,
    mode: MagnitudeMode,
    dc: Option<DcSign>,
}

impl<T: Real> MagnitudeTarget<T> {
    pub fn new(root_intensity: Field<T>, mode: MagnitudeMode, dc: Option<DcSign>) -> Result<Self> {
        if let Some(index) = root_intensity.as_slice().iter().position(|&v| !(v >= T::zero() && v.is_finite())) {
            return Err(Error::NegativeIntensity { index });
        }
        if dc.is_some() && mode != MagnitudeMode::Ball {
            return Err(Error::InvalidConfig("a DC constraint needs the ball mode".into()));
        }
        Ok(MagnitudeTarget {
            root: root_intensity,
            mode,
            dc,
        })
    }

    pub fn equality(b: &IntensityMeasurements<T>) -> Self {
        MagnitudeTarget::new(b.root(), MagnitudeMode::Equality, None).expect("validated intensities")
    }

    pub fn ball(b: &IntensityMeasurements<T>, dc: Option<DcSign>) -> Self {
        MagnitudeTarget::new(b.root(), MagnitudeMode::Ball, dc).expect("validated intensities")
    }

    pub fn root_intensity(&self) -> &Field<T> {
        &self.root
    }

    pub fn mode(&self) -> MagnitudeMode {
        self.mode
    }

    pub fn dc(&self) -> Option<DcSign> {
        self.dc
    }

    /// Replaces the spectrum in place by its projection.
    pub fn project_spectrum(&self, spectrum: &mut [Complex<T>]) {
        let root = self.root.as_slice();
        match self.mode {
            MagnitudeMode::Equality => {
                for (w, &r) in spectrum.iter_mut().zip(root) {
                    let mag = w.norm();
                    *w = if mag > T::zero() {
                        w.scale(r / mag)
                    } else {
                        Complex::new(r, T::zero())
                    };
                }
            }
            MagnitudeMode::Ball => {
                for (w, &r) in spectrum.iter_mut().zip(root) {
                    let mag = w.norm();
                    if mag > r {
                        *w = w.scale(r / mag);
                    }
                }
                if let Some(sign) = self.dc {
                    spectrum[0] = Complex::new(sign.apply(root[0]), T::zero());
                }
            }
        }
    }
}

/// Magnitude projector for real arrays on `object`, measured on the
/// target's (possibly padded) grid.
#[derive(Clone, Debug)]
pub struct MagnitudeProjector<T: Real> {
    fourier: Fourier<T>,
    object: Shape,
    target: MagnitudeTarget<T>,
}

impl<T: Real> MagnitudeProjector<T> {
    pub fn new(object: &Shape, target: MagnitudeTarget<T>) -> Result<Self> {
        let meas = target.root.shape();
        let fits = meas.ndim() == object.ndim()
            && object.extents().iter().zip(meas.extents()).all(|(o, m)| o <= m);
        if !fits {
            return Err(Error::ShapeMismatch {
                expected: meas.extents().to_vec(),
                actual: object.extents().to_vec(),
            });
        }
        Ok(MagnitudeProjector {
            fourier: Fourier::new(meas),
            object: object.clone(),
            target,
        })
    }

    pub fn fourier(&self) -> &Fourier<T> {
        &self.fourier
    }

    pub fn target(&self) -> &MagnitudeTarget<T> {
        &self.target
    }

    pub fn object_shape(&self) -> &Shape {
        &self.object
    }

    pub fn apply(&self, z: &[T]) -> Vec<T> {
        let mut s = self.fourier.forward_real(z, &self.object);
        self.target.project_spectrum(&mut s);
        self.fourier.inverse_real(s, &self.object)
    }
}

fn check_len<T: Real>(z: &Field<T>, target: &MagnitudeTarget<T>) -> Result<MagnitudeProjector<T>> {
    MagnitudeProjector::new(z.shape(), target.clone())
}

/// Equality-mode projection; a zero coefficient takes phase 1.
pub fn project_magnitude<T: Real>(z: &Field<T>, target: &MagnitudeTarget<T>) -> Result<Field<T>> {
    if target.mode != MagnitudeMode::Equality {
        return Err(Error::InvalidConfig("expected an equality-mode target".into()));
    }
    let p = check_len(z, target)?;
    Field::new(z.shape().clone(), p.apply(z.as_slice()))
}

/// Radial projection onto `|ẑ_i| ≤ √b_i`, with the optional DC pin.
pub fn project_magnitude_ball<T: Real>(z: &Field<T>, target: &MagnitudeTarget<T>) -> Result<Field<T>> {
    if target.mode != MagnitudeMode::Ball {
        return Err(Error::InvalidConfig("expected a ball-mode target".into()));
    }
    let p = check_len(z, target)?;
    Field::new(z.shape().clone(), p.apply(z.as_slice()))
}

/// Keeps `z` on Ω and writes `y` elsewhere.
pub fn project_background<T: Real>(z: &[T], y: &[T], mask: &SupportMask) -> Vec<T> {
    debug_assert_eq!(z.len(), y.len());
    z.iter()
        .zip(y)
        .zip(mask.flags())
        .map(|((&zv, &yv), &inside)| if inside { zv } else { yv })
        .collect()
}

/// `2·P(z) − z`.
pub fn reflect<T: Real>(z: &[T], projector: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
    let p = projector(z);
    p.iter().zip(z).map(|(&pv, &zv)| pv + pv - zv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spectral::intensity_on;
    use crate::types::Shape;
    use proptest::prelude::*;

    fn line(v: &[f64]) -> Field<f64> {
        Field::new(Shape::line(v.len()), v.to_vec()).unwrap()
    }

    fn eq_target(root: &[f64]) -> MagnitudeTarget<f64> {
        MagnitudeTarget::new(line(root), MagnitudeMode::Equality, None).unwrap()
    }

    fn ball_target(root: &[f64]) -> MagnitudeTarget<f64> {
        MagnitudeTarget::new(line(root), MagnitudeMode::Ball, None).unwrap()
    }

    #[test]
    fn equality_examples() {
        let out = project_magnitude(&line(&[3.0, 1.0]), &eq_target(&[1.0, 1.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0]);
        let out = project_magnitude(&line(&[0.0, 0.0]), &eq_target(&[2.0, 0.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0]);
        let z = line(&[0.4, -1.3, 2.2, 0.9]);
        let b = intensity_on(&z, z.shape()).unwrap();
        let out = project_magnitude(&z, &MagnitudeTarget::equality(&b)).unwrap();
        for (a, e) in out.as_slice().iter().zip(z.as_slice()) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn ball_examples() {
        let out = project_magnitude_ball(&line(&[3.0, 1.0]), &ball_target(&[1.0, 1.0])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0]);
        let z = line(&[0.5, 0.25]);
        let out = project_magnitude_ball(&z, &ball_target(&[1.0, 1.0])).unwrap();
        assert_eq!(out.as_slice(), z.as_slice());
        let t = MagnitudeTarget::new(line(&[2.0, 1.0]), MagnitudeMode::Ball, Some(DcSign::Minus)).unwrap();
        let out = project_magnitude_ball(&line(&[0.0, 0.0]), &t).unwrap();
        assert_eq!(out.as_slice(), &[-1.0, -1.0]);
        assert!(project_magnitude(&z, &ball_target(&[1.0, 1.0])).is_err());
        assert!(MagnitudeTarget::new(line(&[1.0]), MagnitudeMode::Equality, Some(DcSign::Plus)).is_err());
    }

    #[test]
    fn background_and_reflection_examples() {
        let shape = Shape::line(2);
        let mask = SupportMask::block(shape, &[0], &[1]).unwrap();
        let y = [0.0, 5.0];
        assert_eq!(project_background(&[2.0, 3.0], &y, &mask), vec![2.0, 5.0]);
        assert_eq!(project_background(&[2.0, 5.0], &y, &mask), vec![2.0, 5.0]);
        let pb = |z: &[f64]| project_background(z, &y, &mask);
        assert_eq!(reflect(&[2.0, 3.0], pb), vec![2.0, 7.0]);
        assert_eq!(reflect(&[2.0, 5.0], pb), vec![2.0, 5.0]);
        assert_eq!(reflect(&reflect(&[2.0, 3.0], pb), pb), vec![2.0, 3.0]);
    }

    #[test]
    fn background_projection_is_nearest_point() {
        let mut rng = Rng::new(3);
        let shape = Shape::line(6);
        let mask = SupportMask::block(shape, &[1], &[2]).unwrap();
        for _ in 0..50 {
            let z = rng.gaussian_vec(6);
            let mut y = rng.gaussian_vec(6);
            y[1] = 0.0;
            y[2] = 0.0;
            let p = project_background(&z, &y, &mask);
            let d = crate::scalar::dist2(&p, &z);
            for _ in 0..20 {
                let mut q = p.clone();
                q[1] += rng.gaussian();
                q[2] += rng.gaussian();
                assert!(crate::scalar::dist2(&q, &z) >= d);
            }
        }
    }

    fn random_problem(m1: usize, m2: usize, two_d: bool, seed: u64) -> (Field<f64>, Field<f64>, MagnitudeTarget<f64>) {
        let shape = if two_d { Shape::grid(m1, m2) } else { Shape::line(m1) };
        let mut rng = Rng::new(seed);
        let truth = Field::new(shape.clone(), rng.gaussian_vec(shape.len())).unwrap();
        let z = Field::new(shape.clone(), rng.gaussian_vec(shape.len())).unwrap();
        let b = intensity_on(&truth, &shape).unwrap();
        (truth, z, MagnitudeTarget::equality(&b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn equality_residual(m1 in 1usize..=40, m2 in 1usize..=40, two_d in any::<bool>(), seed in any::<u64>()) {
            let (_, z, target) = random_problem(m1, m2, two_d, seed);
            let p = project_magnitude(&z, &target).unwrap();
            let s = crate::spectral::dft_forward(&p, p.shape()).unwrap();
            let root = target.root_intensity().as_slice();
            let scale = crate::scalar::norm_inf(root);
            for (c, &r) in s.values.iter().zip(root) {
                prop_assert!((c.norm() - r).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn ball_feasible_idempotent_nonexpansive(m1 in 1usize..=40, m2 in 1usize..=40, two_d in any::<bool>(), seed in any::<u64>()) {
            let (_, z, eq) = random_problem(m1, m2, two_d, seed);
            let target = MagnitudeTarget::new(eq.root_intensity().clone(), MagnitudeMode::Ball, None).unwrap();
            let p = project_magnitude_ball(&z, &target).unwrap();
            let s = crate::spectral::dft_forward(&p, p.shape()).unwrap();
            for (c, &r) in s.values.iter().zip(target.root_intensity().as_slice()) {
                prop_assert!(c.norm() <= r + 1e-10);
            }
            let pp = project_magnitude_ball(&p, &target).unwrap();
            prop_assert!(crate::scalar::dist2(pp.as_slice(), p.as_slice()) <= 1e-12 * (1.0 + crate::scalar::norm2(p.as_slice())));
            let w = z.map(|v| 2.0 * v + 0.5);
            let pw = project_magnitude_ball(&w, &target).unwrap();
            prop_assert!(crate::scalar::dist2(pw.as_slice(), p.as_slice()) <= crate::scalar::dist2(w.as_slice(), z.as_slice()) + 1e-10);
        }

        #[test]
        fn background_projection_is_affine(n in 2usize..=30, seed in any::<u64>(), alpha in -2.0f64..2.0) {
            let mut rng = Rng::new(seed);
            let shape = Shape::line(n);
            let mask = SupportMask::block(shape, &[0], &[n / 2]).unwrap();
            let u = rng.gaussian_vec(n);
            let v = rng.gaussian_vec(n);
            let mut y = rng.gaussian_vec(n);
            for &i in mask.indices() { y[i] = 0.0; }
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = project_background(&mix, &y, &mask);
            let pu = project_background(&u, &y, &mask);
            let pv = project_background(&v, &y, &mask);
            for (i, &l) in lhs.iter().enumerate() {
                // The affine image of (pu, pv): Ω entries mix, the rest stay at y.
                let rhs = if mask.contains(i) { alpha * pu[i] + (1.0 - alpha) * pv[i] } else { y[i] };
                prop_assert_eq!(l, rhs);
            }
            prop_assert_eq!(project_background(&pu, &y, &mask), pu);
        }
    }
}

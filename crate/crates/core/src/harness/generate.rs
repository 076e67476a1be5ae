//! Test signals, backgrounds, images and measurement noise.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{Field, IntensityMeasurements, Shape, SupportMask};

/// Which one-dimensional test signal to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    /// i.i.d. standard normal entries.
    #[serde(alias = "type1")]
    Gaussian,
    /// `cos(39.2πt − 12 sin 2πt) + cos(85.4πt + 12 sin 2πt)` at `t = (i+1)/(n+1)`.
    #[serde(alias = "type2")]
    Chirp,
    /// First `n` values of a signal CSV.
    #[serde(alias = "type3")]
    File(PathBuf),
}

impl SignalKind {
    pub fn label(&self) -> &'static str {
        match self {
            SignalKind::Gaussian => "gaussian",
            SignalKind::Chirp => "chirp",
            SignalKind::File(_) => "file",
        }
    }
}

pub fn chirp(n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let t = (i + 1) as f64 / (n + 1) as f64;
            (39.2 * PI * t - 12.0 * (2.0 * PI * t).sin()).cos() + (85.4 * PI * t + 12.0 * (2.0 * PI * t).sin()).cos()
        })
        .collect()
}

pub(crate) fn signal_from(kind: &SignalKind, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidDims("signal length must be positive".into()));
    }
    match kind {
        SignalKind::Gaussian => Ok(rng.gaussian_vec(n)),
        SignalKind::Chirp => Ok(chirp(n)),
        SignalKind::File(path) => {
            let v = crate::io::read_signal_csv(path)?;
            if v.len() < n {
                return Err(Error::InvalidDims(format!("{} holds {} values, {n} requested", path.display(), v.len())));
            }
            Ok(v[..n].to_vec())
        }
    }
}

pub fn gen_signal(kind: &SignalKind, n: usize, seed: u64) -> Result<Vec<f64>> {
    signal_from(kind, n, &mut Rng::new(seed))
}

pub(crate) fn background_from(mask: &SupportMask, mu: f64, sigma: f64, rng: &mut Rng) -> Result<Field<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("background sigma must be positive".into()));
    }
    let shape = mask.shape().clone();
    let values = (0..shape.len())
        .map(|i| {
            let v = rng.normal(mu, sigma);
            if mask.contains(i) {
                0.0
            } else {
                v
            }
        })
        .collect();
    Field::new(shape, values)
}

/// i.i.d. `N(μ, σ²)` off Ω and exact zeros on Ω.
pub fn gen_background(mask: &SupportMask, mu: f64, sigma: f64, seed: u64) -> Result<Field<f64>> {
    background_from(mask, mu, sigma, &mut Rng::new(seed))
}

/// Deterministic test image in `[0, 1]`: a smooth texture with a disc and
/// a bar.
pub fn phantom(rows: usize, cols: usize) -> Field<f64> {
    use std::f64::consts::TAU;
    let mut v = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (u, w) = ((r as f64 + 0.5) / rows as f64, (c as f64 + 0.5) / cols as f64);
            let mut p = 0.45 + 0.2 * (TAU * 3.0 * u).sin() * (TAU * 2.0 * w).cos();
            if (u - 0.35).powi(2) + (w - 0.4).powi(2) < 0.04 {
                p += 0.35;
            }
            if (0.6..0.85).contains(&u) && (0.55..0.9).contains(&w) {
                p -= 0.3;
            }
            v.push(p.clamp(0.0, 1.0));
        }
    }
    Field::new(Shape::grid(rows, cols), v).expect("sized buffer")
}

/// Measurement noise on `√b` plus bounded error in the background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation relative to the normalised spectrum `|DFT z|/∏m`.
    pub sigma: f64,
    /// Half-width `c₂` of the uniform error added to the known background.
    pub background_bias: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, background_bias: f64) -> Result<Self> {
        if !(sigma >= 0.0 && background_bias >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be nonnegative".into()));
        }
        Ok(NoiseSpec { sigma, background_bias })
    }

    pub fn is_clean(&self) -> bool {
        self.sigma == 0.0 && self.background_bias == 0.0
    }
}

/// Draws `ε` with `ε[i]` and `ε[−i]` averaged, so real-object symmetry survives.
pub(crate) fn symmetric_draws(shape: &Shape, rng: &mut Rng, mut draw: impl FnMut(&mut Rng) -> f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..shape.len()).map(|_| draw(rng)).collect();
    (0..shape.len()).map(|i| 0.5 * (raw[i] + raw[shape.mirror(i)])).collect()
}

pub(crate) fn noise_from(b: &IntensityMeasurements<f64>, spec: &NoiseSpec, rng: &mut Rng) -> IntensityMeasurements<f64> {
    if spec.sigma == 0.0 {
        return b.clone();
    }
    let shape = b.shape().clone();
    let scale = spec.sigma * shape.len() as f64;
    let eps = symmetric_draws(&shape, rng, |r| scale * r.gaussian());
    let values = b
        .values()
        .as_slice()
        .iter()
        .zip(&eps)
        .map(|(&v, &e)| {
            let root = (v.sqrt() + e).max(0.0);
            root * root
        })
        .collect();
    let field = Field::new(shape, values).expect("same shape");
    IntensityMeasurements::new(field, b.conj_symmetric()).expect("clamped and mirrored")
}

/// `√b ← max(0, √b + ε)` with `ε ~ N(0, (σ·∏m)²)` mirror-averaged.
pub fn add_noise(b: &IntensityMeasurements<f64>, spec: &NoiseSpec, seed: u64) -> IntensityMeasurements<f64> {
    noise_from(b, spec, &mut Rng::new(seed))
}

/// Background with uniform `[−c₂, c₂]` errors off Ω.
pub(crate) fn bias_background(y: &Field<f64>, mask: &SupportMask, c2: f64, rng: &mut Rng) -> Field<f64> {
    if c2 == 0.0 {
        return y.clone();
    }
    let values = y
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let e = rng.uniform_range(-c2, c2);
            if mask.contains(i) {
                0.0
            } else {
                v + e
            }
        })
        .collect();
    Field::new(y.shape().clone(), values).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::intensity_on;
    use crate::types::Dims;

    #[test]
    fn chirp_matches_formula() {
        use std::f64::consts::PI;
        let v = chirp(4);
        for (i, t) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
            let e = (39.2 * PI * t - 12.0 * (2.0 * PI * t).sin()).cos() + (85.4 * PI * t + 12.0 * (2.0 * PI * t).sin()).cos();
            assert!((v[i] - e).abs() < 1e-12);
        }
        assert!(chirp(500).iter().all(|x| x.abs() <= 2.0));
    }

    #[test]
    fn signals_are_reproducible() {
        assert_eq!(gen_signal(&SignalKind::Gaussian, 50, 3).unwrap(), gen_signal(&SignalKind::Gaussian, 50, 3).unwrap());
        assert_ne!(gen_signal(&SignalKind::Gaussian, 50, 3).unwrap(), gen_signal(&SignalKind::Gaussian, 50, 4).unwrap());
        assert!(gen_signal(&SignalKind::File("/nonexistent/signal.csv".into()), 5, 0).is_err());
        assert!(gen_signal(&SignalKind::Chirp, 0, 0).is_err());
    }

    #[test]
    fn background_moments_and_support() {
        let dims = Dims::unpadded(&[100, 100], &[217, 217]).unwrap();
        let mask = SupportMask::centered(&dims);
        let y = gen_background(&mask, 0.5, 2.0, 9).unwrap();
        assert!(mask.indices().iter().all(|&i| y.as_slice()[i] == 0.0));
        let off: Vec<f64> = (0..y.len()).filter(|&i| !mask.contains(i)).map(|i| y.as_slice()[i]).collect();
        let n = off.len() as f64;
        let mean = off.iter().sum::<f64>() / n;
        let sd = (off.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * 2.0 / n.sqrt());
        assert!((sd - 2.0).abs() < 3.0 * 2.0 / (2.0 * n).sqrt());
        assert_eq!(y, gen_background(&mask, 0.5, 2.0, 9).unwrap());
        assert!(gen_background(&mask, 0.0, 0.0, 9).is_err());
    }

    #[test]
    fn noise_properties() {
        let shape = Shape::line(64);
        let z = Field::new(shape.clone(), Rng::new(1).gaussian_vec(64)).unwrap();
        let b = intensity_on(&z, &shape).unwrap();
        assert_eq!(add_noise(&b, &NoiseSpec::default(), 5), b);
        let spec = NoiseSpec::new(0.01, 0.0).unwrap();
        let noisy = add_noise(&b, &spec, 5);
        assert!(noisy.values().as_slice().iter().all(|&v| v >= 0.0));
        assert!(noisy.conj_symmetric());
        assert!(NoiseSpec::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn symmetrised_noise_variance() {
        let shape = Shape::line(9);
        let mut rng = Rng::new(11);
        let draws = 40_000;
        let mut sq = vec![0.0; 9];
        for _ in 0..draws {
            let e = symmetric_draws(&shape, &mut rng, |r| r.gaussian());
            for (s, v) in sq.iter_mut().zip(e) {
                *s += v * v;
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / draws as f64).collect();
        assert!((var[0] - 1.0).abs() < 0.05);
        for v in &var[1..] {
            assert!((v - 0.5).abs() < 0.03, "{var:?}");
        }
    }

    #[test]
    fn phantom_is_in_unit_range() {
        let p = phantom(64, 64);
        assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let (lo, hi) = p.as_slice().iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo > 0.5);
    }
}

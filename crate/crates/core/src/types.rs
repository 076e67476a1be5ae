//! Shared data model: grids, supports, combined objects, measurements and
//! solver configuration.
//!
//! Every array is stored row-major (last axis fastest). The single ordering
//! function is [`Shape::offset`]; all matrix constructions in
//! [`crate::analysis`] go through it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis extents of a 1-D or 2-D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: &[usize]) -> Result<Self> {
        if extents.is_empty() || extents.len() > 2 {
            return Err(Error::UnsupportedDimension(extents.len()));
        }
        if extents.contains(&0) {
            return Err(Error::InvalidDims(format!("zero extent in {extents:?}")));
        }
        Ok(Shape(extents.to_vec()))
    }

    pub fn line(n: usize) -> Self {
        Shape::new(&[n]).expect("positive 1-D extent")
    }

    pub fn grid(rows: usize, cols: usize) -> Self {
        Shape::new(&[rows, cols]).expect("positive 2-D extents")
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear offset of a multi-index.
    #[inline]
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.0.len());
        index
            .iter()
            .zip(&self.0)
            .fold(0, |acc, (&i, &m)| acc * m + i)
    }

    /// Inverse of [`Shape::offset`]; unused trailing axes are zero.
    #[inline]
    pub fn unravel(&self, mut offset: usize) -> [usize; 2] {
        let mut out = [0usize; 2];
        for axis in (0..self.0.len()).rev() {
            out[axis] = offset % self.0[axis];
            offset /= self.0[axis];
        }
        out
    }

    /// Linear offset of `(p + shift) mod extents`, with `shift` taken per axis.
    #[inline]
    pub fn shifted(&self, offset: usize, shift: &[isize]) -> usize {
        let p = self.unravel(offset);
        let mut acc = 0usize;
        for (axis, &m) in self.0.iter().enumerate() {
            let q = (p[axis] as isize + shift[axis]).rem_euclid(m as isize) as usize;
            acc = acc * m + q;
        }
        acc
    }

    /// Linear offset of the circular mirror `(-p) mod extents`.
    #[inline]
    pub fn mirror(&self, offset: usize) -> usize {
        let p = self.unravel(offset);
        let mut acc = 0usize;
        for (axis, &m) in self.0.iter().enumerate() {
            acc = acc * m + (m - p[axis]) % m;
        }
        acc
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Sample, background and measurement extents per axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    sizes: Vec<usize>,
    background_sizes: Vec<usize>,
    measurement_sizes: Vec<usize>,
}

impl Dims {
    pub fn new(sizes: &[usize], background_sizes: &[usize], measurement_sizes: &[usize]) -> Result<Self> {
        let d = sizes.len();
        if d == 0 || d > 2 {
            return Err(Error::UnsupportedDimension(d));
        }
        if background_sizes.len() != d || measurement_sizes.len() != d {
            return Err(Error::InvalidDims(format!(
                "axis count mismatch: sizes {sizes:?}, background {background_sizes:?}, measurements {measurement_sizes:?}"
            )));
        }
        for axis in 0..d {
            if sizes[axis] == 0 {
                return Err(Error::InvalidDims(format!("sample extent is zero on axis {axis}")));
            }
            if measurement_sizes[axis] < sizes[axis] + background_sizes[axis] {
                return Err(Error::InvalidDims(format!(
                    "measurement extent {} < n + k = {} on axis {axis}",
                    measurement_sizes[axis],
                    sizes[axis] + background_sizes[axis]
                )));
            }
        }
        Ok(Dims {
            sizes: sizes.to_vec(),
            background_sizes: background_sizes.to_vec(),
            measurement_sizes: measurement_sizes.to_vec(),
        })
    }

    /// No oversampling: `m = n + k` on every axis.
    pub fn unpadded(sizes: &[usize], background_sizes: &[usize]) -> Result<Self> {
        if sizes.len() != background_sizes.len() {
            return Err(Error::InvalidDims("axis count mismatch".into()));
        }
        let m: Vec<usize> = sizes.iter().zip(background_sizes).map(|(n, k)| n + k).collect();
        Dims::new(sizes, background_sizes, &m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn background_sizes(&self) -> &[usize] {
        &self.background_sizes
    }

    pub fn measurement_sizes(&self) -> &[usize] {
        &self.measurement_sizes
    }

    pub fn ndim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::new(&self.sizes).expect("validated")
    }

    pub fn object_shape(&self) -> Shape {
        let e: Vec<usize> = self.sizes.iter().zip(&self.background_sizes).map(|(n, k)| n + k).collect();
        Shape::new(&e).expect("validated")
    }

    pub fn measurement_shape(&self) -> Shape {
        Shape::new(&self.measurement_sizes).expect("validated")
    }

    pub fn is_oversampled(&self) -> bool {
        self.object_shape() != self.measurement_shape()
    }
}

/// Support Ω of the unknown sample inside the object grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportMask {
    shape: Shape,
    inside: Vec<bool>,
    indices: Vec<usize>,
}

impl SupportMask {
    pub fn from_flags(shape: Shape, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.len()],
                actual: vec![inside.len()],
            });
        }
        let indices = inside
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect();
        Ok(SupportMask {
            shape,
            inside,
            indices,
        })
    }

    /// Axis-aligned block of extent `extent` whose first corner sits at `offset`.
    pub fn block(shape: Shape, offset: &[usize], extent: &[usize]) -> Result<Self> {
        if offset.len() != shape.ndim() || extent.len() != shape.ndim() {
            return Err(Error::InvalidDims("offset/extent axis count mismatch".into()));
        }
        for axis in 0..shape.ndim() {
            if extent[axis] == 0 || offset[axis] + extent[axis] > shape.extents()[axis] {
                return Err(Error::OffsetOutOfRange {
                    offset: offset.to_vec(),
                    grid: shape.extents().to_vec(),
                });
            }
        }
        let mut inside = vec![false; shape.len()];
        for (i, flag) in inside.iter_mut().enumerate() {
            let p = shape.unravel(i);
            *flag = (0..shape.ndim()).all(|a| p[a] >= offset[a] && p[a] < offset[a] + extent[a]);
        }
        SupportMask::from_flags(shape, inside)
    }

    /// Sample in the leading corner: the 1-D layout `z = [x; y]`.
    pub fn leading(dims: &Dims) -> Self {
        let zeros = vec![0; dims.ndim()];
        SupportMask::block(dims.object_shape(), &zeros, dims.sizes()).expect("validated dims")
    }

    /// Sample centred in the background (offset `k_i / 2` per axis).
    pub fn centered(dims: &Dims) -> Self {
        let offset: Vec<usize> = dims.background_sizes().iter().map(|k| k / 2).collect();
        SupportMask::block(dims.object_shape(), &offset, dims.sizes()).expect("validated dims")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.inside
    }

    /// Support offsets in row-major order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn contains(&self, offset: usize) -> bool {
        self.inside[offset]
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Real array on a 1-D or 2-D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: shape.extents().to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Field { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let data = vec![T::zero(); shape.len()];
        Field { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Field {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Sample embedded in its known background.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedObject<T> {
    values: Field<T>,
    mask: SupportMask,
    background: Field<T>,
}

impl<T: Real> CombinedObject<T> {
    pub fn values(&self) -> &Field<T> {
        &self.values
    }

    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }

    pub fn background(&self) -> &Field<T> {
        &self.background
    }

    pub fn shape(&self) -> &Shape {
        self.values.shape()
    }
}

fn check_background<T: Real>(y: &Field<T>, mask: &SupportMask) -> Result<()> {
    if y.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape().extents().to_vec(),
            actual: y.shape().extents().to_vec(),
        });
    }
    if let Some(&index) = mask.indices().iter().find(|&&i| y.as_slice()[i] != T::zero()) {
        return Err(Error::BackgroundOnSupport { index });
    }
    Ok(())
}

/// Places `x` (row-major over Ω) into the background `y`.
pub fn assemble<T: Real>(x: &[T], y: &Field<T>, mask: &SupportMask) -> Result<CombinedObject<T>> {
    check_background(y, mask)?;
    if x.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mask.len()],
            actual: vec![x.len()],
        });
    }
    let mut values = y.clone();
    for (&idx, &v) in mask.indices().iter().zip(x) {
        values.as_mut_slice()[idx] = v;
    }
    Ok(CombinedObject {
        values,
        mask: mask.clone(),
        background: y.clone(),
    })
}

/// Ω-restricted entries of `z`, row-major.
pub fn extract<T: Real>(z: &CombinedObject<T>) -> Vec<T> {
    gather(z.values.as_slice(), &z.mask)
}

pub(crate) fn gather<T: Copy>(values: &[T], mask: &SupportMask) -> Vec<T> {
    mask.indices().iter().map(|&i| values[i]).collect()
}

/// Nonnegative Fourier intensities on the measurement grid.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityMeasurements<T> {
    values: Field<T>,
    conj_symmetric: bool,
}

impl<T: Real> IntensityMeasurements<T> {
    /// Validates nonnegativity and, when flagged, conjugate symmetry
    /// within `1e-10` relative tolerance.
    pub fn new(values: Field<T>, conj_symmetric: bool) -> Result<Self> {
        if let Some(index) = values.as_slice().iter().position(|&v| !(v >= T::zero())) {
            return Err(Error::NegativeIntensity { index });
        }
        if conj_symmetric {
            let scale = values.as_slice().iter().fold(T::zero(), |m, &v| m.max(v));
            let tol = T::lit(1e-10) * scale;
            let shape = values.shape();
            for (i, &v) in values.as_slice().iter().enumerate() {
                let d = (v - values.as_slice()[shape.mirror(i)]).abs();
                if d > tol {
                    return Err(Error::NotConjugateSymmetric {
                        residue: d.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(IntensityMeasurements {
            values,
            conj_symmetric,
        })
    }

    pub(crate) fn trusted(values: Field<T>, conj_symmetric: bool) -> Self {
        IntensityMeasurements {
            values,
            conj_symmetric,
        }
    }

    pub fn values(&self) -> &Field<T> {
        &self.values
    }

    pub fn shape(&self) -> &Shape {
        self.values.shape()
    }

    pub fn conj_symmetric(&self) -> bool {
        self.conj_symmetric
    }

    /// Elementwise square root `b^{1/2}`.
    pub fn root(&self) -> Field<T> {
        self.values.map(|v| v.sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Pgd,
    Bdr,
    Bdr1,
    Cbdr,
    Hio,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Pgd, Method::Bdr, Method::Bdr1, Method::Cbdr, Method::Hio];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pgd => "PGD",
            Method::Bdr => "BDR",
            Method::Bdr1 => "BDR1",
            Method::Cbdr => "CBDR",
            Method::Hio => "HIO",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Iteration controls shared by all solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    pub method: Method,
    /// Stop once `‖z^p − z^{p−1}‖₂ ≤ eps`.
    pub eps: T,
    pub max_iter: usize,
    /// Relaxation on background coordinates (BDR1, HIO).
    pub beta: T,
    /// PGD learning rate.
    pub lambda: T,
    pub seed: u64,
}

impl<T: Real> SolverConfig<T> {
    pub const DEFAULT_MAX_ITER: usize = 300;

    pub fn new(method: Method) -> Self {
        let beta = match method {
            Method::Bdr1 | Method::Hio => T::lit(0.9),
            _ => T::one(),
        };
        SolverConfig {
            method,
            eps: T::lit(1e-12),
            max_iter: Self::DEFAULT_MAX_ITER,
            beta,
            lambda: T::one(),
            seed: 0,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_eps(mut self, eps: T) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_beta(mut self, beta: T) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_lambda(mut self, lambda: T) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > T::zero()) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.beta > T::zero() && self.beta <= T::one()) {
            return Err(Error::InvalidConfig("beta must lie in (0, 1]".into()));
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry<T> {
    /// `None` when no ground truth was supplied.
    pub relative_error: Option<T>,
    pub measurement_error: T,
    pub step_norm: T,
}

/// Outcome of one solver run.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverRun<T> {
    /// Recovered sample, row-major over Ω.
    pub estimate: Vec<T>,
    /// Last full iterate `z̄` on the object grid.
    pub final_iterate: Field<T>,
    pub iterations_used: usize,
    pub trace: Vec<TraceEntry<T>>,
    pub converged: bool,
}

impl<T: Real> SolverRun<T> {
    pub fn final_measurement_error(&self) -> T {
        self.trace.last().map_or(T::nan(), |t| t.measurement_error)
    }
}

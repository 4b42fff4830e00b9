//! Vector geometry on biometric templates: normalization, cosine similarity,
//! geodesic angle and spherical linear interpolation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM_EPS: f64 = 1e-12;
/// Below this angle SLERP falls back to normalized linear interpolation.
pub const DEGENERATE_ANGLE: f64 = 1e-7;
/// Inputs closer than this to antipodal are rejected.
pub const ANTIPODAL_MARGIN: f64 = 1e-6;

/// A biometric template: a finite real vector of dimension at least 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Template<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> Template<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DimTooSmall(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(Self { values })
    }

    /// Builds a template and scales it to unit norm.
    pub fn unit(values: Vec<T>) -> Result<Self> {
        Self::new(values)?.normalize()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_dims(self, other)?;
        Ok(dot(&self.values, &other.values))
    }

    /// Returns the template scaled to unit Euclidean norm.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n < T::lit(ZERO_NORM_EPS) {
            return Err(Error::ZeroVector);
        }
        Ok(Self {
            values: self.values.iter().map(|&v| v / n).collect(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Template<U> {
        Template {
            values: self
                .values
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Interpolation weight `gamma` in `[0, 1]`; 0 yields the first template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphWeight(f64);

impl MorphWeight {
    pub const MIDPOINT: MorphWeight = MorphWeight(0.5);

    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidWeight(gamma));
        }
        Ok(Self(gamma))
    }

    pub fn gamma(self) -> f64 {
        self.0
    }
}

impl Default for MorphWeight {
    fn default() -> Self {
        Self::MIDPOINT
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn check_dims<T: Scalar>(a: &Template<T>, b: &Template<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// `(a·b) / (|a||b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &Template<T>, b: &Template<T>) -> Result<T> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    let eps = T::lit(ZERO_NORM_EPS);
    if na < eps || nb < eps {
        return Err(Error::ZeroVector);
    }
    let c = dot(&a.values, &b.values) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Geodesic angle in `[0, π]` between the directions of `a` and `b`.
///
/// Evaluated as `2·atan2(|â − b̂|, |â + b̂|)`, which equals `acos(cos_sim)` but
/// keeps full relative precision for nearly parallel or antipodal inputs.
pub fn angle_between<T: Scalar>(a: &Template<T>, b: &Template<T>) -> Result<T> {
    check_dims(a, b)?;
    let ua = a.normalize()?;
    let ub = b.normalize()?;
    Ok(unit_angle(&ua.values, &ub.values))
}

fn unit_angle<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (mut diff, mut sum) = (T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        diff = diff + (x - y) * (x - y);
        sum = sum + (x + y) * (x + y);
    }
    T::lit(2.0) * diff.sqrt().atan2(sum.sqrt())
}

/// Spherical linear interpolation from `a` (gamma = 0) to `b` (gamma = 1).
///
/// Inputs are used as directions; each is normalized before interpolating.
pub fn slerp<T: Scalar>(
    a: &Template<T>,
    b: &Template<T>,
    gamma: MorphWeight,
) -> Result<Template<T>> {
    check_dims(a, b)?;
    let ua = a.normalize()?;
    let ub = b.normalize()?;
    let theta = unit_angle(&ua.values, &ub.values);
    if theta > T::PI() - T::lit(ANTIPODAL_MARGIN) {
        return Err(Error::AntipodalInputs);
    }
    let g = T::lit(gamma.gamma());

    if theta < T::lit(DEGENERATE_ANGLE) {
        let values = ua
            .values
            .iter()
            .zip(&ub.values)
            .map(|(&x, &y)| (T::one() - g) * x + g * y)
            .collect();
        return Template { values }.normalize();
    }

    let s = theta.sin();
    let wa = ((T::one() - g) * theta).sin() / s;
    let wb = (g * theta).sin() / s;
    let values = ua
        .values
        .iter()
        .zip(&ub.values)
        .map(|(&x, &y)| wa * x + wb * y)
        .collect();
    Ok(Template { values })
}

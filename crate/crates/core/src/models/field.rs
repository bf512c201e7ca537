//! Time-varying vector fields `g(x, t)` and their divergence.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use std::ops::{BitOr, BitOrAssign};

/// Per-evaluation annotations carried alongside field values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct EvalFlags(pub u8);

impl EvalFlags {
    pub const NONE: Self = Self(0);
    /// The policy QP was infeasible and the fallback control was used.
    pub const POLICY_FALLBACK: Self = Self(1);
    /// A piecewise-affine policy was evaluated outside every region.
    pub const EXTRAPOLATED: Self = Self(2);
    /// The integrator froze the sample after a step-size underflow.
    pub const FROZEN: Self = Self(4);

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl BitOr for EvalFlags {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        Self(self.0 | rhs.0)
    }
}

impl BitOrAssign for EvalFlags {
    fn bitor_assign(&mut self, rhs: Self) {
        self.0 |= rhs.0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DivergenceMode {
    /// Closed form where the field provides one, finite differences otherwise.
    #[default]
    Analytic,
    FiniteDifference,
}

/// Relative central-difference step for divergence.
pub const DIVERGENCE_STEP: f64 = 1e-5;

/// Closed-loop vector field `g(x, t)`. Implementations must be reentrant:
/// the integrator evaluates them from many threads at once.
pub trait VectorField<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: T, x: &[T], out: &mut [T]) -> Result<EvalFlags>;

    /// Closed-form divergence, if the field has one at `(x, t)`.
    fn analytic_divergence(&self, _t: T, _x: &[T]) -> Option<Result<T>> {
        None
    }

    /// Field value and divergence in one call. The default composes
    /// [`VectorField::eval`] with [`divergence`] in analytic mode; fields that
    /// share work between the two override it.
    fn eval_with_divergence(&self, t: T, x: &[T], out: &mut [T]) -> Result<(T, EvalFlags)> {
        let flags = self.eval(t, x, out)?;
        let div = divergence(self, t, x, DivergenceMode::Analytic)?;
        Ok((div, flags))
    }
}

impl<T: Real, F: VectorField<T> + ?Sized> VectorField<T> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: T, x: &[T], out: &mut [T]) -> Result<EvalFlags> {
        (**self).eval(t, x, out)
    }
    fn analytic_divergence(&self, t: T, x: &[T]) -> Option<Result<T>> {
        (**self).analytic_divergence(t, x)
    }
    fn eval_with_divergence(&self, t: T, x: &[T], out: &mut [T]) -> Result<(T, EvalFlags)> {
        (**self).eval_with_divergence(t, x, out)
    }
}

/// `∇·g(x, t)`.
pub fn divergence<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    t: T,
    x: &[T],
    mode: DivergenceMode,
) -> Result<T> {
    if mode == DivergenceMode::Analytic {
        if let Some(div) = field.analytic_divergence(t, x) {
            return div;
        }
    }
    fd_divergence(field, t, x, T::lit(DIVERGENCE_STEP))
}

/// Central-difference divergence with per-coordinate step
/// `h_k = rel_step · max(1, |x_k|)`.
pub fn fd_divergence<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    t: T,
    x: &[T],
    rel_step: T,
) -> Result<T> {
    let d = field.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "field state",
            expected: d,
            found: x.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut plus = vec![T::zero(); d];
    let mut minus = vec![T::zero(); d];
    let mut div = T::zero();
    for k in 0..d {
        let h = rel_step * x[k].abs().max(T::one());
        probe[k] = x[k] + h;
        field.eval(t, &probe, &mut plus)?;
        probe[k] = x[k] - h;
        field.eval(t, &probe, &mut minus)?;
        probe[k] = x[k];
        div += (plus[k] - minus[k]) / (T::lit(2.0) * h);
    }
    Ok(div)
}

/// `ẋ = A x + b`, divergence `tr A`.
#[derive(Clone, Debug)]
pub struct AffineField<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Real> AffineField<T> {
    pub fn new(a: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "affine field",
                expected: a.rows(),
                found: b.len(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn linear(a: Matrix<T>) -> Self {
        let n = a.rows();
        Self {
            a,
            b: vec![T::zero(); n],
        }
    }
}

impl<T: Real> VectorField<T> for AffineField<T> {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn eval(&self, _t: T, x: &[T], out: &mut [T]) -> Result<EvalFlags> {
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::linalg::dot(self.a.row(i), x) + self.b[i];
        }
        Ok(EvalFlags::NONE)
    }

    fn analytic_divergence(&self, _t: T, _x: &[T]) -> Option<Result<T>> {
        Some(Ok(self.a.trace()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Swirl;
    impl VectorField<f64> for Swirl {
        fn dim(&self) -> usize {
            3
        }
        fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<EvalFlags> {
            out[0] = (x[0] * x[1]).sin() + t;
            out[1] = x[1].powi(3) - x[2] * x[0];
            out[2] = (-x[2] * x[2]).exp() * x[0];
            Ok(EvalFlags::NONE)
        }
    }

    #[test]
    fn affine_trace() {
        let f = AffineField::linear(Matrix::<f64>::from_diag(&[-1.0, -2.0]));
        assert_eq!(
            divergence(&f, 0.0, &[3.0, 4.0], DivergenceMode::Analytic).unwrap(),
            -3.0
        );
        let fd: f64 = divergence(&f, 0.0, &[3.0, 4.0], DivergenceMode::FiniteDifference).unwrap();
        assert!((fd + 3.0).abs() < 1e-9);
    }

    #[test]
    fn fd_divergence_matches_hand_derivative() {
        let x = [0.3f64, -0.7, 0.4];
        let exact = x[1] * (x[0] * x[1]).cos() + 3.0 * x[1] * x[1]
            - 2.0 * x[2] * (-x[2] * x[2]).exp() * x[0];
        let fd = divergence(&Swirl, 0.5, &x, DivergenceMode::Analytic).unwrap();
        assert!((fd - exact).abs() < 1e-9, "{fd} vs {exact}");
    }

    #[test]
    fn flags_combine() {
        let f = EvalFlags::POLICY_FALLBACK | EvalFlags::FROZEN;
        assert!(f.contains(EvalFlags::FROZEN));
        assert!(!f.contains(EvalFlags::EXTRAPOLATED));
        assert!(EvalFlags::NONE.is_empty());
    }
}

//! Vehicle vector fields: the kinematic bicycle, the dynamic bicycle in
//! road-aligned coordinates, and a generic affine plant used for testing
//! and for externally linearized models.

pub mod dynamic;
pub mod field;
pub mod kinematic;

pub use dynamic::{
    dynamic_rhs, max_steer, normal_loads, tire_forces, wheel_rotation, DynamicParams, TireForces,
};
pub use field::{
    divergence, fd_divergence, AffineField, DivergenceMode, EvalFlags, VectorField, DIVERGENCE_STEP,
};
pub use kinematic::{kinematic_rhs, sideslip, KinematicParams};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Open-loop plant `ẋ = f(x, u)`.
#[derive(Clone, Debug)]
pub enum VehicleModel<T> {
    Kinematic(KinematicParams<T>),
    Dynamic(DynamicParams<T>),
    /// `ẋ = A x + B u + c`
    Affine {
        a: Matrix<T>,
        b: Matrix<T>,
        c: Vec<T>,
    },
}

impl<T: Real> VehicleModel<T> {
    pub fn state_dim(&self) -> usize {
        match self {
            VehicleModel::Kinematic(_) => 4,
            VehicleModel::Dynamic(_) => 6,
            VehicleModel::Affine { a, .. } => a.rows(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            VehicleModel::Kinematic(_) => 2,
            VehicleModel::Dynamic(_) => 3,
            VehicleModel::Affine { b, .. } => b.cols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VehicleModel::Kinematic(p) => p.validate(),
            VehicleModel::Dynamic(p) => p.validate(),
            VehicleModel::Affine { a, b, c } => {
                if !a.is_square() || b.rows() != a.rows() || c.len() != a.rows() {
                    return Err(Error::DimensionMismatch {
                        what: "affine plant",
                        expected: a.rows(),
                        found: b.rows(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn rhs(&self, x: &[T], u: &[T], out: &mut [T]) -> Result<()> {
        match self {
            VehicleModel::Kinematic(p) => out.copy_from_slice(&kinematic_rhs(x, u, p)?),
            VehicleModel::Dynamic(p) => out.copy_from_slice(&dynamic_rhs(x, u, p)?),
            VehicleModel::Affine { a, b, c } => {
                if x.len() != a.rows() || u.len() != b.cols() {
                    return Err(Error::DimensionMismatch {
                        what: "affine plant argument",
                        expected: a.rows(),
                        found: x.len(),
                    });
                }
                for i in 0..a.rows() {
                    out[i] =
                        crate::linalg::dot(a.row(i), x) + crate::linalg::dot(b.row(i), u) + c[i];
                }
            }
        }
        Ok(())
    }

    /// Central-difference Jacobians `(∂f/∂x, ∂f/∂u)` with step
    /// `rel_step · max(1, |coordinate|)`. Exact for the affine plant.
    pub fn jacobians(&self, x: &[T], u: &[T], rel_step: T) -> Result<(Matrix<T>, Matrix<T>)> {
        if let VehicleModel::Affine { a, b, .. } = self {
            return Ok((a.clone(), b.clone()));
        }
        let n = self.state_dim();
        let m = self.control_dim();
        let mut jx = Matrix::zeros(n, n);
        let mut ju = Matrix::zeros(n, m);
        let mut plus = vec![T::zero(); n];
        let mut minus = vec![T::zero(); n];
        let mut xp = x.to_vec();
        for k in 0..n {
            let h = rel_step * x[k].abs().max(T::one());
            xp[k] = x[k] + h;
            self.rhs(&xp, u, &mut plus)?;
            xp[k] = x[k] - h;
            self.rhs(&xp, u, &mut minus)?;
            xp[k] = x[k];
            for i in 0..n {
                jx[(i, k)] = (plus[i] - minus[i]) / (T::lit(2.0) * h);
            }
        }
        let mut up = u.to_vec();
        for k in 0..m {
            let h = rel_step * u[k].abs().max(T::one());
            // keep the stencil inside the control box for bounded plants
            let (hi, lo) = self.stencil_in_bounds(k, u[k], h);
            up[k] = u[k] + hi;
            self.rhs(x, &up, &mut plus)?;
            up[k] = u[k] - lo;
            self.rhs(x, &up, &mut minus)?;
            up[k] = u[k];
            for i in 0..n {
                ju[(i, k)] = (plus[i] - minus[i]) / (hi + lo);
            }
        }
        Ok((jx, ju))
    }

    fn stencil_in_bounds(&self, k: usize, uk: T, h: T) -> (T, T) {
        if let VehicleModel::Dynamic(_) = self {
            let bound = if k == 0 { max_steer::<T>() } else { T::one() };
            let hi = h.min(bound - uk);
            let lo = h.min(uk + bound);
            if hi > T::zero() && lo > T::zero() {
                return (hi, lo);
            }
            if hi > T::zero() {
                return (hi, T::zero());
            }
            return (T::zero(), lo);
        }
        (h, h)
    }

    /// `tr ∂f/∂x` at fixed control. Zero for the kinematic bicycle since no
    /// component depends on its own coordinate.
    pub fn state_divergence(&self, x: &[T], u: &[T], rel_step: T) -> Result<T> {
        match self {
            VehicleModel::Kinematic(_) => Ok(T::zero()),
            VehicleModel::Affine { a, .. } => Ok(a.trace()),
            VehicleModel::Dynamic(_) => Ok(self.jacobians(x, u, rel_step)?.0.trace()),
        }
    }
}

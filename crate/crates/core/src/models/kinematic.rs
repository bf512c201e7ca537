//! Kinematic bicycle: state `(x, y, v, ψ)`, control `(a_c, δ)`.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicParams<T> {
    /// Center of mass to front axle [m].
    pub l_front: T,
    /// Center of mass to rear axle [m].
    pub l_rear: T,
}

impl<T: Real> KinematicParams<T> {
    pub fn new(l_front: T, l_rear: T) -> Result<Self> {
        let p = Self { l_front, l_rear };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_front > T::zero()) {
            return Err(Error::invalid("l_front", "must be positive"));
        }
        if !(self.l_rear > T::zero()) {
            return Err(Error::invalid("l_rear", "must be positive"));
        }
        Ok(())
    }
}

/// `β = arctan(ℓ_rear / (ℓ_front + ℓ_rear) · tan δ)`
pub fn sideslip<T: Real>(delta: T, params: &KinematicParams<T>) -> Result<T> {
    if !(delta.abs() < T::FRAC_PI_2()) {
        return Err(Error::SteeringSingular(delta.as_f64()));
    }
    let ratio = params.l_rear / (params.l_front + params.l_rear);
    Ok((ratio * delta.tan()).atan())
}

pub fn kinematic_rhs<T: Real>(x: &[T], u: &[T], params: &KinematicParams<T>) -> Result<[T; 4]> {
    if x.len() != 4 {
        return Err(Error::DimensionMismatch {
            what: "kinematic state",
            expected: 4,
            found: x.len(),
        });
    }
    if u.len() != 2 {
        return Err(Error::DimensionMismatch {
            what: "kinematic control",
            expected: 2,
            found: u.len(),
        });
    }
    let (v, psi) = (x[2], x[3]);
    let (accel, delta) = (u[0], u[1]);
    let beta = sideslip(delta, params)?;
    Ok([
        v * (psi + beta).cos(),
        v * (psi + beta).sin(),
        accel,
        v / params.l_rear * beta.sin(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn p() -> KinematicParams<f64> {
        KinematicParams::new(1.0, 1.5).unwrap()
    }

    #[test]
    fn sideslip_examples() {
        assert_eq!(sideslip(0.0, &p()).unwrap(), 0.0);
        // atan(0.6 * tan 0.1)
        assert!((sideslip(0.1, &p()).unwrap() - 0.060_128_236).abs() < 1e-8);
        assert_eq!(sideslip(-0.3, &p()).unwrap(), -sideslip(0.3, &p()).unwrap());
        assert!(sideslip(FRAC_PI_2, &p()).is_err());
        assert!(sideslip(-2.0, &p()).is_err());
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(
            kinematic_rhs(&[0.0, 0.0, 20.0, 0.0], &[0.0, 0.0], &p()).unwrap(),
            [20.0, 0.0, 0.0, 0.0]
        );
        let r = kinematic_rhs(&[0.0, 0.0, 20.0, FRAC_PI_2], &[1.0, 0.0], &p()).unwrap();
        assert!(r[0].abs() < 1e-14);
        assert_eq!(&r[1..], &[20.0, 1.0, 0.0]);
        let r = kinematic_rhs(&[0.0, 0.0, 10.0, 0.0], &[0.0, 0.1], &p()).unwrap();
        assert!((r[3] - 0.400_613_4).abs() < 1e-6, "{}", r[3]);
    }

    #[test]
    fn generic_over_f32() {
        let p32 = KinematicParams::<f32>::new(1.0, 1.5).unwrap();
        let r = kinematic_rhs(&[0.0f32, 0.0, 10.0, 0.0], &[0.0, 0.1], &p32).unwrap();
        assert!((r[3] - 0.400_613).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_params_and_dims() {
        assert!(KinematicParams::new(0.0, 1.0).is_err());
        assert!(kinematic_rhs(&[0.0; 3], &[0.0; 2], &p()).is_err());
        assert!(kinematic_rhs(&[0.0; 4], &[0.0; 3], &p()).is_err());
    }
}

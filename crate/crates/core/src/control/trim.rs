//! Velocity-hold trim search and Jacobian linearization.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::VehicleModel;
use crate::scalar::Real;

use super::mpc::MpcConfig;

/// Equilibrium of the regulated dynamics: the first five components of the
/// dynamic bicycle vanish while `s` advances freely.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimPoint<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub residual_norm: T,
}

/// Continuous-time pair `(A, B)` of `ẋ = A Δx + B Δu` about a trim.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiPair<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
}

const TRIM_ITERATIONS: usize = 100;
const REGULATED: usize = 5;
/// Free variables: `v_y, v_ψ, e_ψ` then the three controls.
const FREE_STATES: [usize; 3] = [1, 2, 3];

/// Levenberg–Marquardt on the regulated residual over `(v_y, v_ψ, e_ψ, u)`
/// with `v_x` and `e_y` pinned, `s = 0`, and the controls projected onto the
/// configured box after every step.
pub fn find_trim<T: Real>(
    model: &VehicleModel<T>,
    vx_target: T,
    ey_target: T,
    config: &MpcConfig<T>,
) -> Result<TrimPoint<T>> {
    if !matches!(model, VehicleModel::Dynamic(_)) {
        return Err(Error::invalid(
            "trim model",
            "trim search needs the dynamic bicycle",
        ));
    }
    if !(vx_target > T::zero()) {
        return Err(Error::invalid("v_x target", "must be positive"));
    }
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    let mut x = vec![
        vx_target,
        T::zero(),
        T::zero(),
        T::zero(),
        ey_target,
        T::zero(),
    ];
    let mut u = vec![T::zero(); 3];
    project(&mut u, config);
    let mut res = residual(model, &x, &u)?;
    let mut norm = crate::linalg::norm2(&res);
    let mut mu = T::lit(1e-3);

    for _ in 0..TRIM_ITERATIONS {
        if norm <= tol {
            break;
        }
        let (jx, ju) = model.jacobians(&x, &u, T::lit(1e-7))?;
        let mut jac = Matrix::zeros(REGULATED, 6);
        for i in 0..REGULATED {
            for (c, &k) in FREE_STATES.iter().enumerate() {
                jac[(i, c)] = jx[(i, k)];
            }
            for k in 0..3 {
                jac[(i, 3 + k)] = ju[(i, k)];
            }
        }
        let jt = jac.transpose();
        let jtj = jt.matmul(&jac);
        let grad = jt.mul_vec(&res);
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for k in 0..6 {
                damped[(k, k)] += mu * (T::one() + jtj[(k, k)]);
            }
            let step = damped.solve_vec(&grad)?;
            let mut xt = x.clone();
            let mut ut = u.clone();
            for (c, &k) in FREE_STATES.iter().enumerate() {
                xt[k] -= step[c];
            }
            for k in 0..3 {
                ut[k] -= step[3 + k];
            }
            project(&mut ut, config);
            if let Ok(rt) = residual(model, &xt, &ut) {
                let nt = crate::linalg::norm2(&rt);
                if nt < norm {
                    x = xt;
                    u = ut;
                    res = rt;
                    norm = nt;
                    mu = (mu / T::lit(3.0)).max(T::lit(1e-12));
                    improved = true;
                    break;
                }
            }
            mu *= T::lit(4.0);
        }
        if !improved {
            break;
        }
    }
    if !(norm <= T::lit(1e-8).max(tol)) {
        return Err(Error::TrimNotConverged {
            residual: norm.as_f64(),
        });
    }
    Ok(TrimPoint {
        x,
        u,
        residual_norm: norm,
    })
}

fn residual<T: Real>(model: &VehicleModel<T>, x: &[T], u: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); 6];
    model.rhs(x, u, &mut out)?;
    out.truncate(REGULATED);
    Ok(out)
}

fn project<T: Real>(u: &mut [T], config: &MpcConfig<T>) {
    for (k, v) in u.iter_mut().enumerate() {
        *v = v.max(config.u_lo[k]).min(config.u_hi[k]);
    }
}

/// Central-difference Jacobians at the trim, step `1e-6 · max(1, |·|)`.
pub fn linearize<T: Real>(model: &VehicleModel<T>, trim: &TrimPoint<T>) -> Result<LtiPair<T>> {
    let (a, b) = model.jacobians(&trim.x, &trim.u, T::lit(1e-6))?;
    Ok(LtiPair { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DynamicParams;

    fn dynamic() -> VehicleModel<f64> {
        VehicleModel::Dynamic(DynamicParams::default())
    }

    #[test]
    fn straight_road_trims() {
        for ey in [-1.85, 1.85] {
            let cfg = MpcConfig::for_dynamic(ey);
            let trim = find_trim(&dynamic(), 20.0, ey, &cfg).unwrap();
            assert_eq!(trim.x, vec![20.0, 0.0, 0.0, 0.0, ey, 0.0]);
            assert_eq!(trim.u, vec![0.0; 3]);
            assert_eq!(trim.residual_norm, 0.0);
        }
    }

    #[test]
    fn curved_road_trim_converges() {
        let model = VehicleModel::Dynamic(DynamicParams {
            curvature: 0.002,
            ..DynamicParams::default()
        });
        let cfg = MpcConfig::for_dynamic(0.0);
        let trim = find_trim(&model, 20.0, 0.0, &cfg).unwrap();
        assert!(trim.residual_norm <= 1e-8);
        assert_eq!(trim.x[0], 20.0);
        // ė_ψ = 0 ties the yaw rate to the road's turning rate
        let (vx, vy, vpsi, epsi, ey): (f64, f64, f64, f64, f64) =
            (trim.x[0], trim.x[1], trim.x[2], trim.x[3], trim.x[4]);
        let s_dot = (vx * epsi.cos() - vy * epsi.sin()) / (1.0 - 0.002 * ey);
        assert!((vpsi - 0.002 * s_dot).abs() < 1e-9, "{trim:?}");
        for k in 0..3 {
            assert!(trim.u[k] >= cfg.u_lo[k] && trim.u[k] <= cfg.u_hi[k]);
        }
    }

    #[test]
    fn infeasible_trim_is_rejected() {
        // bend tighter than ±10° of steering can hold at 20 m/s
        let model = VehicleModel::Dynamic(DynamicParams {
            curvature: 0.2,
            ..DynamicParams::default()
        });
        let err = find_trim(&model, 20.0, 0.0, &MpcConfig::for_dynamic(0.0)).unwrap_err();
        assert!(matches!(err, Error::TrimNotConverged { .. }), "{err:?}");
    }

    #[test]
    fn linearize_affine_exact() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, -0.3]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let model = VehicleModel::Affine {
            a: a.clone(),
            b: b.clone(),
            c: vec![0.0, 0.0],
        };
        let trim = TrimPoint {
            x: vec![0.3, -0.1],
            u: vec![0.2],
            residual_norm: 0.0,
        };
        let lti = linearize(&model, &trim).unwrap();
        assert!(lti.a.sub(&a).max_abs() <= 1e-8);
        assert!(lti.b.sub(&b).max_abs() <= 1e-8);
    }

    #[test]
    fn arc_length_row_at_trim() {
        let cfg = MpcConfig::for_dynamic(-1.85);
        let trim = find_trim(&dynamic(), 20.0, -1.85, &cfg).unwrap();
        let lti = linearize(&dynamic(), &trim).unwrap();
        // ṡ = (v_x cos e_ψ − v_y sin e_ψ) / (1 − κ e_y)
        assert!((lti.a[(5, 0)] - 1.0).abs() < 1e-9);
        assert!(lti.a[(5, 1)].abs() < 1e-9);
        assert!(lti.a[(5, 3)].abs() < 1e-9);
        // ė_y = v_x sin e_ψ + v_y cos e_ψ
        assert!((lti.a[(4, 3)] - 20.0).abs() < 1e-6);
        assert!((lti.a[(4, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jacobian_richardson() {
        let trim = TrimPoint {
            x: vec![19.0, 0.4, 0.1, 0.02, 0.3, 1.0],
            u: vec![0.05, -0.2, 0.1],
            residual_norm: 0.0,
        };
        let model = dynamic();
        let (a1, b1) = model.jacobians(&trim.x, &trim.u, 1e-6).unwrap();
        let (a2, b2) = model.jacobians(&trim.x, &trim.u, 0.5e-6).unwrap();
        let scale = a1.max_abs().max(b1.max_abs());
        assert!(a1.sub(&a2).max_abs() <= 1e-6 * scale);
        assert!(b1.sub(&b2).max_abs() <= 1e-6 * scale);
    }
}

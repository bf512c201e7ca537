//! Dynamic bicycle in road-aligned coordinates.
//!
//! State `(v_x, v_y, v_ψ, e_ψ, e_y, s)`, control `(δ_front, β_left, β_right)`.
//! Wheels are numbered 1 = front-left, 2 = front-right, 3 = rear-left,
//! 4 = rear-right (array indices 0..4).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Steering bound of ±10 degrees, in radians.
pub fn max_steer<T: Real>() -> T {
    T::lit(10.0).to_radians()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicParams<T> {
    /// CoG to front axle [m].
    pub a: T,
    /// CoG to rear axle [m].
    pub b: T,
    /// Half-track width [m].
    pub c: T,
    /// Vehicle mass [kg].
    pub mass: T,
    /// Yaw moment of inertia [kg m²].
    pub yaw_inertia: T,
    /// Tire cornering stiffness [N/rad].
    pub cornering_stiffness: T,
    /// Tire-road friction coefficient.
    pub friction: T,
    /// Road curvature [1/m].
    pub curvature: T,
    /// Gravitational acceleration [m/s²].
    pub gravity: T,
}

impl<T: Real> Default for DynamicParams<T> {
    /// Mid-size sedan geometry with `C_α = 250 kN/rad`, dry asphalt
    /// (`ζ = 0.9`) and a straight road.
    fn default() -> Self {
        Self {
            a: T::lit(1.432),
            b: T::lit(1.472),
            c: T::lit(0.8125),
            mass: T::lit(2050.0),
            yaw_inertia: T::lit(3344.0),
            cornering_stiffness: T::lit(250_000.0),
            friction: T::lit(0.9),
            curvature: T::zero(),
            gravity: T::lit(9.81),
        }
    }
}

impl<T: Real> DynamicParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("cornering_stiffness", self.cornering_stiffness),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive and finite"));
            }
        }
        if !(self.friction > T::zero() && self.friction <= T::lit(1.5)) {
            return Err(Error::invalid("friction", "must lie in (0, 1.5]"));
        }
        if !self.curvature.is_finite() {
            return Err(Error::invalid("curvature", "must be finite"));
        }
        Ok(())
    }
}

/// Intermediate quantities of the tire-force chain, one entry per wheel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TireForces<T> {
    /// Body-frame longitudinal force [N].
    pub body_x: [T; 4],
    /// Body-frame lateral force [N].
    pub body_y: [T; 4],
    /// Wheel-frame longitudinal force [N].
    pub wheel_x: [T; 4],
    /// Wheel-frame lateral force [N].
    pub wheel_y: [T; 4],
    /// Normal loads [N].
    pub normal: [T; 4],
    /// Slip angles [rad].
    pub slip: [T; 4],
    /// Wheel-frame longitudinal speed [m/s].
    pub v_long: [T; 4],
    /// Wheel-frame lateral speed [m/s].
    pub v_lat: [T; 4],
}

/// Static load split from force and moment balance.
pub fn normal_loads<T: Real>(p: &DynamicParams<T>) -> [T; 4] {
    let half = p.mass * p.gravity / T::lit(2.0);
    let front = half * p.b / (p.a + p.b);
    let rear = half * p.a / (p.a + p.b);
    [front, front, rear, rear]
}

/// `U(δ) = [[cos δ, sin δ], [−sin δ, cos δ]]`
pub fn wheel_rotation<T: Real>(delta: T) -> [[T; 2]; 2] {
    let (s, c) = delta.sin_cos();
    [[c, s], [-s, c]]
}

fn check_controls<T: Real>(u: &[T]) -> Result<()> {
    if u.len() != 3 {
        return Err(Error::DimensionMismatch {
            what: "dynamic control",
            expected: 3,
            found: u.len(),
        });
    }
    let slack = T::lit(1e-12);
    if !(u[0].abs() <= max_steer::<T>() + slack) {
        return Err(Error::ControlOutOfBounds {
            index: 0,
            value: u[0].as_f64(),
        });
    }
    for (index, &beta) in u.iter().enumerate().skip(1) {
        if !(beta.abs() <= T::one() + slack) {
            return Err(Error::ControlOutOfBounds {
                index,
                value: beta.as_f64(),
            });
        }
    }
    Ok(())
}

pub fn tire_forces<T: Real>(x: &[T], u: &[T], p: &DynamicParams<T>) -> Result<TireForces<T>> {
    if x.len() != 6 {
        return Err(Error::DimensionMismatch {
            what: "dynamic state",
            expected: 6,
            found: x.len(),
        });
    }
    check_controls(u)?;
    let (vx, vy, vpsi) = (x[0], x[1], x[2]);
    let delta = u[0];
    let braking = [u[1], u[2], u[1], u[2]];
    let lever_x = [-p.c, p.c, -p.c, p.c];
    let lever_y = [p.a, p.a, -p.b, -p.b];
    let rot = wheel_rotation(delta);
    let normal = normal_loads(p);

    let mut out = TireForces {
        body_x: [T::zero(); 4],
        body_y: [T::zero(); 4],
        wheel_x: [T::zero(); 4],
        wheel_y: [T::zero(); 4],
        normal,
        slip: [T::zero(); 4],
        v_long: [T::zero(); 4],
        v_lat: [T::zero(); 4],
    };
    for i in 0..4 {
        let l = vx + lever_x[i] * vpsi;
        let c = vy + lever_y[i] * vpsi;
        let (vl, vc) = if i < 2 {
            (rot[0][0] * l + rot[0][1] * c, rot[1][0] * l + rot[1][1] * c)
        } else {
            (l, c)
        };
        if vl == T::zero() {
            return Err(Error::SlipUndefined { wheel: i + 1 });
        }
        let tan_alpha = vc / vl;
        let fx = p.friction * braking[i] * normal[i];
        let fy = -p.cornering_stiffness * tan_alpha;
        // front wheels rotate back by Uᵀ(δ)
        let (bx, by) = if i < 2 {
            (
                rot[0][0] * fx + rot[1][0] * fy,
                rot[0][1] * fx + rot[1][1] * fy,
            )
        } else {
            (fx, fy)
        };
        out.v_long[i] = vl;
        out.v_lat[i] = vc;
        out.slip[i] = tan_alpha.atan();
        out.wheel_x[i] = fx;
        out.wheel_y[i] = fy;
        out.body_x[i] = bx;
        out.body_y[i] = by;
    }
    Ok(out)
}

pub fn dynamic_rhs<T: Real>(x: &[T], u: &[T], p: &DynamicParams<T>) -> Result<[T; 6]> {
    let f = tire_forces(x, u, p)?;
    let (vx, vy, vpsi, epsi, ey) = (x[0], x[1], x[2], x[3], x[4]);
    let road = T::one() - p.curvature * ey;
    if !(road > T::lit(1e-12)) {
        return Err(Error::RoadSingularity(road.as_f64()));
    }
    let sum_x: T = f.body_x.iter().copied().sum();
    let sum_y: T = f.body_y.iter().copied().sum();
    // c · Σ (−1)^i F_x,i over wheels i = 1..4
    let moment_x = -f.body_x[0] + f.body_x[1] - f.body_x[2] + f.body_x[3];
    let (se, ce) = epsi.sin_cos();
    let along = vx * ce - vy * se;
    Ok([
        vy * vpsi + sum_x / p.mass,
        -vx * vpsi + sum_y / p.mass,
        (p.a * (f.body_y[0] + f.body_y[1]) - p.b * (f.body_y[2] + f.body_y[3]) + p.c * moment_x)
            / p.yaw_inertia,
        vpsi - p.curvature / road * along,
        vx * se + vy * ce,
        along / road,
    ])
}

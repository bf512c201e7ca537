//! Collision probability between two vehicles' projected clouds.

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::liouville::CloudTrajectory;
use crate::scalar::Real;

use super::support::{support_estimate, SupportKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CollisionMode<T> {
    /// `P_a(O) · P_b(O)` with `O` the intersection of the two supports: both
    /// projected states must lie in the overlap, and the vehicles are
    /// independent.
    SupportProduct { kind: SupportKind, trim_quantile: T },
    /// Fraction of sample pairs whose projected states differ by at most
    /// `len_s` and `len_ey` per axis.
    Footprint { len_s: T, len_ey: T },
}

impl<T: Real> CollisionMode<T> {
    pub fn support_product() -> Self {
        CollisionMode::SupportProduct {
            kind: SupportKind::AxisBox,
            trim_quantile: T::zero(),
        }
    }
}

/// Collision probability at one time over the projected `dims`, in `[0, 1]`.
pub fn collision_probability<T: Real>(
    a: &WeightedCloud<T>,
    b: &WeightedCloud<T>,
    dims: [usize; 2],
    mode: CollisionMode<T>,
) -> Result<T> {
    if a.time() != b.time() {
        return Err(Error::GridMismatch(format!(
            "clouds at t = {} and t = {}",
            a.time().as_f64(),
            b.time().as_f64()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cloud", "must be nonempty"));
    }
    if dims.iter().any(|&k| k >= a.dim() || k >= b.dim()) {
        return Err(Error::invalid("collision dims", "index out of range"));
    }
    match mode {
        CollisionMode::SupportProduct {
            kind,
            trim_quantile,
        } => {
            let sa = support_estimate(a, &dims, kind, trim_quantile)?;
            let sb = support_estimate(b, &dims, kind, trim_quantile)?;
            let overlap = sa.intersect(&sb)?;
            if overlap.is_empty() {
                return Ok(T::zero());
            }
            Ok(overlap.occupancy(a) * overlap.occupancy(b))
        }
        CollisionMode::Footprint { len_s, len_ey } => {
            if !(len_s >= T::zero() && len_ey >= T::zero()) {
                return Err(Error::invalid("footprint", "lengths must be nonnegative"));
            }
            let pa: Vec<[T; 2]> = a
                .states()
                .chunks(a.dim())
                .map(|x| [x[dims[0]], x[dims[1]]])
                .collect();
            let pb: Vec<[T; 2]> = b
                .states()
                .chunks(b.dim())
                .map(|x| [x[dims[0]], x[dims[1]]])
                .collect();
            let mut hits = 0usize;
            for p in &pa {
                for q in &pb {
                    if (p[0] - q[0]).abs() <= len_s && (p[1] - q[1]).abs() <= len_ey {
                        hits += 1;
                    }
                }
            }
            Ok(T::from_usize_lossy(hits)
                / (T::from_usize_lossy(pa.len()) * T::from_usize_lossy(pb.len())))
        }
    }
}

/// `(t, p_collision(t))` at every output time of two trajectories on the
/// same grid.
pub fn collision_curve<T: Real>(
    a: &CloudTrajectory<T>,
    b: &CloudTrajectory<T>,
    dims: [usize; 2],
    mode: CollisionMode<T>,
) -> Result<Vec<(T, T)>> {
    if a.times() != b.times() {
        return Err(Error::GridMismatch(
            "trajectories use different output grids".into(),
        ));
    }
    let probs = par_map(a.clouds.len(), None, |k| {
        collision_probability(&a.clouds[k], &b.clouds[k], dims, mode)
    })?;
    a.times()
        .into_iter()
        .zip(probs)
        .map(|(t, p)| p.map(|p| (t, p)))
        .collect()
}

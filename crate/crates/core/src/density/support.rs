//! Support estimates of projected clouds: axis boxes and convex hulls.

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SupportKind {
    #[default]
    AxisBox,
    Hull,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SupportGeometry<T> {
    Box {
        lo: Vec<T>,
        hi: Vec<T>,
    },
    /// Counter-clockwise vertices; may be empty, a point or a segment.
    Hull {
        vertices: Vec<[T; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportRegion<T> {
    pub dims: Vec<usize>,
    pub geometry: SupportGeometry<T>,
    /// Zero extent in some dim, or zero hull area.
    pub degenerate: bool,
}

impl<T: Real> SupportRegion<T> {
    /// Closed-set membership of a projected point.
    pub fn contains(&self, p: &[T]) -> bool {
        match &self.geometry {
            SupportGeometry::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
            SupportGeometry::Hull { vertices } => polygon_contains(vertices, [p[0], p[1]]),
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.geometry {
            SupportGeometry::Box { lo, hi } => lo.iter().zip(hi).any(|(l, h)| l > h),
            SupportGeometry::Hull { vertices } => vertices.is_empty(),
        }
    }

    fn as_polygon(&self) -> Vec<[T; 2]> {
        match &self.geometry {
            SupportGeometry::Box { lo, hi } => {
                if self.is_empty() {
                    Vec::new()
                } else {
                    vec![
                        [lo[0], lo[1]],
                        [hi[0], lo[1]],
                        [hi[0], hi[1]],
                        [lo[0], hi[1]],
                    ]
                }
            }
            SupportGeometry::Hull { vertices } => vertices.clone(),
        }
    }

    /// `self ∩ other`. Two boxes intersect as a box; anything involving a
    /// hull is clipped as a convex polygon.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::invalid(
                "support dims",
                "regions project onto different dims",
            ));
        }
        match (&self.geometry, &other.geometry) {
            (SupportGeometry::Box { lo: la, hi: ha }, SupportGeometry::Box { lo: lb, hi: hb }) => {
                let lo: Vec<T> = la.iter().zip(lb).map(|(a, b)| a.max(*b)).collect();
                let hi: Vec<T> = ha.iter().zip(hb).map(|(a, b)| a.min(*b)).collect();
                let degenerate = lo.iter().zip(&hi).any(|(l, h)| !(h > l));
                Ok(Self {
                    dims: self.dims.clone(),
                    geometry: SupportGeometry::Box { lo, hi },
                    degenerate,
                })
            }
            _ => {
                if self.dims.len() != 2 {
                    return Err(Error::invalid(
                        "support dims",
                        "hulls need exactly two dims",
                    ));
                }
                let vertices = clip_convex(&self.as_polygon(), &other.as_polygon());
                let degenerate = polygon_area(&vertices) <= T::zero();
                Ok(Self {
                    dims: self.dims.clone(),
                    geometry: SupportGeometry::Hull { vertices },
                    degenerate,
                })
            }
        }
    }

    /// Fraction of `cloud`'s projected samples inside the region.
    pub fn occupancy(&self, cloud: &WeightedCloud<T>) -> T {
        if cloud.is_empty() || self.is_empty() {
            return T::zero();
        }
        let mut p = vec![T::zero(); self.dims.len()];
        let mut inside = 0usize;
        for x in cloud.states().chunks(cloud.dim()) {
            for (j, &k) in self.dims.iter().enumerate() {
                p[j] = x[k];
            }
            if self.contains(&p) {
                inside += 1;
            }
        }
        T::from_usize_lossy(inside) / T::from_usize_lossy(cloud.len())
    }
}

/// Support of `cloud` projected onto `dims`. `trim_quantile = q` drops the
/// `⌊qN⌋` smallest and largest values per dim before taking extremes; for
/// hulls, samples outside the trimmed per-dim ranges are dropped first.
pub fn support_estimate<T: Real>(
    cloud: &WeightedCloud<T>,
    dims: &[usize],
    kind: SupportKind,
    trim_quantile: T,
) -> Result<SupportRegion<T>> {
    if cloud.is_empty() {
        return Err(Error::invalid("cloud", "must be nonempty"));
    }
    if dims.is_empty() || dims.iter().any(|&k| k >= cloud.dim()) {
        return Err(Error::invalid("support dims", "indices out of range"));
    }
    if !(trim_quantile >= T::zero() && trim_quantile < T::lit(0.5)) {
        return Err(Error::invalid("trim_quantile", "must lie in [0, 0.5)"));
    }
    let n = cloud.len();
    let cut = (trim_quantile * T::from_usize_lossy(n)).floor().as_f64() as usize;
    let mut lo = Vec::with_capacity(dims.len());
    let mut hi = Vec::with_capacity(dims.len());
    for &k in dims {
        let mut col = cloud.coordinate(k);
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite cloud"));
        lo.push(col[cut]);
        hi.push(col[n - 1 - cut]);
    }
    let box_degenerate = lo.iter().zip(&hi).any(|(l, h)| !(h > l));
    match kind {
        SupportKind::AxisBox => Ok(SupportRegion {
            dims: dims.to_vec(),
            geometry: SupportGeometry::Box { lo, hi },
            degenerate: box_degenerate,
        }),
        SupportKind::Hull => {
            if dims.len() != 2 {
                return Err(Error::invalid(
                    "support dims",
                    "hulls need exactly two dims",
                ));
            }
            let points: Vec<[T; 2]> = cloud
                .states()
                .chunks(cloud.dim())
                .map(|x| [x[dims[0]], x[dims[1]]])
                .filter(|p| (0..2).all(|j| p[j] >= lo[j] && p[j] <= hi[j]))
                .collect();
            let vertices = convex_hull(points);
            let degenerate = polygon_area(&vertices) <= T::zero();
            Ok(SupportRegion {
                dims: dims.to_vec(),
                geometry: SupportGeometry::Hull { vertices },
                degenerate,
            })
        }
    }
}

fn cross<T: Real>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub fn convex_hull<T: Real>(mut points: Vec<[T; 2]>) -> Vec<[T; 2]> {
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut hull: Vec<[T; 2]> = Vec::with_capacity(2 * points.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[T; 2]>> = if pass == 0 {
            Box::new(points.iter())
        } else {
            Box::new(points.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero()
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn polygon_area<T: Real>(v: &[[T; 2]]) -> T {
    if v.len() < 3 {
        return T::zero();
    }
    let mut a = T::zero();
    for i in 0..v.len() {
        let j = (i + 1) % v.len();
        a += v[i][0] * v[j][1] - v[j][0] * v[i][1];
    }
    T::lit(0.5) * a
}

fn polygon_contains<T: Real>(v: &[[T; 2]], p: [T; 2]) -> bool {
    match v.len() {
        0 => false,
        1 => v[0] == p,
        2 => {
            let scale = T::one().max(p[0].abs()).max(p[1].abs());
            let on_line = cross(v[0], v[1], p).abs() <= T::epsilon() * T::lit(64.0) * scale * scale;
            let within =
                (0..2).all(|j| p[j] >= v[0][j].min(v[1][j]) && p[j] <= v[0][j].max(v[1][j]));
            on_line && within
        }
        n => (0..n).all(|i| {
            let a = v[i];
            let b = v[(i + 1) % n];
            let scale = T::one()
                .max(a[0].abs())
                .max(a[1].abs())
                .max(b[0].abs())
                .max(b[1].abs());
            cross(a, b, p) >= -T::epsilon() * T::lit(64.0) * scale * scale
        }),
    }
}

/// Sutherland–Hodgman clip of convex `subject` by convex `clip`, both
/// counter-clockwise. Degenerate (fewer than three vertex) clip regions
/// yield the empty polygon.
pub fn clip_convex<T: Real>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let c_in = cross(a, b, cur) >= T::zero();
            let p_in = cross(a, b, prev) >= T::zero();
            if c_in {
                if !p_in {
                    out.push(edge_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if p_in {
                out.push(edge_intersection(prev, cur, a, b));
            }
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn edge_intersection<T: Real>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 2]]) -> WeightedCloud<f64> {
        let states = points.iter().flat_map(|p| p.iter().copied()).collect();
        WeightedCloud::new(0.0, 2, states, vec![1.0; points.len()]).unwrap()
    }

    #[test]
    fn corner_box() {
        let c = cloud(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let s = support_estimate(&c, &[0, 1], SupportKind::AxisBox, 0.0).unwrap();
        assert_eq!(
            s.geometry,
            SupportGeometry::Box {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 1.0]
            }
        );
        assert!(!s.degenerate);
    }

    #[test]
    fn trimming_drops_outlier() {
        let mut pts: Vec<[f64; 2]> = (0..99)
            .map(|i| [i as f64 / 98.0, (i % 7) as f64 / 6.0])
            .collect();
        pts.push([50.0, 0.5]);
        let c = cloud(&pts);
        let s = support_estimate(&c, &[0], SupportKind::AxisBox, 0.01).unwrap();
        let SupportGeometry::Box { lo, hi } = s.geometry else {
            panic!()
        };
        assert!(hi[0] <= 1.0 && lo[0] >= 0.0);
        let full = support_estimate(&c, &[0], SupportKind::AxisBox, 0.0).unwrap();
        let SupportGeometry::Box { hi, .. } = full.geometry else {
            panic!()
        };
        assert_eq!(hi[0], 50.0);
    }

    #[test]
    fn hull_of_square_with_interior() {
        let c = cloud(&[
            [0.0, 0.0],
            [1.0, 0.0],
            [0.5, 0.5],
            [1.0, 1.0],
            [0.2, 0.7],
            [0.0, 1.0],
            [0.5, 0.0],
        ]);
        let s = support_estimate(&c, &[0, 1], SupportKind::Hull, 0.0).unwrap();
        let SupportGeometry::Hull { vertices } = &s.geometry else {
            panic!()
        };
        assert_eq!(
            vertices,
            &vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
        );
        assert!(s.contains(&[0.5, 1.0]) && !s.contains(&[1.01, 0.5]));
    }

    #[test]
    fn degenerate_flags() {
        let c = cloud(&[[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]]);
        assert!(
            support_estimate(&c, &[0, 1], SupportKind::AxisBox, 0.0)
                .unwrap()
                .degenerate
        );
        let h = support_estimate(&c, &[0, 1], SupportKind::Hull, 0.0).unwrap();
        assert!(h.degenerate);
        assert!(h.contains(&[1.5, 1.0]));
    }

    #[test]
    fn clip_squares() {
        let a: Vec<[f64; 2]> = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        let b = vec![[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]];
        let c = clip_convex(&a, &b);
        assert!((polygon_area::<f64>(&c) - 1.0).abs() < 1e-15);
        let far = vec![[5.0, 5.0], [6.0, 5.0], [6.0, 6.0]];
        assert!(polygon_area(&clip_convex(&a, &far)) == 0.0);
    }
}

//! Entropic optimal transport: Sinkhorn distances and fixed-support
//! Wasserstein barycenters, all with squared-Euclidean ground cost and
//! log-domain scalings.

mod barycenter;
mod sinkhorn;

pub use barycenter::{
    barycenter, barycentric_trajectory, default_eps, BarycenterResult, BarycenterSpec,
    BarycentricStep, TensorGrid, TrajectoryBarycenterOptions,
};
pub use sinkhorn::{sinkhorn, wasserstein2, wasserstein2_plan, EpsSchedule, TransportPlan};

use std::io::Write;
use std::path::Path;

use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSpec;
use crate::scalar::Real;

/// Atoms in `R^k` with nonnegative masses summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure<T> {
    dim: usize,
    points: Vec<T>,
    masses: Vec<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    /// `points` is row-major `n × dim`; masses must sum to one within
    /// `1e-12`.
    pub fn new(dim: usize, points: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if dim == 0 || masses.is_empty() || points.len() != masses.len() * dim {
            return Err(Error::invalid(
                "measure",
                "need a positive dimension and n × dim points",
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("measure points", "must be finite"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < T::zero()) {
            return Err(Error::invalid(
                "measure masses",
                "must be finite and nonnegative",
            ));
        }
        let total: T = masses.iter().copied().sum();
        if (total - T::one()).abs()
            > T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(masses.len()))
        {
            return Err(Error::invalid(
                "measure masses",
                format!("sum to {} instead of 1", total.as_f64()),
            ));
        }
        Ok(Self {
            dim,
            points,
            masses,
        })
    }

    /// As [`DiscreteMeasure::new`] after dividing the masses by their sum.
    pub fn normalized(dim: usize, points: Vec<T>, masses: Vec<T>) -> Result<Self> {
        let total: T = masses.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::invalid(
                "measure masses",
                "total mass must be positive",
            ));
        }
        Self::new(dim, points, masses.into_iter().map(|m| m / total).collect())
    }

    /// Unit mass at one point.
    pub fn dirac(point: Vec<T>) -> Result<Self> {
        Self::new(point.len(), point, vec![T::one()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for i in 0..self.len() {
            for (k, v) in self.point(i).iter().enumerate() {
                m[k] += self.masses[i] * *v;
            }
        }
        m
    }

    /// `½ Σ |a − b|` against a measure on the same points.
    pub fn total_variation(&self, other: &Self) -> Result<T> {
        if self.points != other.points {
            return Err(Error::GridMismatch(
                "measures live on different supports".into(),
            ));
        }
        Ok(T::lit(0.5)
            * self
                .masses
                .iter()
                .zip(&other.masses)
                .map(|(a, b)| (*a - *b).abs())
                .sum::<T>())
    }

    /// CSV with one `c1,…,ck,mass` row per atom under the given column names.
    pub fn write_csv<W: Write>(&self, mut w: W, columns: &[&str]) -> Result<()> {
        if columns.len() != self.dim {
            return Err(Error::invalid("csv columns", "one name per coordinate"));
        }
        writeln!(w, "{},mass", columns.join(","))?;
        for i in 0..self.len() {
            let mut line = String::new();
            for v in self.point(i) {
                line.push_str(&format!("{:.16e},", v.as_f64()));
            }
            line.push_str(&format!("{:.16e}", self.masses[i].as_f64()));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, columns: &[&str]) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file, columns)
    }
}

/// Cell centers with masses `value · cell volume`, renormalized to one.
pub fn grid_to_measure<T: Real>(grid: &DensityGrid<T>) -> Result<DiscreteMeasure<T>> {
    let n = grid.cell_count();
    let dim = grid.dims.len();
    let mut points = Vec::with_capacity(n * dim);
    let mut masses = Vec::with_capacity(n);
    for c in 0..n {
        points.extend(grid.cell_center(c));
        masses.push(grid.values[c] * grid.cell_volume(c));
    }
    if masses.iter().all(|m| *m == T::zero()) {
        return Err(Error::invalid("density grid", "all cells are zero"));
    }
    DiscreteMeasure::normalized(dim, points, masses)
}

/// Closed-form `W₂` between Gaussians:
/// `√(‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}))`.
pub fn gaussian_w2_oracle<T: Real>(a: &GaussianSpec<T>, b: &GaussianSpec<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "gaussian dimension",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mean2: T = a
        .mean()
        .iter()
        .zip(b.mean())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    let ra = a.covariance().sqrtm_psd();
    let cross = ra.matmul(b.covariance()).matmul(&ra);
    let cross = cross.add(&cross.transpose()).scale(T::lit(0.5)).sqrtm_psd();
    let tr = a.covariance().trace() + b.covariance().trace() - T::lit(2.0) * cross.trace();
    Ok((mean2 + tr.max(T::zero())).sqrt())
}

/// `n` atoms of `measure` by systematic resampling at the fixed quantiles
/// `(k + ½)/n`, row-major `n × dim`. Deterministic; atoms holding less than
/// `1/n` of the mass may be skipped.
pub fn systematic_resample<T: Real>(measure: &DiscreteMeasure<T>, n: usize) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::invalid("resample count", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(n * measure.dim());
    let mut cum = T::zero();
    let mut i = 0;
    let last = measure.len() - 1;
    for k in 0..n {
        let u = (T::from_usize_lossy(k) + T::lit(0.5)) / T::from_usize_lossy(n);
        while i < last && cum + measure.masses()[i] <= u {
            cum += measure.masses()[i];
            i += 1;
        }
        out.extend_from_slice(measure.point(i));
    }
    Ok(out)
}

/// Squared Euclidean distance between two points.
pub(crate) fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// `log Σ exp(v)` over a slice, `-inf` when every entry is `-inf`.
pub(crate) fn lse<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + v.iter().map(|x| (*x - max).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn grid_conversion() {
        let g = DensityGrid::<f64>::new(
            vec![0, 1],
            vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]],
            vec![0.25; 4],
        )
        .unwrap();
        let m = grid_to_measure(&g).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.masses().iter().all(|v| *v == 0.25));
        assert_eq!(m.point(1), &[0.5, 1.5]);

        let hot =
            DensityGrid::<f64>::new(vec![0], vec![vec![0.0, 0.5, 1.0, 1.5]], vec![0.0, 2.0, 0.0])
                .unwrap();
        let m = grid_to_measure(&hot).unwrap();
        assert_eq!(m.masses(), &[0.0, 1.0, 0.0]);
        assert_eq!(m.masses().iter().sum::<f64>(), 1.0);

        let zero = DensityGrid::<f64>::new(vec![0], vec![vec![0.0, 1.0]], vec![0.0]).unwrap();
        assert!(grid_to_measure(&zero).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(2, vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
        let m = DiscreteMeasure::normalized(1, vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(m.masses(), &[0.25, 0.75]);
        assert_eq!(m.mean(), vec![0.75]);
    }

    #[test]
    fn gaussian_oracle_cases() {
        let a = GaussianSpec::<f64>::diagonal(vec![0.0], &[1.0]).unwrap();
        let b = GaussianSpec::<f64>::diagonal(vec![2.0], &[1.0]).unwrap();
        assert!(gaussian_w2_oracle(&a, &a).unwrap().abs() < 1e-7);
        assert!((gaussian_w2_oracle(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let c = GaussianSpec::new(vec![0.0, 0.0], Matrix::identity(2)).unwrap();
        let d = GaussianSpec::new(vec![0.0, 0.0], Matrix::identity(2).scale(4.0)).unwrap();
        assert!((gaussian_w2_oracle(&c, &d).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        // 1D closed form (μ₁ − μ₂)² + (σ₁ − σ₂)²
        let e = GaussianSpec::<f64>::diagonal(vec![1.0], &[0.25]).unwrap();
        let f = GaussianSpec::<f64>::diagonal(vec![-2.0], &[9.0]).unwrap();
        let expected = (9.0f64 + 2.5 * 2.5).sqrt();
        assert!((gaussian_w2_oracle(&e, &f).unwrap() - expected).abs() < 1e-12);
        let bad = GaussianSpec::<f64>::diagonal(vec![1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(gaussian_w2_oracle(&a, &bad).is_err());
    }

    #[test]
    fn resampling_follows_masses() {
        let m =
            DiscreteMeasure::new(1, vec![0.0, 1.0, 2.0, 3.0], vec![0.25, 0.0, 0.5, 0.25]).unwrap();
        assert_eq!(
            systematic_resample(&m, 4).unwrap(),
            vec![0.0, 2.0, 2.0, 3.0]
        );
        assert_eq!(
            systematic_resample(&m, 8).unwrap(),
            vec![0.0, 0.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0]
        );
        let d = DiscreteMeasure::dirac(vec![1.0, -1.0]).unwrap();
        assert_eq!(
            systematic_resample(&d, 2).unwrap(),
            vec![1.0, -1.0, 1.0, -1.0]
        );
        assert!(systematic_resample(&m, 0).is_err());
    }

    #[test]
    fn csv_rows() {
        let m = DiscreteMeasure::new(2, vec![0.0, 1.0, 2.0, -1.0], vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &["s", "e_y"]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,e_y,mass");
        assert_eq!(
            lines[2],
            "2.0000000000000000e0,-1.0000000000000000e0,5.0000000000000000e-1"
        );
    }
}

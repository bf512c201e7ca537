//! Marginal density estimates on regular grids.
//!
//! Samples of a propagated cloud are i.i.d. draws from `ρ(·, t)`, so each
//! contributes mass `1/N`. The stored weights are density values, not
//! masses, and never enter the estimators here.

mod collision;
mod support;

pub use collision::{collision_curve, collision_probability, CollisionMode};
pub use support::{
    clip_convex, convex_hull, support_estimate, SupportGeometry, SupportKind, SupportRegion,
};

use std::io::Write;
use std::path::Path;

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSpec;
use crate::scalar::Real;

/// Default bins per dimension for 1D marginals.
pub const DEFAULT_BINS_1D: usize = 50;
/// Default bins per dimension for 2D marginals.
pub const DEFAULT_BINS_2D: usize = 60;
/// Cells with fewer samples are skipped by [`pointwise_marginal_check`].
pub const CHECK_MIN_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Mass `1/N` per sample divided by the cell volume.
    Histogram,
    /// Gaussian product kernel, Scott's-rule bandwidth per dimension,
    /// averaged over each cell and renormalized. Cell averages keep the
    /// mass when the bandwidth is narrower than a cell.
    Kernel,
}

pub fn default_bins(ndims: usize) -> Vec<usize> {
    if ndims == 1 {
        vec![DEFAULT_BINS_1D]
    } else {
        vec![DEFAULT_BINS_2D; ndims]
    }
}

/// Density on a 1D or 2D tensor grid. `values` is row-major with the first
/// dimension slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid<T> {
    pub dims: Vec<usize>,
    pub edges: Vec<Vec<T>>,
    pub values: Vec<T>,
}

impl<T: Real> DensityGrid<T> {
    pub fn new(dims: Vec<usize>, edges: Vec<Vec<T>>, values: Vec<T>) -> Result<Self> {
        validate_edges(&dims, &edges)?;
        let cells: usize = edges.iter().map(|e| e.len() - 1).product();
        if values.len() != cells {
            return Err(Error::DimensionMismatch {
                what: "grid values",
                expected: cells,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::invalid(
                "grid values",
                "must be finite and nonnegative",
            ));
        }
        Ok(Self {
            dims,
            edges,
            values,
        })
    }

    /// Grid whose values are `f` at the cell centers.
    pub fn from_fn(dims: Vec<usize>, edges: Vec<Vec<T>>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        validate_edges(&dims, &edges)?;
        let shape: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
        let cells: usize = shape.iter().product();
        let mut values = Vec::with_capacity(cells);
        for c in 0..cells {
            values.push(f(&center_of(&edges, &shape, c)));
        }
        Self::new(dims, edges, values)
    }

    /// Uniform edges over `[lo, hi]` with `bins` cells.
    pub fn uniform_edges(lo: T, hi: T, bins: usize) -> Vec<T> {
        let w = (hi - lo) / T::from_usize_lossy(bins);
        let mut e: Vec<T> = (0..=bins)
            .map(|k| lo + T::from_usize_lossy(k) * w)
            .collect();
        e[bins] = hi;
        e
    }

    pub fn shape(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn cell_volume(&self, cell: usize) -> T {
        let idx = unravel(&self.shape(), cell);
        idx.iter()
            .zip(&self.edges)
            .map(|(&k, e)| e[k + 1] - e[k])
            .fold(T::one(), |a, b| a * b)
    }

    pub fn cell_center(&self, cell: usize) -> Vec<T> {
        center_of(&self.edges, &self.shape(), cell)
    }

    /// `Σ values · cell volume`.
    pub fn total_mass(&self) -> T {
        (0..self.values.len())
            .map(|c| self.values[c] * self.cell_volume(c))
            .sum()
    }

    /// Cell holding `x`, closed on the last edge.
    pub fn locate(&self, x: &[T]) -> Option<usize> {
        let shape = self.shape();
        let mut cell = 0;
        for (k, e) in self.edges.iter().enumerate() {
            let i = bin_index(e, x[k])?;
            cell = cell * shape[k] + i;
        }
        Some(cell)
    }

    /// Comment block with the dims and edges, then one `c1[,c2],value` row
    /// per cell. 2D grids put a blank line between rows of the first
    /// coordinate so gnuplot `splot` reads them as a surface.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "# dims: {}", dims.join(","))?;
        for (k, e) in self.edges.iter().enumerate() {
            let e: Vec<String> = e.iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
            writeln!(w, "# edges{}: {}", k + 1, e.join(","))?;
        }
        writeln!(
            w,
            "# {}",
            if self.edges.len() == 1 {
                "c1,value"
            } else {
                "c1,c2,value"
            }
        )?;
        let shape = self.shape();
        for c in 0..self.values.len() {
            if shape.len() == 2 && c > 0 && c % shape[1] == 0 {
                writeln!(w)?;
            }
            let mut line = String::new();
            for v in self.cell_center(c) {
                line.push_str(&format!("{:.16e},", v.as_f64()));
            }
            line.push_str(&format!("{:.16e}", self.values[c].as_f64()));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

fn validate_edges<T: Real>(dims: &[usize], edges: &[Vec<T>]) -> Result<()> {
    if dims.is_empty() || dims.len() > 2 || dims.len() != edges.len() {
        return Err(Error::invalid(
            "grid dims",
            "need one or two dims with matching edges",
        ));
    }
    for e in edges {
        if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) || e.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "grid edges",
                "need at least two finite, strictly increasing edges",
            ));
        }
    }
    Ok(())
}

fn unravel(shape: &[usize], mut cell: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = cell % shape[k];
        cell /= shape[k];
    }
    idx
}

fn center_of<T: Real>(edges: &[Vec<T>], shape: &[usize], cell: usize) -> Vec<T> {
    unravel(shape, cell)
        .iter()
        .zip(edges)
        .map(|(&k, e)| T::lit(0.5) * (e[k] + e[k + 1]))
        .collect()
}

/// Bin of `v` among increasing `edges`; the last bin is closed.
pub(crate) fn bin_index<T: Real>(edges: &[T], v: T) -> Option<usize> {
    let n = edges.len() - 1;
    if !(v >= edges[0]) || !(v <= edges[n]) {
        return None;
    }
    if v == edges[n] {
        return Some(n - 1);
    }
    // first edge strictly greater than v, minus one
    Some(edges.partition_point(|e| *e <= v) - 1)
}

fn check_dims<T: Real>(cloud: &WeightedCloud<T>, dims: &[usize]) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::invalid("cloud", "must be nonempty"));
    }
    if dims.is_empty() || dims.len() > 2 {
        return Err(Error::invalid("marginal dims", "one or two dims"));
    }
    if dims.len() == 2 && dims[0] == dims[1] {
        return Err(Error::invalid("marginal dims", "must be distinct"));
    }
    if let Some(&k) = dims.iter().find(|&&k| k >= cloud.dim()) {
        return Err(Error::invalid(
            "marginal dims",
            format!("index {k} out of range for dimension {}", cloud.dim()),
        ));
    }
    Ok(())
}

/// Standard normal mass of `[a, b]`, via the tail on the far side of zero
/// so narrow intervals in either tail keep their digits.
fn normal_interval(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * r) - libm::erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * r) - libm::erfc(-a * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * r) + libm::erfc(b * r))
    }
}

pub(crate) fn scott_bandwidth<T: Real>(values: &[T], ndims: usize) -> T {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var =
        values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / (n - T::one()).max(T::one());
    var.sqrt() * n.powf(-T::one() / T::from_usize_lossy(ndims + 4))
}

/// Marginal over `dims` on a grid spanning the samples (histogram) or the
/// samples padded by three bandwidths (kernel).
pub fn marginal<T: Real>(
    cloud: &WeightedCloud<T>,
    dims: &[usize],
    estimator: Estimator,
    bins: &[usize],
) -> Result<DensityGrid<T>> {
    check_dims(cloud, dims)?;
    if bins.len() != dims.len() || bins.contains(&0) {
        return Err(Error::invalid("bins", "one positive count per dim"));
    }
    let mut edges = Vec::with_capacity(dims.len());
    for (&k, &b) in dims.iter().zip(bins) {
        let col = cloud.coordinate(k);
        let lo = col.iter().copied().fold(T::infinity(), T::min);
        let hi = col.iter().copied().fold(T::neg_infinity(), T::max);
        if !(hi > lo) {
            return Err(Error::invalid(
                "marginal dims",
                format!("dim {k} has fewer than 2 distinct sample values"),
            ));
        }
        let pad = match estimator {
            Estimator::Histogram => T::zero(),
            Estimator::Kernel => T::lit(3.0) * scott_bandwidth(&col, dims.len()),
        };
        edges.push(DensityGrid::uniform_edges(lo - pad, hi + pad, b));
    }
    marginal_on(cloud, dims, estimator, edges)
}

/// Marginal on caller-supplied edges. Histogram samples outside the grid
/// are dropped, so the total mass is the fraction inside; kernel values are
/// renormalized to unit mass.
pub fn marginal_on<T: Real>(
    cloud: &WeightedCloud<T>,
    dims: &[usize],
    estimator: Estimator,
    edges: Vec<Vec<T>>,
) -> Result<DensityGrid<T>> {
    check_dims(cloud, dims)?;
    validate_edges(dims, &edges)?;
    let n = cloud.len();
    let shape: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
    let cells: usize = shape.iter().product();
    let mut values = vec![T::zero(); cells];
    match estimator {
        Estimator::Histogram => {
            let mass = T::one() / T::from_usize_lossy(n);
            for x in cloud.states().chunks(cloud.dim()) {
                let mut cell = 0;
                let mut inside = true;
                for (j, &k) in dims.iter().enumerate() {
                    match bin_index(&edges[j], x[k]) {
                        Some(i) => cell = cell * shape[j] + i,
                        None => {
                            inside = false;
                            break;
                        }
                    }
                }
                if inside {
                    values[cell] += mass;
                }
            }
            let mut grid = DensityGrid::new(dims.to_vec(), edges, values)?;
            for c in 0..cells {
                let vol = grid.cell_volume(c);
                grid.values[c] /= vol;
            }
            Ok(grid)
        }
        Estimator::Kernel => {
            // separable: per-dim kernel tables, then their product summed
            // over samples
            let mut tables: Vec<Vec<T>> = Vec::with_capacity(dims.len());
            for (j, &k) in dims.iter().enumerate() {
                let col = cloud.coordinate(k);
                let h = scott_bandwidth(&col, dims.len());
                if !(h > T::zero()) {
                    return Err(Error::invalid(
                        "marginal dims",
                        format!("dim {k} has fewer than 2 distinct sample values"),
                    ));
                }
                let mut table = vec![T::zero(); shape[j] * n];
                for c in 0..shape[j] {
                    let (lo, hi) = (edges[j][c], edges[j][c + 1]);
                    let width = hi - lo;
                    for (i, v) in col.iter().enumerate() {
                        let p = normal_interval(((lo - *v) / h).as_f64(), ((hi - *v) / h).as_f64());
                        table[c * n + i] = T::lit(p) / width;
                    }
                }
                tables.push(table);
            }
            for (c, value) in values.iter_mut().enumerate() {
                let idx = unravel(&shape, c);
                let mut acc = T::zero();
                for i in 0..n {
                    let mut p = T::one();
                    for (j, t) in tables.iter().enumerate() {
                        p *= t[idx[j] * n + i];
                    }
                    acc += p;
                }
                *value = acc;
            }
            let mut grid = DensityGrid::new(dims.to_vec(), edges, values)?;
            let total = grid.total_mass();
            if !(total > T::zero()) {
                return Err(Error::Degenerate(
                    "kernel estimate vanishes on the grid".into(),
                ));
            }
            for v in &mut grid.values {
                *v /= total;
            }
            Ok(grid)
        }
    }
}

/// Result of comparing a histogram marginal with a known Gaussian marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalCheck<T> {
    /// Max over cells with at least [`CHECK_MIN_COUNT`] samples of
    /// `|p̂ − p| / p` at the cell center.
    pub max_relative_error: T,
    /// Max over the same cells of `|n_c − N p vol| / sqrt(N p vol)`, the
    /// binomial z-score of the cell count against the analytic density.
    pub max_z_score: T,
    pub cells_checked: usize,
}

/// Compares the histogram marginal of `cloud` over `dims` with the exact
/// marginal of `spec` at the cell centers.
pub fn pointwise_marginal_check<T: Real>(
    cloud: &WeightedCloud<T>,
    dims: &[usize],
    spec: &GaussianSpec<T>,
    bins: &[usize],
) -> Result<MarginalCheck<T>> {
    let grid = marginal(cloud, dims, Estimator::Histogram, bins)?;
    let analytic = spec.marginal(dims)?;
    let n = T::from_usize_lossy(cloud.len());
    let mut counts = Vec::with_capacity(grid.cell_count());
    for c in 0..grid.cell_count() {
        counts.push((grid.values[c] * grid.cell_volume(c) * n).round().as_f64() as usize);
    }
    compare_grid(&grid, &analytic, Some((&counts, cloud.len())))
}

/// Relative error of `grid` against the Gaussian `analytic` at the cell
/// centers. With `counts = Some((per-cell counts, N))` only cells holding
/// at least [`CHECK_MIN_COUNT`] samples are compared and the z-score is
/// reported; otherwise every cell is compared.
pub fn compare_grid<T: Real>(
    grid: &DensityGrid<T>,
    analytic: &GaussianSpec<T>,
    counts: Option<(&[usize], usize)>,
) -> Result<MarginalCheck<T>> {
    let mut worst = T::zero();
    let mut worst_z = T::zero();
    let mut checked = 0;
    for c in 0..grid.cell_count() {
        if let Some((counts, _)) = counts {
            if counts[c] < CHECK_MIN_COUNT {
                continue;
            }
        }
        let p = analytic.pdf(&grid.cell_center(c))?;
        worst = worst.max((grid.values[c] - p).abs() / p);
        if let Some((counts, n)) = counts {
            let expected = T::from_usize_lossy(n) * p * grid.cell_volume(c);
            let z = (T::from_usize_lossy(counts[c]) - expected).abs() / expected.sqrt();
            worst_z = worst_z.max(z);
        }
        checked += 1;
    }
    Ok(MarginalCheck {
        max_relative_error: worst,
        max_z_score: worst_z,
        cells_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_gaussian;
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_cloud(n: usize, lo: [f64; 2], hi: [f64; 2], seed: u64) -> WeightedCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(2 * n);
        for _ in 0..n {
            states.push(rng.random_range(lo[0]..hi[0]));
            states.push(rng.random_range(lo[1]..hi[1]));
        }
        WeightedCloud::new(0.0, 2, states, vec![1.0; n]).unwrap()
    }

    #[test]
    fn gaussian_peak_1d() {
        let spec = GaussianSpec::new(vec![0.0, 0.0], Matrix::identity(2)).unwrap();
        let cloud = sample_gaussian(&spec, 5000, 1).unwrap();
        for est in [Estimator::Histogram, Estimator::Kernel] {
            let g = marginal(&cloud, &[0], est, &default_bins(1)).unwrap();
            let peak = g.values.iter().copied().fold(0.0, f64::max);
            assert!((peak - 0.398_942).abs() <= 0.05, "{est:?} {peak}");
            assert!((g.total_mass() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_square_histogram() {
        let cloud = uniform_cloud(16_000, [0.0, 0.0], [1.0, 1.0], 2);
        let g = marginal(&cloud, &[0, 1], Estimator::Histogram, &[4, 4]).unwrap();
        assert_eq!(g.cell_count(), 16);
        // 1000 expected per cell: 5 binomial standard deviations ≈ 0.15
        for v in &g.values {
            assert!((v - 1.0).abs() < 0.16, "{v}");
        }
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimators_agree_on_large_gaussian() {
        let spec = GaussianSpec::<f64>::diagonal(vec![1.0, -1.0], &[1.0, 0.25]).unwrap();
        let cloud = sample_gaussian(&spec, 10_000, 5).unwrap();
        for d in [0usize, 1] {
            let h = marginal(&cloud, &[d], Estimator::Histogram, &default_bins(1)).unwrap();
            let k = marginal_on(&cloud, &[d], Estimator::Kernel, h.edges.clone()).unwrap();
            let peak = h.values.iter().copied().fold(0.0, f64::max);
            let sup = h
                .values
                .iter()
                .zip(&k.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // sup-norm bound 0.1, scaled to this marginal's peak height
            assert!(sup <= 0.1 * peak / 0.398_942, "dim {d}: {sup}");
        }
    }

    #[test]
    fn narrow_kernel_keeps_cell_masses() {
        // bandwidth ≈ 2e-4 against cells of width 0.25: point evaluation at
        // the centers would see none of the samples
        let spec = GaussianSpec::<f64>::diagonal(vec![0.3], &[1e-6]).unwrap();
        let cloud = sample_gaussian(&spec, 200, 3).unwrap();
        let edges = vec![DensityGrid::uniform_edges(0.0, 1.0, 4)];
        let k = marginal_on(&cloud, &[0], Estimator::Kernel, edges).unwrap();
        assert!((k.values[1] * 0.25 - 1.0).abs() < 1e-12, "{:?}", k.values);
        assert!((normal_interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert!((normal_interval(8.0, 9.0) - 6.219_831_985_865_83e-16).abs() < 1e-28);
    }

    #[test]
    fn rejects_bad_requests() {
        let cloud = WeightedCloud::new(0.0, 2, vec![1.0, 0.0, 1.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(marginal(&cloud, &[0], Estimator::Histogram, &[10]).is_err());
        assert!(marginal(&cloud, &[2], Estimator::Histogram, &[10]).is_err());
        assert!(marginal(&cloud, &[1, 1], Estimator::Histogram, &[10, 10]).is_err());
        assert!(marginal(&cloud, &[1], Estimator::Histogram, &[10]).is_ok());
    }

    #[test]
    fn analytic_identity_check() {
        let spec = GaussianSpec::<f64>::diagonal(vec![0.5, 2.0], &[0.3, 1.2]).unwrap();
        let m = spec.marginal(&[1]).unwrap();
        let grid = DensityGrid::from_fn(
            vec![1],
            vec![DensityGrid::uniform_edges(-2.0, 6.0, 40)],
            |x| m.pdf(x).unwrap(),
        )
        .unwrap();
        let check = compare_grid(&grid, &m, None).unwrap();
        assert_eq!(check.max_relative_error, 0.0);
        assert_eq!(check.cells_checked, 40);
    }

    #[test]
    fn histogram_counts_are_binomial() {
        let spec = GaussianSpec::<f64>::diagonal(vec![0.0, 0.0, 20.0, 0.0], &[1.0, 1.0, 4.0, 0.1])
            .unwrap();
        for n in [1000usize, 4000] {
            let cloud = sample_gaussian(&spec, n, 9).unwrap();
            for d in 0..4 {
                let check = pointwise_marginal_check(&cloud, &[d], &spec, &[20]).unwrap();
                assert!(check.cells_checked > 0);
                // counts against N p vol at the center: binomial noise plus
                // the midpoint-rule bias of a 20-bin grid
                assert!(check.max_z_score < 5.0, "n {n} dim {d}: {check:?}");
            }
        }
    }

    #[test]
    fn locate_and_csv() {
        let g = DensityGrid::<f64>::new(
            vec![0, 1],
            vec![vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0]],
            vec![0.25, 0.25, 0.5, 0.5],
        )
        .unwrap();
        assert_eq!(g.locate(&[1.5, 0.2]), Some(2));
        assert_eq!(g.locate(&[2.0, 1.0]), Some(3));
        assert_eq!(g.locate(&[2.1, 0.0]), None);
        assert!((g.total_mass() - 0.75).abs() < 1e-15);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# dims: 0,1\n# edges1: "));
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[2], "");
        assert_eq!(
            rows[0],
            "5.0000000000000000e-1,2.5000000000000000e-1,2.5000000000000000e-1"
        );
    }
}

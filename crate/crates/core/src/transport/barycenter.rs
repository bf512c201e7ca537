//! Fixed-support entropic barycenters by iterative Bregman projections.
//!
//! With Gibbs kernel `K = exp(−C/ε)` and per-input scalings `u_k, v_k`:
//! `u_k = b_k / (K v_k)`, `p = Π (Kᵀ u_k)^{λ_k}`, `v_k = p / (Kᵀ u_k)`.
//! Everything runs on log scalings. On a tensor grid the squared Euclidean
//! cost splits per axis, so `K` is applied one axis at a time.

use crate::density::{marginal_on, scott_bandwidth, Estimator};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::liouville::CloudTrajectory;
use crate::scalar::Real;

use super::{grid_to_measure, DiscreteMeasure};

/// Points of a tensor-product grid, row-major with the first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid<T> {
    pub axes: Vec<Vec<T>>,
}

impl<T: Real> TensorGrid<T> {
    pub fn new(axes: Vec<Vec<T>>) -> Result<Self> {
        if axes.is_empty()
            || axes
                .iter()
                .any(|a| a.is_empty() || a.windows(2).any(|w| !(w[1] > w[0])))
        {
            return Err(Error::invalid(
                "tensor grid",
                "every axis needs increasing points",
            ));
        }
        Ok(Self { axes })
    }

    /// Cell centers of the given edges.
    pub fn from_edges(edges: &[Vec<T>]) -> Result<Self> {
        Self::new(
            edges
                .iter()
                .map(|e| e.windows(2).map(|w| T::lit(0.5) * (w[0] + w[1])).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Vec<T> {
        let n = self.len();
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for mut c in 0..n {
            let mut idx = vec![0; d];
            for k in (0..d).rev() {
                idx[k] = c % self.axes[k].len();
                c /= self.axes[k].len();
            }
            out.extend(idx.iter().enumerate().map(|(k, &i)| self.axes[k][i]));
        }
        out
    }

    /// Distance between the first and last grid points.
    pub fn diameter(&self) -> T {
        self.axes
            .iter()
            .map(|a| {
                let w = a[a.len() - 1] - a[0];
                w * w
            })
            .sum::<T>()
            .sqrt()
    }
}

/// `1e-2 · diameter²`.
pub fn default_eps<T: Real>(grid: &TensorGrid<T>) -> T {
    let d = grid.diameter();
    T::lit(1e-2) * d * d
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarycenterSpec<T> {
    pub grid: TensorGrid<T>,
    /// Measures whose points are exactly `grid.points()`.
    pub inputs: Vec<DiscreteMeasure<T>>,
    pub lambdas: Vec<T>,
    pub eps: T,
    pub max_iter: usize,
    /// Stop when successive iterates differ by at most this in total
    /// variation.
    pub tol: T,
}

impl<T: Real> BarycenterSpec<T> {
    /// `max_iter = 10 000`, `tol = 1e-5`.
    pub fn new(
        grid: TensorGrid<T>,
        inputs: Vec<DiscreteMeasure<T>>,
        lambdas: Vec<T>,
        eps: T,
    ) -> Self {
        Self {
            grid,
            inputs,
            lambdas,
            eps,
            max_iter: 10_000,
            tol: T::lit(1e-5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.lambdas.len() {
            return Err(Error::invalid(
                "barycenter inputs",
                "need one lambda per input",
            ));
        }
        if self.lambdas.iter().any(|l| !(*l >= T::zero())) {
            return Err(Error::invalid("lambdas", "must be nonnegative"));
        }
        let total: T = self.lambdas.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::invalid(
                "lambdas",
                format!("sum to {} instead of 1", total.as_f64()),
            ));
        }
        if !(self.eps > T::zero()) || !(self.tol > T::zero()) {
            return Err(Error::invalid("barycenter", "eps and tol must be positive"));
        }
        let pts = self.grid.points();
        if self
            .inputs
            .iter()
            .any(|m| m.dim() != self.grid.dim() || m.points() != pts.as_slice())
        {
            return Err(Error::GridMismatch(
                "barycenter inputs must live on the common grid".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarycenterResult<T> {
    pub measure: DiscreteMeasure<T>,
    pub iterations: usize,
    /// Total variation between the last two iterates.
    pub tv_change: T,
    pub converged: bool,
}

/// Per-axis log kernels `−(x_i − x_j)²/ε`.
struct LogKernel<T> {
    axes: Vec<Vec<T>>,
    sizes: Vec<usize>,
}

impl<T: Real> LogKernel<T> {
    fn new(grid: &TensorGrid<T>, eps: T) -> Self {
        let axes = grid
            .axes
            .iter()
            .map(|a| {
                let n = a.len();
                let mut k = vec![T::zero(); n * n];
                for i in 0..n {
                    for j in 0..n {
                        let d = a[i] - a[j];
                        k[i * n + j] = -(d * d) / eps;
                    }
                }
                k
            })
            .collect();
        Self {
            axes,
            sizes: grid.axes.iter().map(|a| a.len()).collect(),
        }
    }

    /// `log (K exp(w))`; `K` is symmetric so this is also `Kᵀ`.
    fn apply(&self, w: &[T]) -> Vec<T> {
        let mut cur = w.to_vec();
        let mut next = vec![T::zero(); w.len()];
        let total = w.len();
        let mut buf = Vec::new();
        for (a, lk) in self.axes.iter().enumerate() {
            let n = self.sizes[a];
            let inner: usize = self.sizes[a + 1..].iter().product();
            let outer = total / (n * inner);
            buf.resize(n, T::zero());
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    for i in 0..n {
                        let mut max = T::neg_infinity();
                        for j in 0..n {
                            let v = lk[i * n + j] + cur[base + j * inner];
                            buf[j] = v;
                            if v > max {
                                max = v;
                            }
                        }
                        next[base + i * inner] = if max == T::neg_infinity() {
                            max
                        } else {
                            max + buf.iter().map(|v| (*v - max).exp()).sum::<T>().ln()
                        };
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Entropic barycenter on the common grid. Inputs with `λ = 0` are dropped;
/// a single remaining input is returned unchanged, since its barycenter is
/// itself. Hitting `max_iter` returns the last iterate with
/// `converged = false`.
pub fn barycenter<T: Real>(spec: &BarycenterSpec<T>) -> Result<BarycenterResult<T>> {
    spec.validate()?;
    let active: Vec<usize> = (0..spec.inputs.len())
        .filter(|&k| spec.lambdas[k] > T::zero())
        .collect();
    if active.len() == 1 {
        return Ok(BarycenterResult {
            measure: spec.inputs[active[0]].clone(),
            iterations: 0,
            tv_change: T::zero(),
            converged: true,
        });
    }
    let n = spec.grid.len();
    let kernel = LogKernel::new(&spec.grid, spec.eps);
    let log_b: Vec<Vec<T>> = active
        .iter()
        .map(|&k| spec.inputs[k].masses().iter().map(|m| m.ln()).collect())
        .collect();
    let lambdas: Vec<T> = active.iter().map(|&k| spec.lambdas[k]).collect();
    let mut log_v: Vec<Vec<T>> = vec![vec![T::zero(); n]; active.len()];
    let mut p_prev: Option<Vec<T>> = None;
    let mut tv = T::infinity();
    for it in 1..=spec.max_iter {
        let mut log_ktu = Vec::with_capacity(active.len());
        for (k, lb) in log_b.iter().enumerate() {
            let kv = kernel.apply(&log_v[k]);
            let log_u: Vec<T> = lb.iter().zip(&kv).map(|(b, kv)| *b - *kv).collect();
            log_ktu.push(kernel.apply(&log_u));
        }
        let mut log_p = vec![T::zero(); n];
        for (k, lk) in log_ktu.iter().enumerate() {
            for (p, v) in log_p.iter_mut().zip(lk) {
                *p += lambdas[k] * *v;
            }
        }
        for (k, lk) in log_ktu.iter().enumerate() {
            for ((v, p), q) in log_v[k].iter_mut().zip(&log_p).zip(lk) {
                *v = *p - *q;
            }
        }
        let shift = log_p.iter().copied().fold(T::neg_infinity(), T::max);
        let raw: Vec<T> = log_p.iter().map(|v| (*v - shift).exp()).collect();
        let total: T = raw.iter().copied().sum();
        let p: Vec<T> = raw.into_iter().map(|v| v / total).collect();
        if let Some(prev) = &p_prev {
            tv = T::lit(0.5) * p.iter().zip(prev).map(|(a, b)| (*a - *b).abs()).sum::<T>();
        }
        if tv <= spec.tol || it == spec.max_iter {
            return Ok(BarycenterResult {
                measure: DiscreteMeasure::new(spec.grid.dim(), spec.grid.points(), p)?,
                iterations: it,
                tv_change: tv,
                converged: tv <= spec.tol,
            });
        }
        p_prev = Some(p);
    }
    Err(Error::invalid("max_iter", "must be at least 1"))
}

/// Barycenter of several trajectories at one output time.
#[derive(Clone, Debug, PartialEq)]
pub struct BarycentricStep<T> {
    pub time: T,
    pub grid: TensorGrid<T>,
    /// Kernel marginals of the inputs on `grid`, in input order.
    pub inputs: Vec<DiscreteMeasure<T>>,
    pub result: BarycenterResult<T>,
}

/// Options for [`barycentric_trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBarycenterOptions<T> {
    pub bins: [usize; 2],
    /// `None` uses [`default_eps`] of each time's grid.
    pub eps: Option<T>,
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Real> Default for TrajectoryBarycenterOptions<T> {
    fn default() -> Self {
        Self {
            bins: [crate::density::DEFAULT_BINS_2D; 2],
            eps: None,
            max_iter: 10_000,
            tol: T::lit(1e-5),
        }
    }
}

/// At every output time: kernel marginals of each trajectory over `dims` on
/// a common grid spanning all inputs (padded by three bandwidths), then
/// their barycenter with weights `lambdas(t)`.
pub fn barycentric_trajectory<T: Real>(
    trajs: &[&CloudTrajectory<T>],
    dims: [usize; 2],
    lambdas: &(dyn Fn(T) -> Vec<T> + Sync),
    options: &TrajectoryBarycenterOptions<T>,
) -> Result<Vec<BarycentricStep<T>>> {
    if trajs.is_empty() {
        return Err(Error::invalid(
            "barycenter inputs",
            "need at least one trajectory",
        ));
    }
    let times = trajs[0].times();
    if trajs.iter().any(|t| t.times() != times) {
        return Err(Error::GridMismatch(
            "trajectories use different output grids".into(),
        ));
    }
    let steps = par_map(times.len(), None, |k| {
        let clouds: Vec<_> = trajs.iter().map(|t| &t.clouds[k]).collect();
        let mut edges = Vec::with_capacity(2);
        for (j, &d) in dims.iter().enumerate() {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            let mut pad = T::zero();
            for c in &clouds {
                if d >= c.dim() {
                    return Err(Error::invalid("barycenter dims", "index out of range"));
                }
                let col = c.coordinate(d);
                lo = col.iter().copied().fold(lo, T::min);
                hi = col.iter().copied().fold(hi, T::max);
                pad = pad.max(T::lit(3.0) * scott_bandwidth(&col, 2));
            }
            if !(hi > lo) {
                return Err(Error::Degenerate(format!(
                    "dim {d} has zero spread at t = {}",
                    times[k].as_f64()
                )));
            }
            edges.push(crate::density::DensityGrid::uniform_edges(
                lo - pad,
                hi + pad,
                options.bins[j],
            ));
        }
        let grid = TensorGrid::from_edges(&edges)?;
        let inputs = clouds
            .iter()
            .map(|c| grid_to_measure(&marginal_on(c, &dims, Estimator::Kernel, edges.clone())?))
            .collect::<Result<Vec<_>>>()?;
        let eps = options.eps.unwrap_or_else(|| default_eps(&grid));
        let mut spec = BarycenterSpec::new(grid.clone(), inputs.clone(), lambdas(times[k]), eps);
        spec.max_iter = options.max_iter;
        spec.tol = options.tol;
        let result = barycenter(&spec)?;
        if !result.converged {
            log::warn!(
                "barycenter at t = {} stopped at TV change {:.3e}",
                times[k].as_f64(),
                result.tv_change.as_f64()
            );
        }
        Ok(BarycentricStep {
            time: times[k],
            grid,
            inputs,
            result,
        })
    })?;
    steps.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::sinkhorn;

    fn line_grid(lo: f64, hi: f64, n: usize) -> TensorGrid<f64> {
        TensorGrid::new(vec![(0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect()])
        .unwrap()
    }

    fn on_grid(grid: &TensorGrid<f64>, f: impl Fn(f64) -> f64) -> DiscreteMeasure<f64> {
        let pts = grid.points();
        let masses = pts.iter().map(|x| f(*x)).collect();
        DiscreteMeasure::normalized(1, pts, masses).unwrap()
    }

    fn gauss(m: f64, var: f64) -> impl Fn(f64) -> f64 {
        move |x| (-(x - m) * (x - m) / (2.0 * var)).exp()
    }

    #[test]
    fn separable_kernel_matches_dense() {
        let grid = TensorGrid::new(vec![vec![0.0, 0.4, 1.0], vec![-1.0, 0.0, 0.5, 2.0]]).unwrap();
        let eps = 0.3;
        let k = LogKernel::new(&grid, eps);
        let w: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let fast = k.apply(&w);
        let pts = grid.points();
        for i in 0..12 {
            let dense: Vec<f64> = (0..12)
                .map(|j| {
                    -super::super::sq_dist(&pts[2 * i..2 * i + 2], &pts[2 * j..2 * j + 2]) / eps
                        + w[j]
                })
                .collect();
            assert!((fast[i] - super::super::lse(&dense)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs() {
        let grid = line_grid(-3.0, 3.0, 121);
        let spacing = 0.05f64;
        let b = on_grid(&grid, gauss(0.3, 0.4));
        let spec = BarycenterSpec::new(
            grid,
            vec![b.clone(), b.clone()],
            vec![0.3, 0.7],
            1e-2 * spacing * spacing,
        );
        let r = barycenter(&spec).unwrap();
        assert!(r.converged);
        assert!(r.measure.total_variation(&b).unwrap() <= 0.05);
    }

    #[test]
    fn diracs_meet_in_the_middle() {
        let grid = line_grid(-1.0, 3.0, 81);
        let pts = grid.points();
        let hot = |x0: f64| {
            on_grid(
                &grid,
                move |x| if (x - x0).abs() < 1e-9 { 1.0 } else { 0.0 },
            )
        };
        let spec =
            BarycenterSpec::new(grid.clone(), vec![hot(0.0), hot(2.0)], vec![0.5, 0.5], 0.01);
        let r = barycenter(&spec).unwrap();
        let mode = (0..pts.len())
            .max_by(|&a, &b| {
                r.measure.masses()[a]
                    .partial_cmp(&r.measure.masses()[b])
                    .unwrap()
            })
            .unwrap();
        assert!((pts[mode] - 1.0).abs() <= 0.05 + 1e-12, "{}", pts[mode]);
    }

    #[test]
    fn gaussian_barycenter() {
        let grid = line_grid(-4.0, 4.0, 321);
        let a = on_grid(&grid, gauss(-1.0, 0.25));
        let b = on_grid(&grid, gauss(1.0, 0.25));
        let spec = BarycenterSpec::new(grid.clone(), vec![a, b], vec![0.5, 0.5], 2e-3);
        let r = barycenter(&spec).unwrap();
        assert!(r.converged);
        assert!(r.measure.mean()[0].abs() <= 0.02);
        let target = on_grid(&grid, gauss(0.0, 0.25));
        assert!(r.measure.total_variation(&target).unwrap() <= 0.08);
    }

    #[test]
    fn single_input_and_order() {
        let grid = line_grid(-2.0, 2.0, 41);
        let a = on_grid(&grid, gauss(-0.5, 0.2));
        let b = on_grid(&grid, gauss(0.7, 0.1));
        let solo = BarycenterSpec::new(
            grid.clone(),
            vec![a.clone(), b.clone()],
            vec![1.0, 0.0],
            0.05,
        );
        assert_eq!(barycenter(&solo).unwrap().measure, a);
        let ab = barycenter(&BarycenterSpec::new(
            grid.clone(),
            vec![a.clone(), b.clone()],
            vec![0.5, 0.5],
            0.05,
        ))
        .unwrap();
        let ba = barycenter(&BarycenterSpec::new(grid, vec![b, a], vec![0.5, 0.5], 0.05)).unwrap();
        for (x, y) in ab.measure.masses().iter().zip(ba.measure.masses()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let grid = line_grid(0.0, 1.0, 5);
        let a = on_grid(&grid, |_| 1.0);
        assert!(barycenter(&BarycenterSpec::new(
            grid.clone(),
            vec![a.clone()],
            vec![0.9],
            0.1
        ))
        .is_err());
        let off =
            DiscreteMeasure::normalized(1, vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![1.0; 5]).unwrap();
        let err = barycenter(&BarycenterSpec::new(
            grid,
            vec![a, off],
            vec![0.5, 0.5],
            0.1,
        ))
        .unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
    }

    /// `Σ λ_i min_P (⟨P, C⟩ + ε Σ P log P)` over couplings of `p` and input `i`.
    fn objective(
        p: &DiscreteMeasure<f64>,
        inputs: &[DiscreteMeasure<f64>],
        lambdas: &[f64],
        eps: f64,
    ) -> f64 {
        inputs
            .iter()
            .zip(lambdas)
            .map(|(b, l)| {
                let plan = sinkhorn(p, b, eps, 200_000, 1e-13).unwrap();
                let mut ent = 0.0;
                for i in 0..plan.plan.rows() {
                    for j in 0..plan.plan.cols() {
                        let v = plan.plan[(i, j)];
                        if v > 0.0 {
                            ent += v * v.ln();
                        }
                    }
                }
                l * (plan.cost + eps * ent)
            })
            .sum()
    }

    #[test]
    fn objective_descends() {
        let grid = line_grid(-2.0, 2.0, 25);
        let a = on_grid(&grid, gauss(-1.0, 0.1));
        let b = on_grid(&grid, gauss(0.8, 0.3));
        let inputs = vec![a, b];
        let lambdas = vec![0.4, 0.6];
        let eps = 0.1;
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let mut spec = BarycenterSpec::new(grid.clone(), inputs.clone(), lambdas.clone(), eps);
            spec.max_iter = k;
            let p = barycenter(&spec).unwrap().measure;
            let f = objective(&p, &inputs, &lambdas, eps);
            assert!(f <= last + 1e-9, "iteration {k}: {f} > {last}");
            last = f;
        }
    }
}

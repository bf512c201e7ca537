//! Two-marginal entropic transport in log domain.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

use super::{lse, sq_dist, DiscreteMeasure};

/// Marginal violations are measured every this many sweeps.
const CHECK_EVERY: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<T> {
    /// `n × m` coupling; rows and columns of zero-mass atoms are zero.
    pub plan: Matrix<T>,
    /// `⟨plan, C⟩` with `C` the squared Euclidean distance.
    pub cost: T,
    pub eps: T,
    /// Max absolute row-sum error; column sums are exact after each sweep.
    pub violation: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Decreasing regularization for distance queries: `start, start·factor, …`
/// down to and ending at `end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule<T> {
    pub start: T,
    pub end: T,
    pub factor: T,
}

impl<T: Real> Default for EpsSchedule<T> {
    fn default() -> Self {
        Self {
            start: T::one(),
            end: T::lit(1e-3),
            factor: T::lit(0.5),
        }
    }
}

impl<T: Real> EpsSchedule<T> {
    pub fn constant(eps: T) -> Self {
        Self {
            start: eps,
            end: eps,
            factor: T::lit(0.5),
        }
    }

    pub fn stages(&self) -> Result<Vec<T>> {
        if !(self.end > T::zero())
            || !(self.start >= self.end)
            || !(self.factor > T::zero() && self.factor < T::one())
        {
            return Err(Error::invalid(
                "eps schedule",
                "need start ≥ end > 0 and factor in (0, 1)",
            ));
        }
        let mut out = Vec::new();
        let mut e = self.start;
        while e > self.end {
            out.push(e);
            e *= self.factor;
        }
        out.push(self.end);
        Ok(out)
    }
}

/// Positive-mass atoms with their cost matrix and potentials.
struct Reduced<T> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    log_a: Vec<T>,
    log_b: Vec<T>,
    cost: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
}

impl<T: Real> Reduced<T> {
    fn new(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch {
                what: "measure dimension",
                expected: mu.dim(),
                found: nu.dim(),
            });
        }
        let rows: Vec<usize> = (0..mu.len())
            .filter(|&i| mu.masses()[i] > T::zero())
            .collect();
        let cols: Vec<usize> = (0..nu.len())
            .filter(|&j| nu.masses()[j] > T::zero())
            .collect();
        let mut cost = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            for &j in &cols {
                cost.push(sq_dist(mu.point(i), nu.point(j)));
            }
        }
        Ok(Self {
            log_a: rows.iter().map(|&i| mu.masses()[i].ln()).collect(),
            log_b: cols.iter().map(|&j| nu.masses()[j].ln()).collect(),
            f: vec![T::zero(); rows.len()],
            g: vec![T::zero(); cols.len()],
            rows,
            cols,
            cost,
        })
    }

    /// Alternating `f` and `g` updates until the row-sum violation is at
    /// most `tol`. Returns `(sweeps, violation)`.
    fn solve(&mut self, eps: T, max_iter: usize, tol: T) -> (usize, T) {
        let (n, m) = (self.rows.len(), self.cols.len());
        let mut buf_m = vec![T::zero(); m];
        let mut buf_n = vec![T::zero(); n];
        let mut violation = T::infinity();
        for it in 1..=max_iter {
            for i in 0..n {
                for j in 0..m {
                    buf_m[j] = (self.g[j] - self.cost[i * m + j]) / eps;
                }
                self.f[i] = eps * (self.log_a[i] - lse(&buf_m));
            }
            for j in 0..m {
                for i in 0..n {
                    buf_n[i] = (self.f[i] - self.cost[i * m + j]) / eps;
                }
                self.g[j] = eps * (self.log_b[j] - lse(&buf_n));
            }
            if it % CHECK_EVERY == 0 || it == max_iter {
                violation = self.row_violation(eps);
                if violation <= tol {
                    return (it, violation);
                }
            }
        }
        (max_iter, violation)
    }

    fn row_violation(&self, eps: T) -> T {
        let m = self.cols.len();
        let mut worst = T::zero();
        for i in 0..self.rows.len() {
            let row: T = (0..m)
                .map(|j| ((self.f[i] + self.g[j] - self.cost[i * m + j]) / eps).exp())
                .sum();
            worst = worst.max((row - self.log_a[i].exp()).abs());
        }
        worst
    }

    fn plan(
        &self,
        n_full: usize,
        m_full: usize,
        eps: T,
        iterations: usize,
        violation: T,
        tol: T,
    ) -> TransportPlan<T> {
        let m = self.cols.len();
        let mut plan = Matrix::zeros(n_full, m_full);
        let mut cost = T::zero();
        for (ri, &i) in self.rows.iter().enumerate() {
            for (cj, &j) in self.cols.iter().enumerate() {
                let c = self.cost[ri * m + cj];
                let p = ((self.f[ri] + self.g[cj] - c) / eps).exp();
                plan[(i, j)] = p;
                cost += p * c;
            }
        }
        TransportPlan {
            plan,
            cost,
            eps,
            violation,
            iterations,
            converged: violation <= tol,
        }
    }
}

/// Log-domain Sinkhorn with Gibbs kernel `exp(−C/ε)`. Hitting `max_iter`
/// is not an error; the plan reports its violation and `converged = false`.
pub fn sinkhorn<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    eps: T,
    max_iter: usize,
    tol: T,
) -> Result<TransportPlan<T>> {
    if !(eps > T::zero()) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    let mut red = Reduced::new(mu, nu)?;
    let (it, viol) = red.solve(eps, max_iter, tol);
    Ok(red.plan(mu.len(), nu.len(), eps, it, viol, tol))
}

/// Plan at the last stage of `schedule`, each stage warm-started from the
/// previous potentials.
pub fn wasserstein2_plan<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    schedule: &EpsSchedule<T>,
    max_iter: usize,
    tol: T,
) -> Result<TransportPlan<T>> {
    let stages = schedule.stages()?;
    let mut red = Reduced::new(mu, nu)?;
    let mut total = 0;
    let mut viol = T::infinity();
    for &eps in &stages {
        let (it, v) = red.solve(eps, max_iter, tol);
        total += it;
        viol = v;
    }
    let eps = *stages.last().expect("schedule has a stage");
    if viol > tol {
        log::warn!(
            "sinkhorn stopped at violation {:.3e} after {total} sweeps",
            viol.as_f64()
        );
    }
    Ok(red.plan(mu.len(), nu.len(), eps, total, viol, tol))
}

/// `√⟨℘, C⟩` at the final regularization of `schedule`.
pub fn wasserstein2<T: Real>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
    schedule: &EpsSchedule<T>,
    max_iter: usize,
    tol: T,
) -> Result<T> {
    Ok(wasserstein2_plan(mu, nu, schedule, max_iter, tol)?
        .cost
        .sqrt())
}

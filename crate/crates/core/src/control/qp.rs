//! Dense strictly convex QP `min ½ zᵀHz + fᵀz  s.t.  G z ≤ h` by the dual
//! active-set method of Goldfarb and Idnani.
//!
//! The method starts from the unconstrained minimizer and adds violated
//! constraints one at a time while keeping the iterate dual feasible. The
//! factorization `Jᵀ N_A = [R; 0]` with `J = L⁻ᵀ Q` is updated by Givens
//! rotations on every add and drop, so an iteration costs `O(n²)`.
//!
//! Anti-cycling: the entering constraint is the lowest-index violated row
//! and ties in the ratio test are broken toward the lowest row index.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    pub z: Vec<T>,
    /// One multiplier per row of `G`; zero for inactive rows.
    pub multipliers: Vec<T>,
    /// Active rows in the order they entered the working set.
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// Factorized QP with fixed `H` and `G`; `f` and `h` vary per solve.
#[derive(Clone, Debug)]
pub struct DenseQp<T> {
    hess: Matrix<T>,
    chol: Matrix<T>,
    /// `L⁻ᵀ`, the starting `J`.
    j0: Matrix<T>,
    g: Matrix<T>,
    max_iter: usize,
}

impl<T: Real> DenseQp<T> {
    /// `hess` must be symmetric positive definite. `g` may have zero rows.
    pub fn new(hess: Matrix<T>, g: Matrix<T>) -> Result<Self> {
        if !hess.is_square() {
            return Err(Error::DimensionMismatch {
                what: "QP Hessian",
                expected: hess.rows(),
                found: hess.cols(),
            });
        }
        let n = hess.rows();
        if g.rows() > 0 && g.cols() != n {
            return Err(Error::DimensionMismatch {
                what: "QP constraint matrix",
                expected: n,
                found: g.cols(),
            });
        }
        let chol = hess.cholesky()?;
        let mut j0 = Matrix::zeros(n, n);
        // column k of L⁻ᵀ solves Lᵀ y = e_k
        let mut e = vec![T::zero(); n];
        for k in 0..n {
            e[k] = T::one();
            let col = linalg::solve_lower_transpose(&chol, &e);
            for i in 0..n {
                j0[(i, k)] = col[i];
            }
            e[k] = T::zero();
        }
        let g = if g.rows() == 0 {
            Matrix::zeros(0, n)
        } else {
            g
        };
        let max_iter = 10 * (n + g.rows()) + 100;
        Ok(Self {
            hess,
            chol,
            j0,
            g,
            max_iter,
        })
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn dim(&self) -> usize {
        self.hess.rows()
    }

    pub fn constraint_count(&self) -> usize {
        self.g.rows()
    }

    pub fn hessian(&self) -> &Matrix<T> {
        &self.hess
    }

    pub fn constraints(&self) -> &Matrix<T> {
        &self.g
    }

    pub fn cholesky_factor(&self) -> &Matrix<T> {
        &self.chol
    }

    pub fn solve(&self, f: &[T], h: &[T]) -> Result<QpSolution<T>> {
        let n = self.dim();
        let m = self.g.rows();
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                what: "QP linear term",
                expected: n,
                found: f.len(),
            });
        }
        if h.len() != m {
            return Err(Error::DimensionMismatch {
                what: "QP right-hand side",
                expected: m,
                found: h.len(),
            });
        }
        let neg_f: Vec<T> = f.iter().map(|v| -*v).collect();
        let mut z = linalg::cholesky_solve(&self.chol, &neg_f);
        let mut j = self.j0.clone();
        let mut r = Matrix::zeros(n, n);
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<T> = Vec::new();
        let mut is_active = vec![false; m];
        let mut iterations = 0;
        let mut d = vec![T::zero(); n];
        let mut step = vec![T::zero(); n];
        let tiny = T::epsilon() * T::lit(100.0);

        loop {
            let entering = (0..m).find(|&i| {
                !is_active[i] && linalg::dot(self.g.row(i), &z) - h[i] > violation_tol(h[i])
            });
            let Some(p) = entering else { break };
            let np: Vec<T> = self.g.row(p).iter().map(|v| -*v).collect();
            let mut u_p = T::zero();

            loop {
                iterations += 1;
                if iterations > self.max_iter {
                    return Err(Error::QpMaxIterations {
                        iterations: self.max_iter,
                    });
                }
                let q = active.len();
                for k in 0..n {
                    d[k] = (0..n).map(|i| j[(i, k)] * np[i]).sum();
                }
                for i in 0..n {
                    step[i] = (q..n).map(|k| j[(i, k)] * d[k]).sum();
                }
                let rv = back_substitute(&r, &d[..q]);

                // partial (dual) step length and the constraint it drops
                let mut t1 = T::infinity();
                let mut drop_at: Option<usize> = None;
                for a in 0..q {
                    if rv[a] > T::zero() {
                        let ratio = u[a] / rv[a];
                        let better = match drop_at {
                            None => true,
                            Some(l) => ratio < t1 || (ratio == t1 && active[a] < active[l]),
                        };
                        if better {
                            t1 = ratio;
                            drop_at = Some(a);
                        }
                    }
                }
                let free: T = d[q..].iter().map(|v| *v * *v).sum();
                let total: T = d.iter().map(|v| *v * *v).sum();
                let t2 = if free > tiny * tiny * total {
                    (linalg::dot(self.g.row(p), &z) - h[p]) / free
                } else {
                    T::infinity()
                };

                if t1.is_infinite() && t2.is_infinite() {
                    return Err(Error::QpInfeasible { row: p });
                }
                if t2.is_infinite() {
                    for a in 0..q {
                        u[a] -= t1 * rv[a];
                    }
                    u_p += t1;
                    let l = drop_at.expect("finite partial step has a blocking row");
                    drop_constraint(&mut j, &mut r, &mut active, &mut u, &mut is_active, l);
                    continue;
                }
                let t = t1.min(t2);
                for i in 0..n {
                    z[i] += t * step[i];
                }
                for a in 0..q {
                    u[a] -= t * rv[a];
                }
                u_p += t;
                if t2 <= t1 {
                    add_constraint(&mut j, &mut r, &mut d, q);
                    active.push(p);
                    u.push(u_p);
                    is_active[p] = true;
                    break;
                }
                let l = drop_at.expect("partial step has a blocking row");
                drop_constraint(&mut j, &mut r, &mut active, &mut u, &mut is_active, l);
            }
        }

        let mut multipliers = vec![T::zero(); m];
        for (a, &row) in active.iter().enumerate() {
            multipliers[row] = u[a].max(T::zero());
        }
        Ok(QpSolution {
            z,
            multipliers,
            active,
            iterations,
        })
    }

    /// Max-norm KKT residual: stationarity, primal and dual feasibility and
    /// complementarity.
    pub fn kkt_residual(&self, f: &[T], h: &[T], sol: &QpSolution<T>) -> T {
        let mut stat = self.hess.mul_vec(&sol.z);
        let gt_l = self.g.tr_mul_vec(&sol.multipliers);
        let mut worst = T::zero();
        for i in 0..stat.len() {
            stat[i] += f[i] + gt_l[i];
            worst = worst.max(stat[i].abs());
        }
        for i in 0..self.g.rows() {
            let slack = linalg::dot(self.g.row(i), &sol.z) - h[i];
            worst = worst.max(slack.max(T::zero()));
            worst = worst.max((-sol.multipliers[i]).max(T::zero()));
            worst = worst.max((sol.multipliers[i] * slack).abs());
        }
        worst
    }

    /// `½ zᵀHz + fᵀz`.
    pub fn objective(&self, f: &[T], z: &[T]) -> T {
        T::lit(0.5) * linalg::dot(z, &self.hess.mul_vec(z)) + linalg::dot(f, z)
    }
}

/// Convenience wrapper factorizing `H` on every call.
pub fn qp_solve<T: Real>(
    hess: &Matrix<T>,
    f: &[T],
    g: &Matrix<T>,
    h: &[T],
) -> Result<QpSolution<T>> {
    DenseQp::new(hess.clone(), g.clone())?.solve(f, h)
}

fn violation_tol<T: Real>(h: T) -> T {
    T::lit(1e-10) * h.abs().max(T::one())
}

/// Solves `R[..q, ..q] x = d` for upper-triangular `R`.
fn back_substitute<T: Real>(r: &Matrix<T>, d: &[T]) -> Vec<T> {
    let q = d.len();
    let mut x = vec![T::zero(); q];
    for i in (0..q).rev() {
        let mut acc = d[i];
        for k in i + 1..q {
            acc -= r[(i, k)] * x[k];
        }
        x[i] = acc / r[(i, i)];
    }
    x
}

fn givens<T: Real>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    (a / h, b / h, h)
}

fn rotate_columns<T: Real>(j: &mut Matrix<T>, k: usize, c: T, s: T) {
    for i in 0..j.rows() {
        let (x, y) = (j[(i, k)], j[(i, k + 1)]);
        j[(i, k)] = c * x + s * y;
        j[(i, k + 1)] = -s * x + c * y;
    }
}

/// Appends `d = Jᵀ n_p` as column `q` of `R`, zeroing `d[q+1..]` by
/// rotations of `J`.
fn add_constraint<T: Real>(j: &mut Matrix<T>, r: &mut Matrix<T>, d: &mut [T], q: usize) {
    let n = d.len();
    for k in (q + 1..n).rev() {
        if d[k] == T::zero() {
            continue;
        }
        let (c, s, h) = givens(d[k - 1], d[k]);
        d[k - 1] = h;
        d[k] = T::zero();
        rotate_columns(j, k - 1, c, s);
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

fn drop_constraint<T: Real>(
    j: &mut Matrix<T>,
    r: &mut Matrix<T>,
    active: &mut Vec<usize>,
    u: &mut Vec<T>,
    is_active: &mut [bool],
    l: usize,
) {
    let q = active.len();
    for col in l..q - 1 {
        for row in 0..=col + 1 {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..q {
        r[(row, q - 1)] = T::zero();
    }
    for k in l..q - 1 {
        let (c, s, h) = givens(r[(k, k)], r[(k + 1, k)]);
        r[(k, k)] = h;
        r[(k + 1, k)] = T::zero();
        for col in k + 1..q - 1 {
            let (x, y) = (r[(k, col)], r[(k + 1, col)]);
            r[(k, col)] = c * x + s * y;
            r[(k + 1, col)] = -s * x + c * y;
        }
        rotate_columns(j, k, c, s);
    }
    is_active[active[l]] = false;
    active.remove(l);
    u.remove(l);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn box_clipping() {
        let g = m(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ]);
        let h = [0.5, 0.5, 0.0, 0.0];
        let sol = qp_solve(&Matrix::identity(2), &[-1.0, -1.0], &g, &h).unwrap();
        assert!((sol.z[0] - 0.5).abs() < 1e-14 && (sol.z[1] - 0.5).abs() < 1e-14);
        assert_eq!(sol.active, vec![0, 1]);
        assert!((sol.multipliers[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unconstrained() {
        let sol = qp_solve(
            &Matrix::<f64>::from_diag(&[2.0, 2.0]),
            &[-2.0, -4.0],
            &Matrix::zeros(0, 2),
            &[],
        )
        .unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-15 && (sol.z[1] - 2.0).abs() < 1e-15);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn infeasible_reports_row() {
        // z ≤ 0 and z ≥ 1: row 1 enters first, row 0 then cannot be added
        let g = m(&[vec![1.0], vec![-1.0]]);
        let err = qp_solve(&Matrix::identity(1), &[0.0], &g, &[0.0, -1.0]).unwrap_err();
        assert!(matches!(err, Error::QpInfeasible { row: 0 }), "{err:?}");
    }

    #[test]
    fn iteration_cap() {
        let g = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let qp = DenseQp::new(Matrix::identity(2), g)
            .unwrap()
            .with_max_iter(1);
        let err = qp.solve(&[-1.0, -1.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::QpMaxIterations { .. }));
    }

    #[test]
    fn drop_path_is_exercised() {
        // a constraint that is active for the first violated row but
        // inactive at the optimum
        let g = m(&[vec![-1.0, -1.0], vec![1.0, 0.0]]);
        let f = [-4.0, 1.0];
        let h = [-1.0, 0.5];
        let qp = DenseQp::new(Matrix::identity(2), g).unwrap();
        let sol = qp.solve(&f, &h).unwrap();
        assert!(qp.kkt_residual(&f, &h, &sol) < 1e-12);
        let best = brute_force(&Matrix::identity(2), &f, qp.constraints(), &h).unwrap();
        assert!((qp.objective(&f, &sol.z) - best).abs() < 1e-12);
    }

    /// Minimum over every active subset whose equality-constrained KKT point
    /// is primal feasible.
    fn brute_force(hess: &Matrix<f64>, f: &[f64], g: &Matrix<f64>, h: &[f64]) -> Option<f64> {
        let n = hess.rows();
        let rows = g.rows();
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << rows) {
            let set: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
            let k = n + set.len();
            let mut kkt = Matrix::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for i in 0..n {
                for jj in 0..n {
                    kkt[(i, jj)] = hess[(i, jj)];
                }
                rhs[i] = -f[i];
            }
            for (a, &row) in set.iter().enumerate() {
                for jj in 0..n {
                    kkt[(n + a, jj)] = g[(row, jj)];
                    kkt[(jj, n + a)] = g[(row, jj)];
                }
                rhs[n + a] = h[row];
            }
            let Ok(sol) = kkt.solve_vec(&rhs) else {
                continue;
            };
            let z = &sol[..n];
            if sol.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let feasible = (0..rows).all(|i| linalg::dot(g.row(i), z) <= h[i] + 1e-9);
            if feasible {
                let obj = 0.5 * linalg::dot(z, &hess.mul_vec(z)) + linalg::dot(f, z);
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        best
    }

    fn random_qp() -> impl Strategy<Value = (Matrix<f64>, Vec<f64>, Matrix<f64>, Vec<f64>)> {
        (1usize..=3, 0usize..=5).prop_flat_map(|(n, rows)| {
            (
                prop::collection::vec(-2.0f64..2.0, n * n),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-2.0f64..2.0, rows * n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, rows),
            )
                .prop_map(move |(a, f, g, z0, slack)| {
                    let a = Matrix::from_row_slice(n, n, &a);
                    let hess = a
                        .transpose()
                        .matmul(&a)
                        .add(&Matrix::identity(n).scale(0.1));
                    let g = Matrix::from_row_slice(rows, n, &g);
                    let h: Vec<f64> = (0..rows)
                        .map(|i| linalg::dot(g.row(i), &z0) + slack[i])
                        .collect();
                    (hess, f, g, h)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_active_set_enumeration((hess, f, g, h) in random_qp()) {
            let qp = DenseQp::new(hess.clone(), g.clone()).unwrap();
            let sol = qp.solve(&f, &h).unwrap();
            prop_assert!(qp.kkt_residual(&f, &h, &sol) <= 1e-8);
            let best = brute_force(&hess, &f, &g, &h).unwrap();
            prop_assert!((qp.objective(&f, &sol.z) - best).abs() <= 1e-8 * (1.0 + best.abs()));
        }
    }
}

//! Online linear MPC about a trim point.
//!
//! The prediction model is the zero-order-hold discretization of the trimmed
//! LTI pair. Inputs are free for `N_c = ⌈t_c/dt⌉` steps and then held at the
//! last free value until `N_p = ⌈t_p/dt⌉`. The condensed QP in the stacked
//! free inputs `U` is
//!
//! ```text
//! min  Σ_{k=1}^{N_p} Δx_kᵀ Q Δx_k + Σ_{k=0}^{N_p−1} Δu_kᵀ R Δu_k
//!        + Σ_{k=1}^{N_c−1} (Δu_k − Δu_{k−1})ᵀ S (Δu_k − Δu_{k−1}) / dt²
//! s.t. u_lo ≤ u_trim + Δu_k ≤ u_hi,   |e_y,k − e_y,center| ≤ halfwidth
//! ```
//!
//! Only `f` and `h` depend on the measured state, so `H` and `G` are
//! factorized once. Constraint rows are ordered input box first (per step,
//! per component, upper then lower) and then the window rows for
//! `k = 1..N_p` (upper then lower).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{max_steer, EvalFlags};
use crate::scalar::Real;

use super::qp::{DenseQp, QpSolution};
use super::trim::{LtiPair, TrimPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig<T> {
    pub q: Matrix<T>,
    pub r: Matrix<T>,
    /// Weight on the input rate `Δu̇`.
    pub s: Matrix<T>,
    /// Prediction horizon [s].
    pub t_p: T,
    /// Control horizon [s].
    pub t_c: T,
    /// Sampling time [s].
    pub dt: T,
    pub u_lo: Vec<T>,
    pub u_hi: Vec<T>,
    pub ey_center: T,
    pub ey_halfwidth: T,
    /// State coordinate constrained to the window.
    pub window_index: usize,
    /// Cyclic coordinate whose deviation is reset to zero at every solve.
    pub cyclic_index: Option<usize>,
}

impl<T: Real> MpcConfig<T> {
    /// Dynamic-bicycle lane keeping: `Q = 10 I₆`, `R = I₃`, `S = 0.1 I₃`,
    /// `dt = 0.1`, `t_p = 3`, `t_c = 2`, `|δ| ≤ 10°`, `β ∈ [−1, 1]`,
    /// window `e_y ∈ center ± 1.5`.
    pub fn for_dynamic(ey_center: T) -> Self {
        let steer = max_steer::<T>();
        Self {
            q: Matrix::identity(6).scale(T::lit(10.0)),
            r: Matrix::identity(3),
            s: Matrix::identity(3).scale(T::lit(0.1)),
            t_p: T::lit(3.0),
            t_c: T::lit(2.0),
            dt: T::lit(0.1),
            u_lo: vec![-steer, -T::one(), -T::one()],
            u_hi: vec![steer, T::one(), T::one()],
            ey_center,
            ey_halfwidth: T::lit(1.5),
            window_index: 4,
            cyclic_index: Some(5),
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let square = |mat: &Matrix<T>, k: usize, what: &'static str| {
            if mat.rows() != k || mat.cols() != k {
                Err(Error::DimensionMismatch {
                    what,
                    expected: k,
                    found: mat.rows(),
                })
            } else {
                Ok(())
            }
        };
        square(&self.q, n, "MPC state weight")?;
        square(&self.r, m, "MPC input weight")?;
        square(&self.s, m, "MPC slew weight")?;
        if self.u_lo.len() != m || self.u_hi.len() != m {
            return Err(Error::DimensionMismatch {
                what: "MPC input bounds",
                expected: m,
                found: self.u_lo.len().min(self.u_hi.len()),
            });
        }
        if !(self.dt > T::zero()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.t_c > T::zero() && self.t_c <= self.t_p) {
            return Err(Error::invalid("t_c", "must satisfy 0 < t_c <= t_p"));
        }
        if self.u_lo.iter().zip(&self.u_hi).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid(
                "input bounds",
                "need u_lo < u_hi componentwise",
            ));
        }
        if !(self.ey_halfwidth > T::zero()) {
            return Err(Error::invalid("ey_halfwidth", "must be positive"));
        }
        if self.window_index >= n || self.cyclic_index.is_some_and(|k| k >= n) {
            return Err(Error::invalid("MPC state index", "out of range"));
        }
        self.q.check_symmetric(T::lit(1e-12))?;
        self.r.cholesky()?;
        self.s.check_symmetric(T::lit(1e-12))?;
        Ok(())
    }

    /// `(N_p, N_c)`.
    pub fn horizons(&self) -> (usize, usize) {
        let steps = |t: T| {
            let k = (t / self.dt - T::lit(1e-9)).ceil();
            k.to_usize().unwrap_or(1).max(1)
        };
        (steps(self.t_p), steps(self.t_c))
    }
}

/// Zero-order-hold discretization via `exp([[A, B], [0, 0]] dt)`.
pub fn discretize<T: Real>(lti: &LtiPair<T>, dt: T) -> (Matrix<T>, Matrix<T>) {
    let n = lti.a.rows();
    let m = lti.b.cols();
    let mut aug = Matrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = lti.a[(i, j)] * dt;
        }
        for j in 0..m {
            aug[(i, n + j)] = lti.b[(i, j)] * dt;
        }
    }
    let e = aug.expm();
    let rows: Vec<usize> = (0..n).collect();
    let cols_b: Vec<usize> = (n..n + m).collect();
    (e.select(&rows, &rows), e.select(&rows, &cols_b))
}

/// Result of one policy evaluation.
#[derive(Clone, Debug)]
pub struct MpcOutput<T> {
    pub u: Vec<T>,
    pub flags: EvalFlags,
    /// `∂u/∂x` of the active piece, when requested.
    pub gain: Option<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct OnlineMpc<T> {
    lti: LtiPair<T>,
    config: MpcConfig<T>,
    trim: TrimPoint<T>,
    np: usize,
    nc: usize,
    qp: DenseQp<T>,
    box_qp: DenseQp<T>,
    hess_inv: Matrix<T>,
    /// `f = f_x Δx₀`.
    f_x: Matrix<T>,
    /// `h = h0 + h_x Δx₀`.
    h0: Vec<T>,
    h_x: Matrix<T>,
}

impl<T: Real> OnlineMpc<T> {
    pub fn new(lti: LtiPair<T>, config: MpcConfig<T>, trim: TrimPoint<T>) -> Result<Self> {
        let n = lti.a.rows();
        let m = lti.b.cols();
        if !lti.a.is_square() || lti.b.rows() != n {
            return Err(Error::DimensionMismatch {
                what: "LTI pair",
                expected: n,
                found: lti.b.rows(),
            });
        }
        if trim.x.len() != n || trim.u.len() != m {
            return Err(Error::DimensionMismatch {
                what: "trim point",
                expected: n,
                found: trim.x.len(),
            });
        }
        config.validate(n, m)?;
        for k in 0..m {
            if !(trim.u[k] >= config.u_lo[k] && trim.u[k] <= config.u_hi[k]) {
                return Err(Error::ControlOutOfBounds {
                    index: k,
                    value: trim.u[k].as_f64(),
                });
            }
        }
        let (np, nc) = config.horizons();
        let nu = nc * m;
        let (ad, bd) = discretize(&lti, config.dt);

        // Δx_k = Φ_k Δx₀ + S_k U
        let mut phi = Matrix::identity(n);
        let mut s_k = Matrix::zeros(n, nu);
        let mut hess = Matrix::zeros(nu, nu);
        let mut f_x = Matrix::zeros(nu, n);
        let mut window_rows: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(np);
        let w = config.window_index;
        for k in 1..=np {
            let block = (k - 1).min(nc - 1);
            let mut next = ad.matmul(&s_k);
            for i in 0..n {
                for j in 0..m {
                    next[(i, block * m + j)] += bd[(i, j)];
                }
            }
            s_k = next;
            phi = ad.matmul(&phi);
            let sq = s_k.transpose().matmul(&config.q);
            hess = hess.add(&sq.matmul(&s_k));
            f_x = f_x.add(&sq.matmul(&phi));
            window_rows.push((s_k.row(w).to_vec(), phi.row(w).to_vec()));
        }
        let inv_dt2 = T::one() / (config.dt * config.dt);
        for c in 0..nc {
            let held = if c == nc - 1 { np - (nc - 1) } else { 1 };
            let weight = T::from_usize_lossy(held);
            for i in 0..m {
                for j in 0..m {
                    hess[(c * m + i, c * m + j)] += weight * config.r[(i, j)];
                }
            }
        }
        for c in 1..nc {
            // (U_c − U_{c−1})ᵀ S (U_c − U_{c−1}) / dt²
            for i in 0..m {
                for j in 0..m {
                    let v = config.s[(i, j)] * inv_dt2;
                    hess[(c * m + i, c * m + j)] += v;
                    hess[((c - 1) * m + i, (c - 1) * m + j)] += v;
                    hess[(c * m + i, (c - 1) * m + j)] -= v;
                    hess[((c - 1) * m + i, c * m + j)] -= v;
                }
            }
        }
        let two = T::lit(2.0);
        let hess = hess.add(&hess.transpose()); // 2·sym(H)
        let f_x = f_x.scale(two);

        let box_rows = 2 * nu;
        let rows = box_rows + 2 * np;
        let mut g = Matrix::zeros(rows, nu);
        let mut h0 = vec![T::zero(); rows];
        let mut h_x = Matrix::zeros(rows, n);
        for c in 0..nc {
            for i in 0..m {
                let r = 2 * (c * m + i);
                g[(r, c * m + i)] = T::one();
                h0[r] = config.u_hi[i] - trim.u[i];
                g[(r + 1, c * m + i)] = -T::one();
                h0[r + 1] = trim.u[i] - config.u_lo[i];
            }
        }
        let upper = config.ey_center + config.ey_halfwidth - trim.x[w];
        let lower = config.ey_halfwidth - config.ey_center + trim.x[w];
        for (k, (srow, prow)) in window_rows.iter().enumerate() {
            let r = box_rows + 2 * k;
            for j in 0..nu {
                g[(r, j)] = srow[j];
                g[(r + 1, j)] = -srow[j];
            }
            h0[r] = upper;
            h0[r + 1] = lower;
            for j in 0..n {
                h_x[(r, j)] = -prow[j];
                h_x[(r + 1, j)] = prow[j];
            }
        }
        let box_idx: Vec<usize> = (0..box_rows).collect();
        let all_cols: Vec<usize> = (0..nu).collect();
        let box_qp = DenseQp::new(hess.clone(), g.select(&box_idx, &all_cols))?;
        let qp = DenseQp::new(hess.clone(), g)?;
        let hess_inv = hess.inverse()?;
        Ok(Self {
            lti,
            config,
            trim,
            np,
            nc,
            qp,
            box_qp,
            hess_inv,
            f_x,
            h0,
            h_x,
        })
    }

    pub fn config(&self) -> &MpcConfig<T> {
        &self.config
    }

    pub fn trim(&self) -> &TrimPoint<T> {
        &self.trim
    }

    pub fn lti(&self) -> &LtiPair<T> {
        &self.lti
    }

    pub fn state_dim(&self) -> usize {
        self.lti.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.lti.b.cols()
    }

    /// `(N_p, N_c)`.
    pub fn horizons(&self) -> (usize, usize) {
        (self.np, self.nc)
    }

    /// The condensed QP with every constraint row.
    pub fn qp(&self) -> &DenseQp<T> {
        &self.qp
    }

    /// Deviation from the trim with the cyclic coordinate re-referenced.
    pub fn deviation(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "MPC state",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let mut dx: Vec<T> = x.iter().zip(&self.trim.x).map(|(a, b)| *a - *b).collect();
        if let Some(k) = self.config.cyclic_index {
            dx[k] = T::zero();
        }
        Ok(dx)
    }

    /// Linear term and right-hand side of the condensed QP at `x`.
    pub fn qp_data(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let dx = self.deviation(x)?;
        let f = self.f_x.mul_vec(&dx);
        let hx = self.h_x.mul_vec(&dx);
        let h = self.h0.iter().zip(hx).map(|(a, b)| *a + b).collect();
        Ok((f, h))
    }

    pub fn eval(&self, x: &[T]) -> Result<MpcOutput<T>> {
        self.evaluate(x, false)
    }

    pub fn eval_with_gain(&self, x: &[T]) -> Result<MpcOutput<T>> {
        self.evaluate(x, true)
    }

    fn evaluate(&self, x: &[T], want_gain: bool) -> Result<MpcOutput<T>> {
        let (f, h) = self.qp_data(x)?;
        let (sol, qp, flags) = match self.qp.solve(&f, &h) {
            Ok(sol) => (sol, &self.qp, EvalFlags::NONE),
            Err(Error::QpInfeasible { .. }) => {
                let sol = self
                    .box_qp
                    .solve(&f, &h[..self.box_qp.constraint_count()])?;
                (sol, &self.box_qp, EvalFlags::POLICY_FALLBACK)
            }
            Err(e) => return Err(e),
        };
        let m = self.input_dim();
        let u: Vec<T> = (0..m)
            .map(|k| {
                (self.trim.u[k] + sol.z[k])
                    .max(self.config.u_lo[k])
                    .min(self.config.u_hi[k])
            })
            .collect();
        let gain = if want_gain {
            Some(self.local_gain(qp, &sol)?)
        } else {
            None
        };
        Ok(MpcOutput { u, flags, gain })
    }

    /// `∂Δu₀/∂x` on the piece with the solution's active set, from the
    /// parametric KKT system
    /// `(G_A H⁻¹ G_Aᵀ) ∂λ = −G_A H⁻¹ f_x − h_x,A`,
    /// `∂U = −H⁻¹ (f_x + G_Aᵀ ∂λ)`.
    fn local_gain(&self, qp: &DenseQp<T>, sol: &QpSolution<T>) -> Result<Matrix<T>> {
        let n = self.state_dim();
        let m = self.input_dim();
        let nu = self.nc * m;
        let g = qp.constraints();
        let mut rhs = self.f_x.clone();
        let active = &sol.active;
        if !active.is_empty() {
            let q = active.len();
            let cols: Vec<usize> = (0..nu).collect();
            let ga = g.select(active, &cols);
            let ga_hinv = ga.matmul(&self.hess_inv);
            let schur = ga_hinv.matmul(&ga.transpose());
            let mut lam_rhs = ga_hinv.matmul(&self.f_x).scale(-T::one());
            for (a, &row) in active.iter().enumerate() {
                for j in 0..n {
                    lam_rhs[(a, j)] -= self.h_x[(row, j)];
                }
            }
            let dlam = schur.solve(&lam_rhs)?;
            debug_assert_eq!(dlam.rows(), q);
            rhs = rhs.add(&ga.transpose().matmul(&dlam));
        }
        let rows: Vec<usize> = (0..m).collect();
        let all: Vec<usize> = (0..nu).collect();
        let mut gain = self
            .hess_inv
            .select(&rows, &all)
            .matmul(&rhs)
            .scale(-T::one());
        if let Some(k) = self.config.cyclic_index {
            for i in 0..m {
                gain[(i, k)] = T::zero();
            }
        }
        Ok(gain)
    }
}

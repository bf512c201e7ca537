//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use liouville_reach::Mat;

/// Quadratic form `zᵀ M z` minimized over the trailing `m` coordinates;
/// returns the Schur complement on the leading ones and the minimizer gain
/// `v* = K y`.
fn minimize_tail(mat: &Mat, m: usize) -> (Mat, Mat) {
    let k = mat.rows() - m;
    let y: Vec<usize> = (0..k).collect();
    let v: Vec<usize> = (k..k + m).collect();
    let m_vv = mat.select(&v, &v);
    let m_vy = mat.select(&v, &y);
    let gain = m_vv.solve(&m_vy).unwrap().scale(-1.0);
    let schur = mat.select(&y, &y).add(&m_vy.transpose().matmul(&gain));
    (schur, gain)
}

fn block_diag(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.rows(), b.rows());
    let mut out = Mat::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = a[(i, j)];
        }
    }
    for i in 0..m {
        for j in 0..m {
            out[(n + i, n + j)] = b[(i, j)];
        }
    }
    out
}

/// Gain `Δu₀ = K Δx₀` of the unconstrained move-blocked LQ problem
///
/// ```text
/// min Σ_{k=1}^{N_p} Δx_kᵀQΔx_k + Σ_{k=0}^{N_p−1} Δu_kᵀRΔu_k
///     + Σ_{k=1}^{N_c−1} (Δu_k − Δu_{k−1})ᵀ S_rate (Δu_k − Δu_{k−1})
/// ```
///
/// with `Δx_{k+1} = A Δx_k + B Δu_k` and `Δu_k = Δu_{N_c−1}` for `k ≥ N_c`,
/// by backward dynamic programming: a decision-free recursion over the
/// held tail, then Riccati steps on the state augmented with the previous
/// input.
pub fn blocked_lqr_gain(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    s_rate: &Mat,
    np: usize,
    nc: usize,
) -> Mat {
    let n = a.rows();
    let m = b.cols();
    // z = (x, u) ↦ (A x + B u, u)
    let mut f = Mat::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            f[(i, j)] = a[(i, j)];
        }
        for j in 0..m {
            f[(i, n + j)] = b[(i, j)];
        }
    }
    for j in 0..m {
        f[(n + j, n + j)] = 1.0;
    }
    let qz = block_diag(q, &Mat::zeros(m, m));
    let rz = block_diag(&Mat::zeros(n, n), r);
    let step = |next: &Mat| rz.add(&f.transpose().matmul(&qz.add(next)).matmul(&f));

    // held input over steps N_c − 1 … N_p − 1
    let mut g = Mat::zeros(n + m, n + m);
    for _ in (nc - 1)..np {
        g = step(&g);
    }
    // g is G_c(x, u); fold stage c's slew and optimize u_c, c = N_c−1 … 1
    for _ in (1..nc).rev() {
        // ordering (x, p, v): slew (v − p)ᵀ S (v − p) plus G(x, v)
        let mut h = Mat::zeros(n + 2 * m, n + 2 * m);
        let xv: Vec<usize> = (0..n).chain(n + m..n + 2 * m).collect();
        for (a_i, &i) in xv.iter().enumerate() {
            for (a_j, &j) in xv.iter().enumerate() {
                h[(i, j)] += g[(a_i, a_j)];
            }
        }
        for i in 0..m {
            for j in 0..m {
                let s = s_rate[(i, j)];
                h[(n + i, n + j)] += s;
                h[(n + m + i, n + m + j)] += s;
                h[(n + i, n + m + j)] -= s;
                h[(n + m + i, n + j)] -= s;
            }
        }
        let (j_next, _) = minimize_tail(&h, m);
        g = step(&j_next);
    }
    minimize_tail(&g, m).1
}

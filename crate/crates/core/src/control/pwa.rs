//! Piecewise-affine state feedback `u = Γ_j x + γ_j` on polytopes
//! `{x : H_j x ≤ h_j}`.
//!
//! File format (JSON):
//!
//! ```text
//! {
//!   "dim": d,
//!   "input_dim": m,
//!   "regions": [ { "H": [[..d..], ..], "h": [..], "Gamma": [[..d..] × m], "gamma": [..m..] }, .. ],
//!   "trim": { "x": [..d..], "u": [..m..] }          // optional
//! }
//! ```
//!
//! `H` may have zero rows (the region is all of ℝᵈ). Numbers are written in
//! shortest round-trip form, so save followed by load is bit exact for `f64`.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::models::EvalFlags;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::qp::DenseQp;
use super::trim::TrimPoint;

/// Slack on `H_j x ≤ h_j` for region membership.
pub const REGION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PwaRegion<T> {
    pub h_mat: Matrix<T>,
    pub h_vec: Vec<T>,
    pub gain: Matrix<T>,
    pub offset: Vec<T>,
}

impl<T: Real> PwaRegion<T> {
    pub fn contains(&self, x: &[T]) -> bool {
        let tol = T::lit(REGION_TOL);
        (0..self.h_mat.rows()).all(|i| linalg::dot(self.h_mat.row(i), x) <= self.h_vec[i] + tol)
    }

    pub fn control(&self, x: &[T]) -> Vec<T> {
        self.gain
            .mul_vec(x)
            .into_iter()
            .zip(&self.offset)
            .map(|(a, b)| a + *b)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PwaPolicy<T> {
    dim: usize,
    input_dim: usize,
    regions: Vec<PwaRegion<T>>,
    centers: Vec<Vec<T>>,
    trim: Option<TrimPoint<T>>,
}

impl<T: Real> PwaPolicy<T> {
    pub fn new(
        dim: usize,
        input_dim: usize,
        regions: Vec<PwaRegion<T>>,
        trim: Option<TrimPoint<T>>,
    ) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::EmptyPolicy);
        }
        let mut centers = Vec::with_capacity(regions.len());
        for (j, reg) in regions.iter().enumerate() {
            let at = |field: &str| format!("regions[{j}].{field}");
            if reg.h_mat.rows() > 0 && reg.h_mat.cols() != dim {
                return Err(Error::schema(
                    at("H"),
                    format!("rows must have {dim} entries"),
                ));
            }
            if reg.h_vec.len() != reg.h_mat.rows() {
                return Err(Error::schema(
                    at("h"),
                    "length must equal the row count of H",
                ));
            }
            if reg.gain.rows() != input_dim || reg.gain.cols() != dim {
                return Err(Error::schema(
                    at("Gamma"),
                    format!("must be {input_dim} x {dim}"),
                ));
            }
            if reg.offset.len() != input_dim {
                return Err(Error::schema(
                    at("gamma"),
                    format!("must have {input_dim} entries"),
                ));
            }
            let (center, radius) = chebyshev_center(reg, dim)?;
            if !(radius > T::lit(1e-12)) {
                return Err(Error::schema(at("H"), "region has an empty interior"));
            }
            centers.push(center);
        }
        if let Some(t) = &trim {
            if t.x.len() != dim || t.u.len() != input_dim {
                return Err(Error::schema("trim", "dimension mismatch"));
            }
        }
        Ok(Self {
            dim,
            input_dim,
            regions,
            centers,
            trim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn regions(&self) -> &[PwaRegion<T>] {
        &self.regions
    }

    pub fn trim(&self) -> Option<&TrimPoint<T>> {
        self.trim.as_ref()
    }

    /// Chebyshev centers used for extrapolation.
    pub fn centers(&self) -> &[Vec<T>] {
        &self.centers
    }

    /// First region containing `x`, or the region with the nearest
    /// Chebyshev center flagged as extrapolated.
    pub fn locate(&self, x: &[T]) -> Result<(usize, EvalFlags)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "policy state",
                expected: self.dim,
                found: x.len(),
            });
        }
        if let Some(j) = self.regions.iter().position(|r| r.contains(x)) {
            return Ok((j, EvalFlags::NONE));
        }
        let mut best = 0;
        let mut best_d = T::infinity();
        for (j, c) in self.centers.iter().enumerate() {
            let d: T = c.iter().zip(x).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        Ok((best, EvalFlags::EXTRAPOLATED))
    }

    pub fn eval(&self, x: &[T]) -> Result<(Vec<T>, usize, EvalFlags)> {
        let (j, flags) = self.locate(x)?;
        Ok((self.regions[j].control(x), j, flags))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let file: PwaFile = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::schema(e.path().to_string(), e.inner().to_string()))?;
        file.into_policy()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let to_rows = |m: &Matrix<T>| -> Vec<Vec<f64>> {
            m.to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.as_f64()).collect())
                .collect()
        };
        let to_vec = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.as_f64()).collect() };
        let file = PwaFile {
            dim: self.dim,
            input_dim: self.input_dim,
            regions: self
                .regions
                .iter()
                .map(|r| RegionFile {
                    h_mat: to_rows(&r.h_mat),
                    h_vec: to_vec(&r.h_vec),
                    gain: to_rows(&r.gain),
                    offset: to_vec(&r.offset),
                })
                .collect(),
            trim: self.trim.as_ref().map(|t| TrimFile {
                x: to_vec(&t.x),
                u: to_vec(&t.u),
            }),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Loads a policy file; see the module docs for the format.
pub fn load_pwa_policy(path: impl AsRef<Path>) -> Result<PwaPolicy<f64>> {
    PwaPolicy::load(path)
}

/// Center and radius of the largest ball in the region, from
/// `min ½ε‖(c, r)‖² − r` subject to `H_i c + ‖H_i‖ r ≤ h_i`, `r ≤ 10³`,
/// `|c_k| ≤ 10⁶`. The small ridge keeps unbounded regions well posed.
fn chebyshev_center<T: Real>(reg: &PwaRegion<T>, dim: usize) -> Result<(Vec<T>, T)> {
    let n = dim + 1;
    let rows = reg.h_mat.rows() + 1 + 2 * dim;
    let mut g = Matrix::zeros(rows, n);
    let mut h = vec![T::zero(); rows];
    for i in 0..reg.h_mat.rows() {
        let row = reg.h_mat.row(i);
        for k in 0..dim {
            g[(i, k)] = row[k];
        }
        g[(i, dim)] = linalg::norm2(row);
        h[i] = reg.h_vec[i];
    }
    let base = reg.h_mat.rows();
    g[(base, dim)] = T::one();
    h[base] = T::lit(1e3);
    for k in 0..dim {
        g[(base + 1 + 2 * k, k)] = T::one();
        h[base + 1 + 2 * k] = T::lit(1e6);
        g[(base + 2 + 2 * k, k)] = -T::one();
        h[base + 2 + 2 * k] = T::lit(1e6);
    }
    let mut f = vec![T::zero(); n];
    f[dim] = -T::one();
    let qp = DenseQp::new(Matrix::identity(n).scale(T::lit(1e-6)), g)?;
    let sol = qp.solve(&f, &h)?;
    let radius = sol.z[dim];
    let mut center = sol.z;
    center.truncate(dim);
    Ok((center, radius))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PwaFile {
    dim: usize,
    input_dim: usize,
    regions: Vec<RegionFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trim: Option<TrimFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    #[serde(rename = "H")]
    h_mat: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    h_vec: Vec<f64>,
    #[serde(rename = "Gamma")]
    gain: Vec<Vec<f64>>,
    #[serde(rename = "gamma")]
    offset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrimFile {
    x: Vec<f64>,
    u: Vec<f64>,
}

impl PwaFile {
    fn into_policy<T: Real>(self) -> Result<PwaPolicy<T>> {
        let (d, m) = (self.dim, self.input_dim);
        let matrix = |rows: Vec<Vec<f64>>, cols: usize, path: String| -> Result<Matrix<T>> {
            if let Some(i) = rows.iter().position(|r| r.len() != cols) {
                return Err(Error::schema(
                    format!("{path}[{i}]"),
                    format!("expected {cols} entries"),
                ));
            }
            let flat: Vec<T> = rows.iter().flatten().map(|v| T::lit(*v)).collect();
            Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
        };
        let vector = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::lit).collect() };
        let mut regions = Vec::with_capacity(self.regions.len());
        for (j, r) in self.regions.into_iter().enumerate() {
            let h_mat = matrix(r.h_mat, d, format!("regions[{j}].H"))?;
            let gain = matrix(r.gain, d, format!("regions[{j}].Gamma"))?;
            regions.push(PwaRegion {
                h_mat,
                h_vec: vector(r.h_vec),
                gain,
                offset: vector(r.offset),
            });
        }
        let trim = self.trim.map(|t| TrimPoint {
            x: vector(t.x),
            u: vector(t.u),
            residual_norm: T::zero(),
        });
        PwaPolicy::new(d, m, regions, trim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_rng;
    use rand::Rng;

    fn two_region() -> PwaPolicy<f64> {
        // u = −x₁ + 0.5 x₂ for x₁ ≤ 0 and u = −2 x₁ + 0.5 x₂ for x₁ ≥ 0;
        // both give 0.5 x₂ on x₁ = 0
        let left = PwaRegion {
            h_mat: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            h_vec: vec![0.0],
            gain: Matrix::from_rows(&[vec![-1.0, 0.5]]).unwrap(),
            offset: vec![0.0],
        };
        let right = PwaRegion {
            h_mat: Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            h_vec: vec![0.0, 5.0],
            gain: Matrix::from_rows(&[vec![-2.0, 0.5]]).unwrap(),
            offset: vec![0.0],
        };
        PwaPolicy::new(2, 1, vec![left, right], None).unwrap()
    }

    #[test]
    fn constant_policy_everywhere() {
        let reg = PwaRegion {
            h_mat: Matrix::zeros(0, 3),
            h_vec: vec![],
            gain: Matrix::zeros(2, 3),
            offset: vec![0.7, -0.2],
        };
        let p = PwaPolicy::new(3, 2, vec![reg], None).unwrap();
        for x in [[0.0, 0.0, 0.0], [1e5, -3.0, 2.0]] {
            let (u, j, flags) = p.eval(&x).unwrap();
            assert_eq!((u, j, flags), (vec![0.7, -0.2], 0, EvalFlags::NONE));
        }
    }

    #[test]
    fn continuous_across_boundary() {
        let p = two_region();
        let x = [0.0, 1.3];
        let (u, j, _) = p.eval(&x).unwrap();
        assert_eq!(j, 0);
        assert_eq!(u, p.regions()[1].control(&x));
    }

    #[test]
    fn extrapolates_outside() {
        let p = two_region();
        let (_, j, flags) = p.eval(&[9.0, 0.0]).unwrap();
        assert_eq!(j, 1);
        assert!(flags.contains(EvalFlags::EXTRAPOLATED));
        // the bounded slab's center sits at x₁ = 2.5
        assert!(
            (p.centers()[1][0] - 2.5).abs() < 1e-3,
            "{:?}",
            p.centers()[1]
        );
    }

    #[test]
    fn round_trip() {
        let p = two_region();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        p.save(&path).unwrap();
        let q = load_pwa_policy(&path).unwrap();
        assert_eq!(p.regions(), q.regions());
        let mut rng = sample_rng(3, 0);
        for _ in 0..100 {
            let x = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            assert_eq!(p.eval(&x).unwrap(), q.eval(&x).unwrap());
        }
    }

    #[test]
    fn rejects_bad_files() {
        let count = r#"{"dim":1,"input_dim":1,"regions":[{"H":[[1.0]],"h":[0.0,1.0],"Gamma":[[1.0]],"gamma":[0.0]}]}"#;
        let err = PwaPolicy::<f64>::from_json_str(count).unwrap_err();
        assert!(
            matches!(&err, Error::Schema { path, .. } if path == "regions[0].h"),
            "{err}"
        );

        let empty = r#"{"dim":1,"input_dim":1,"regions":[]}"#;
        assert!(matches!(
            PwaPolicy::<f64>::from_json_str(empty),
            Err(Error::EmptyPolicy)
        ));

        let unknown = r#"{"dim":1,"input_dim":1,"regions":[],"extra":1}"#;
        assert!(matches!(
            PwaPolicy::<f64>::from_json_str(unknown),
            Err(Error::Schema { .. })
        ));

        let ragged = r#"{"dim":2,"input_dim":1,"regions":[{"H":[[1.0]],"h":[0.0],"Gamma":[[1.0,0.0]],"gamma":[0.0]}]}"#;
        let err = PwaPolicy::<f64>::from_json_str(ragged).unwrap_err();
        assert!(
            matches!(&err, Error::Schema { path, .. } if path == "regions[0].H[0]"),
            "{err}"
        );

        let empty_interior = r#"{"dim":1,"input_dim":1,"regions":[{"H":[[1.0],[-1.0]],"h":[0.0,-1.0],"Gamma":[[1.0]],"gamma":[0.0]}]}"#;
        assert!(PwaPolicy::<f64>::from_json_str(empty_interior).is_err());
    }
}

//! Density propagation along characteristics.
//!
//! Each sample follows `ẋ = g(x, t)` while its log density follows
//! `d/dt log ρ = −∇·g(x, t)`. The two are integrated as one coupled system
//! with the divergence evaluated at every Runge–Kutta stage, so the weight
//! coordinate inherits the integrator's order.

pub mod dopri;

use std::io::Write;
use std::path::Path;

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::linalg::{solve_lower, Matrix};
use crate::models::{divergence, DivergenceMode, EvalFlags, VectorField};
use crate::scalar::Real;

use dopri::{integrate, SampleTrack, StepSettings};

/// Above this fraction of frozen samples the run is rejected.
pub const MAX_FROZEN_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationSettings<T> {
    pub rtol: T,
    pub atol: T,
    /// Output times, strictly increasing, starting at the initial time.
    pub t_grid: Vec<T>,
    pub max_step: T,
}

impl<T: Real> PropagationSettings<T> {
    /// `rtol = 1e-6`, `atol = 1e-9`, unbounded step.
    pub fn new(t_grid: Vec<T>) -> Self {
        Self {
            rtol: T::lit(1e-6),
            atol: T::lit(1e-9),
            t_grid,
            max_step: T::infinity(),
        }
    }

    pub fn with_tolerances(mut self, rtol: T, atol: T) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    /// `t0, t0 + dt, …` up to and including `tf` (within `1e-9 dt`).
    pub fn uniform_grid(t0: T, tf: T, dt: T) -> Result<Vec<T>> {
        if !(dt > T::zero()) || !(tf > t0) {
            return Err(Error::invalid("output grid", "need t0 < tf and dt > 0"));
        }
        let steps = ((tf - t0) / dt + T::lit(1e-9)).floor().as_f64() as usize;
        let mut grid: Vec<T> = (0..=steps)
            .map(|k| t0 + T::from_usize_lossy(k) * dt)
            .collect();
        if (tf - grid[steps]).abs() > T::lit(1e-9) * dt {
            grid.push(tf);
        } else {
            grid[steps] = tf;
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > T::zero()) || !(self.atol > T::zero()) {
            return Err(Error::invalid(
                "tolerances",
                "rtol and atol must be positive",
            ));
        }
        if !(self.max_step > T::zero()) {
            return Err(Error::invalid("max_step", "must be positive"));
        }
        if self.t_grid.is_empty() {
            return Err(Error::invalid("t_grid", "must be nonempty"));
        }
        if self.t_grid.iter().any(|t| !t.is_finite())
            || self.t_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::invalid(
                "t_grid",
                "must be finite and strictly increasing",
            ));
        }
        Ok(())
    }

    fn step_settings(&self) -> StepSettings<T> {
        StepSettings {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step,
        }
    }
}

/// Propagated clouds, one per output time.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudTrajectory<T> {
    pub clouds: Vec<WeightedCloud<T>>,
    /// `flags[k][i]`: events of sample `i` during the interval ending at
    /// output `k`.
    pub flags: Vec<Vec<EvalFlags>>,
    /// `log ρ^i(t_k)`, kept because `exp` can underflow far in the tails.
    pub log_weights: Vec<Vec<T>>,
}

impl<T: Real> CloudTrajectory<T> {
    pub fn times(&self) -> Vec<T> {
        self.clouds.iter().map(|c| c.time()).collect()
    }

    pub fn dim(&self) -> usize {
        self.clouds[0].dim()
    }

    pub fn sample_count(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn initial(&self) -> &WeightedCloud<T> {
        &self.clouds[0]
    }

    pub fn last(&self) -> &WeightedCloud<T> {
        &self.clouds[self.clouds.len() - 1]
    }

    /// Samples that carry `flag` at any output time.
    pub fn flagged_count(&self, flag: EvalFlags) -> usize {
        (0..self.sample_count())
            .filter(|&i| self.flags.iter().any(|f| f[i].contains(flag)))
            .count()
    }

    pub fn frozen_count(&self) -> usize {
        self.flagged_count(EvalFlags::FROZEN)
    }

    /// CSV with header `t,sample,x1..xd,rho,flag`; flags as the integer bit
    /// set.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("t,sample");
        for k in 1..=d {
            header.push_str(&format!(",x{k}"));
        }
        header.push_str(",rho,flag");
        writeln!(w, "{header}")?;
        for (k, cloud) in self.clouds.iter().enumerate() {
            let t = cloud.time().as_f64();
            for i in 0..cloud.len() {
                let mut line = format!("{t:.16e},{i}");
                for v in cloud.state(i) {
                    line.push_str(&format!(",{:.16e}", v.as_f64()));
                }
                line.push_str(&format!(
                    ",{:.16e},{}",
                    cloud.weight(i).as_f64(),
                    self.flags[k][i].0
                ));
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

fn check_start<T: Real>(
    cloud0: &WeightedCloud<T>,
    dim: usize,
    settings: &PropagationSettings<T>,
) -> Result<()> {
    settings.validate()?;
    if cloud0.is_empty() {
        return Err(Error::invalid(
            "initial cloud",
            "must hold at least one sample",
        ));
    }
    if cloud0.dim() != dim {
        return Err(Error::DimensionMismatch {
            what: "initial cloud",
            expected: dim,
            found: cloud0.dim(),
        });
    }
    if cloud0.time() != settings.t_grid[0] {
        return Err(Error::GridMismatch(format!(
            "initial cloud at t = {} but the grid starts at {}",
            cloud0.time().as_f64(),
            settings.t_grid[0].as_f64()
        )));
    }
    Ok(())
}

/// Integrates every sample independently, with or without the weight
/// coordinate. Shared with the states-only Monte Carlo baseline so both take
/// identical steps.
pub(crate) fn integrate_cloud<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
    with_weight: bool,
    workers: Option<usize>,
) -> Result<Vec<SampleTrack<T>>> {
    check_start(cloud0, field.dim(), settings)?;
    if with_weight && cloud0.weights().iter().any(|w| !(*w > T::zero())) {
        return Err(Error::invalid(
            "initial weights",
            "must be strictly positive",
        ));
    }
    let step = settings.step_settings();
    let tracks = par_map(cloud0.len(), workers, |i| {
        let lw0 = with_weight.then(|| cloud0.weight(i).ln());
        integrate(field, cloud0.state(i), lw0, &settings.t_grid, &step)
    })?;
    let frozen = tracks.iter().filter(|t| t.frozen).count();
    if frozen as f64 > MAX_FROZEN_FRACTION * tracks.len() as f64 {
        return Err(Error::TooManyFlagged {
            flagged: frozen,
            total: tracks.len(),
        });
    }
    if frozen > 0 {
        log::warn!(
            "{frozen} of {} samples frozen after step-size underflow",
            tracks.len()
        );
    }
    Ok(tracks)
}

/// Propagates `cloud0` through `field` on the global thread pool.
pub fn propagate<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
) -> Result<CloudTrajectory<T>> {
    propagate_with_workers(cloud0, field, settings, None)
}

/// As [`propagate`] with a dedicated pool of `workers` threads. The output
/// does not depend on the worker count.
pub fn propagate_with_workers<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
    workers: Option<usize>,
) -> Result<CloudTrajectory<T>> {
    let tracks = integrate_cloud(cloud0, field, settings, true, workers)?;
    let d = cloud0.dim();
    let n = cloud0.len();
    let nt = settings.t_grid.len();
    let mut clouds = Vec::with_capacity(nt);
    let mut flags = Vec::with_capacity(nt);
    let mut log_weights = Vec::with_capacity(nt);
    for (k, &t) in settings.t_grid.iter().enumerate() {
        let mut states = Vec::with_capacity(n * d);
        let mut lw = Vec::with_capacity(n);
        let mut fl = Vec::with_capacity(n);
        for tr in &tracks {
            states.extend_from_slice(&tr.states[k * d..(k + 1) * d]);
            lw.push(tr.log_weights[k]);
            fl.push(tr.flags[k]);
        }
        let weights = lw.iter().map(|v| v.exp()).collect();
        clouds.push(WeightedCloud::new(t, d, states, weights)?);
        flags.push(fl);
        log_weights.push(lw);
    }
    let fallbacks = (0..n)
        .filter(|&i| {
            flags
                .iter()
                .any(|f: &Vec<EvalFlags>| f[i].contains(EvalFlags::POLICY_FALLBACK))
        })
        .count();
    if fallbacks > 0 {
        log::info!("{fallbacks} of {n} samples used the policy fallback");
    }
    Ok(CloudTrajectory {
        clouds,
        flags,
        log_weights,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemianalyticReport<T> {
    /// Max over samples of `|ρ_stored − ρ_semi| / ρ_semi` at each time.
    pub per_time: Vec<T>,
    pub max_relative_residual: T,
}

/// Recomputes every weight as `ρ₀(x₀) · exp(−∫ ∇·g dτ)` with the integral
/// accumulated by the trapezoidal rule over the stored path.
///
/// `inverse_flow(t, x)` maps a state at time `t` back to its initial state
/// when the flow is known in closed form; the residual then also exposes the
/// state error. Without it the stored initial states are used.
pub fn verify_semianalytic<T, F, R, I>(
    traj: &CloudTrajectory<T>,
    rho0: R,
    field: &F,
    inverse_flow: Option<I>,
) -> Result<SemianalyticReport<T>>
where
    T: Real,
    F: VectorField<T> + ?Sized,
    R: Fn(&[T]) -> Result<T>,
    I: Fn(T, &[T]) -> Vec<T>,
{
    let n = traj.sample_count();
    let nt = traj.clouds.len();
    let mut integral = vec![T::zero(); n];
    let mut prev_div = Vec::with_capacity(n);
    for i in 0..n {
        prev_div.push(divergence(
            field,
            traj.clouds[0].time(),
            traj.clouds[0].state(i),
            DivergenceMode::Analytic,
        )?);
    }
    let mut per_time = Vec::with_capacity(nt);
    for k in 0..nt {
        let cloud = &traj.clouds[k];
        let t = cloud.time();
        if k > 0 {
            let dt = t - traj.clouds[k - 1].time();
            for i in 0..n {
                let div = divergence(field, t, cloud.state(i), DivergenceMode::Analytic)?;
                integral[i] += T::lit(0.5) * dt * (prev_div[i] + div);
                prev_div[i] = div;
            }
        }
        let mut worst = T::zero();
        for i in 0..n {
            let x0 = match &inverse_flow {
                Some(inv) => inv(t, cloud.state(i)),
                None => traj.clouds[0].state(i).to_vec(),
            };
            let semi = rho0(&x0)? * (-integral[i]).exp();
            let rel = (cloud.weight(i) - semi).abs() / semi;
            worst = worst.max(rel);
        }
        per_time.push(worst);
    }
    let max_relative_residual = per_time.iter().copied().fold(T::zero(), T::max);
    Ok(SemianalyticReport {
        per_time,
        max_relative_residual,
    })
}

/// Ratio statistic `(1/N) Σ ρ^i / ρ̂₋ᵢ(x^i)` at each output time, where
/// `ρ̂₋ᵢ` is a leave-one-out Gaussian KDE with bandwidth matrix
/// `h² Σ̂`, `h = N^{−1/(d+4)}` (Scott's rule) and `Σ̂` the sample covariance.
/// Close to one when the stored weights are the density of the samples.
pub fn mass_consistency<T: Real>(traj: &CloudTrajectory<T>) -> Result<Vec<T>> {
    let n = traj.sample_count();
    if n < 100 {
        return Err(Error::invalid(
            "cloud size",
            "mass consistency needs at least 100 samples",
        ));
    }
    let stats = par_map(traj.clouds.len(), None, |k| kde_ratio(&traj.clouds[k]))?;
    stats.into_iter().collect()
}

fn kde_ratio<T: Real>(cloud: &WeightedCloud<T>) -> Result<T> {
    let n = cloud.len();
    let d = cloud.dim();
    let nf = T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(cloud.state(i)) {
            *m += *v / nf;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let x = cloud.state(i);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / (nf - T::one());
            }
        }
    }
    let l = cov
        .cholesky()
        .map_err(|_| Error::Degenerate("sample covariance is singular".into()))?;
    let whitened: Vec<Vec<T>> = (0..n).map(|i| solve_lower(&l, cloud.state(i))).collect();
    let h = nf.powf(-T::one() / T::from_usize_lossy(d + 4));
    let log_det_l: T = (0..d).map(|k| l[(k, k)].ln()).sum();
    let two_pi = T::lit(std::f64::consts::TAU);
    let log_norm = -(T::from_usize_lossy(d) * (T::lit(0.5) * two_pi.ln() + h.ln()) + log_det_l);
    let inv_two_h2 = T::one() / (T::lit(2.0) * h * h);
    let mut total = T::zero();
    for i in 0..n {
        let mut acc = T::zero();
        for j in 0..n {
            if i == j {
                continue;
            }
            let r2: T = whitened[i]
                .iter()
                .zip(&whitened[j])
                .map(|(a, b)| (*a - *b) * (*a - *b))
                .sum();
            acc += (-r2 * inv_two_h2).exp();
        }
        let kde = (log_norm).exp() * acc / (nf - T::one());
        total += cloud.weight(i) / kde;
    }
    Ok(total / nf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{sample_gaussian, GaussianSpec};
    use crate::models::AffineField;

    fn decay() -> AffineField<f64> {
        AffineField::linear(Matrix::from_diag(&[-1.0]))
    }

    #[test]
    fn decay_at_origin() {
        let cloud = WeightedCloud::new(0.0, 1, vec![0.0], vec![0.398_942_280_401_432_7]).unwrap();
        let traj = propagate(&cloud, &decay(), &PropagationSettings::new(vec![0.0, 1.0])).unwrap();
        assert_eq!(traj.clouds[1].state(0)[0], 0.0);
        let expected = std::f64::consts::E * 0.398_942_280_401_432_7;
        assert!((traj.clouds[1].weight(0) - expected).abs() < 1e-12 * expected);
        assert!((expected - 1.084_438).abs() < 1e-5);
    }

    #[test]
    fn settings_validation() {
        assert!(PropagationSettings::new(vec![0.0, 0.0]).validate().is_err());
        assert!(PropagationSettings::<f64>::new(vec![]).validate().is_err());
        assert!(PropagationSettings::new(vec![0.0, 1.0])
            .with_tolerances(0.0, 1e-9)
            .validate()
            .is_err());
        let g = PropagationSettings::uniform_grid(0.0, 3.0, 0.1).unwrap();
        assert_eq!(g.len(), 31);
        assert_eq!(g[30], 3.0);
    }

    #[test]
    fn rejects_bad_start() {
        let cloud = WeightedCloud::new(0.5, 1, vec![0.0], vec![1.0]).unwrap();
        let err =
            propagate(&cloud, &decay(), &PropagationSettings::new(vec![0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
        let cloud = WeightedCloud::new(0.0, 1, vec![0.0], vec![0.0]).unwrap();
        assert!(propagate(&cloud, &decay(), &PropagationSettings::new(vec![0.0, 1.0])).is_err());
    }

    #[test]
    fn semianalytic_decay() {
        let spec = GaussianSpec::<f64>::diagonal(vec![0.0], &[1.0]).unwrap();
        let cloud = sample_gaussian(&spec, 200, 3).unwrap();
        let residual = |rtol: f64| {
            let settings = PropagationSettings::new(vec![0.0, 0.5, 1.0, 2.0])
                .with_tolerances(rtol, rtol * 1e-3);
            let traj = propagate(&cloud, &decay(), &settings).unwrap();
            let inv = |t: f64, x: &[f64]| vec![x[0] * t.exp()];
            verify_semianalytic(&traj, |x: &[f64]| spec.pdf(x), &decay(), Some(inv)).unwrap()
        };
        let reports: Vec<_> = [1e-4, 1e-6, 1e-8].into_iter().map(residual).collect();
        assert_eq!(reports[0].per_time[0], 0.0);
        assert!(reports[1].max_relative_residual <= 1e-5, "{reports:?}");
        for w in reports.windows(2) {
            assert!(
                w[1].max_relative_residual * 4.0 <= w[0].max_relative_residual,
                "{reports:?}"
            );
        }
    }

    #[test]
    fn mass_consistency_detects_scaling() {
        let spec = GaussianSpec::<f64>::diagonal(vec![1.0, -2.0], &[0.5, 2.0]).unwrap();
        let cloud = sample_gaussian(&spec, 2000, 11).unwrap();
        let traj = propagate(
            &cloud,
            &decay_2d(),
            &PropagationSettings::new(vec![0.0, 0.5]),
        )
        .unwrap();
        let stat = mass_consistency(&traj).unwrap();
        for s in &stat {
            assert!((0.9..=1.1).contains(s), "{stat:?}");
        }
        let mut corrupted = traj.clone();
        corrupted.clouds[0] = corrupted.clouds[0].scaled_weights(2.0);
        let stat2 = mass_consistency(&corrupted).unwrap();
        assert!((stat2[0] / stat[0] - 2.0).abs() < 1e-12);
    }

    fn decay_2d() -> AffineField<f64> {
        AffineField::linear(Matrix::from_rows(&[vec![-0.5, 1.0], vec![-1.0, -0.2]]).unwrap())
    }

    #[test]
    fn csv_layout() {
        let cloud = WeightedCloud::new(0.0, 1, vec![0.5, -0.25], vec![0.3, 0.2]).unwrap();
        let traj = propagate(&cloud, &decay(), &PropagationSettings::new(vec![0.0, 1.0])).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,sample,x1,rho,flag");
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[1],
            "0.0000000000000000e0,0,5.0000000000000000e-1,2.9999999999999999e-1,0"
        );
        let back: f64 = lines[3].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(back, traj.clouds[1].state(0)[0]);
    }
}

//! States-only Monte Carlo baseline: the same samples and integrator as the
//! Liouville pipeline without the density coordinate, followed by
//! histogram approximations of the joint density.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::cloud::WeightedCloud;
use crate::density::{bin_index, marginal_on, DensityGrid, Estimator};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSpec;
use crate::liouville::{
    integrate_cloud, propagate_with_workers, CloudTrajectory, PropagationSettings,
};
use crate::models::{EvalFlags, VectorField};
use crate::scalar::Real;

/// Histograms with more cells are refused.
pub const MAX_HISTOGRAM_CELLS: usize = 100_000_000;

/// Sample states at every output time, without densities.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory<T> {
    pub times: Vec<T>,
    pub dim: usize,
    /// `states[k]` is `N × dim`, row-major.
    pub states: Vec<Vec<T>>,
    /// `flags[k][i]` as in [`CloudTrajectory::flags`].
    pub flags: Vec<Vec<EvalFlags>>,
    pub frozen: Vec<bool>,
}

impl<T: Real> StateTrajectory<T> {
    pub fn sample_count(&self) -> usize {
        self.frozen.len()
    }

    /// States at output `k` of the samples that never froze.
    pub fn unfrozen_states(&self, k: usize) -> Vec<T> {
        let d = self.dim;
        self.states[k]
            .chunks(d)
            .zip(&self.frozen)
            .filter(|(_, f)| !**f)
            .flat_map(|(x, _)| x.iter().copied())
            .collect()
    }

    /// Per-dimension `(min, max)` over every output time and unfrozen
    /// sample.
    pub fn transient_bounds(&self) -> Vec<(T, T)> {
        let mut b = vec![(T::infinity(), T::neg_infinity()); self.dim];
        for k in 0..self.times.len() {
            for x in self.unfrozen_states(k).chunks(self.dim) {
                for (j, v) in x.iter().enumerate() {
                    b[j].0 = b[j].0.min(*v);
                    b[j].1 = b[j].1.max(*v);
                }
            }
        }
        b
    }
}

/// Propagates states only, with the step control of
/// [`crate::liouville::propagate`]; the states match a Liouville run
/// bitwise.
pub fn propagate_states_only<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
) -> Result<StateTrajectory<T>> {
    propagate_states_only_with_workers(cloud0, field, settings, None)
}

pub fn propagate_states_only_with_workers<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
    workers: Option<usize>,
) -> Result<StateTrajectory<T>> {
    let tracks = integrate_cloud(cloud0, field, settings, false, workers)?;
    let d = cloud0.dim();
    let nt = settings.t_grid.len();
    let mut states = Vec::with_capacity(nt);
    let mut flags = Vec::with_capacity(nt);
    for k in 0..nt {
        let mut s = Vec::with_capacity(tracks.len() * d);
        for tr in &tracks {
            s.extend_from_slice(&tr.states[k * d..(k + 1) * d]);
        }
        states.push(s);
        flags.push(tracks.iter().map(|tr| tr.flags[k]).collect());
    }
    Ok(StateTrajectory {
        times: settings.t_grid.clone(),
        dim: d,
        states,
        flags,
        frozen: tracks.iter().map(|tr| tr.frozen).collect(),
    })
}

/// Piecewise-constant joint density from sample counts.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramDensity<T> {
    /// Uniform edges per dimension.
    pub edges: Vec<Vec<T>>,
    /// Row-major counts, first dimension slowest.
    pub counts: Vec<u32>,
    /// `counts / (N · cell volume)`.
    pub density: Vec<T>,
    /// Dimensions whose bounds coincide; they get one bin of unit width.
    pub degenerate: Vec<bool>,
    pub total: usize,
}

impl<T: Real> HistogramDensity<T> {
    pub fn shape(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn cell_volume(&self) -> T {
        self.edges
            .iter()
            .map(|e| e[1] - e[0])
            .fold(T::one(), |a, b| a * b)
    }

    /// `Σ density · volume`, which is `Σ counts / N` up to rounding.
    pub fn integral(&self) -> T {
        let vol = self.cell_volume();
        self.density.iter().map(|d| *d * vol).sum()
    }

    /// Marginal over one or two dimensions by summing counts over the rest.
    pub fn marginal(&self, dims: &[usize]) -> Result<DensityGrid<T>> {
        let d = self.edges.len();
        if dims.is_empty()
            || dims.len() > 2
            || dims.iter().any(|&k| k >= d)
            || (dims.len() == 2 && dims[0] == dims[1])
        {
            return Err(Error::invalid(
                "histogram marginal dims",
                "one or two distinct dims in range",
            ));
        }
        let shape = self.shape();
        let out_shape: Vec<usize> = dims.iter().map(|&k| shape[k]).collect();
        let mut sums = vec![0u64; out_shape.iter().product()];
        let mut idx = vec![0; d];
        for &c in &self.counts {
            if c > 0 {
                let mut cell = 0;
                for (j, &k) in dims.iter().enumerate() {
                    cell = cell * out_shape[j] + idx[k];
                }
                sums[cell] += u64::from(c);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        let vol: T = dims
            .iter()
            .map(|&k| self.edges[k][1] - self.edges[k][0])
            .fold(T::one(), |a, b| a * b);
        let n = T::from_usize_lossy(self.total);
        let values = sums
            .iter()
            .map(|s| T::from_usize_lossy(*s as usize) / (n * vol))
            .collect();
        DensityGrid::new(
            dims.to_vec(),
            dims.iter().map(|&k| self.edges[k].clone()).collect(),
            values,
        )
    }
}

/// Histogram of `states` (`N × dim`) with `bins` uniform cells per
/// dimension between the given bounds.
pub fn histogram_density<T: Real>(
    states: &[T],
    dim: usize,
    bins: usize,
    bounds: &[(T, T)],
) -> Result<HistogramDensity<T>> {
    if dim == 0 || states.is_empty() || !states.len().is_multiple_of(dim) {
        return Err(Error::invalid(
            "histogram states",
            "need at least one sample of the given dimension",
        ));
    }
    if bins < 2 {
        return Err(Error::invalid("bins", "need at least 2 per dimension"));
    }
    if bounds.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "histogram bounds",
            expected: dim,
            found: bounds.len(),
        });
    }
    let mut edges = Vec::with_capacity(dim);
    let mut degenerate = Vec::with_capacity(dim);
    for &(lo, hi) in bounds {
        if !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::invalid("histogram bounds", "need finite lo <= hi"));
        }
        if hi == lo {
            let half = T::lit(0.5);
            edges.push(vec![lo - half, lo + half]);
            degenerate.push(true);
        } else {
            edges.push(DensityGrid::uniform_edges(lo, hi, bins));
            degenerate.push(false);
        }
    }
    let shape: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
    let cells = shape
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .unwrap_or(usize::MAX);
    if cells > MAX_HISTOGRAM_CELLS {
        return Err(Error::invalid(
            "bins",
            format!("{cells} cells exceed the limit of {MAX_HISTOGRAM_CELLS}"),
        ));
    }
    let mut counts = vec![0u32; cells];
    let n = states.len() / dim;
    for x in states.chunks(dim) {
        let mut cell = 0;
        for j in 0..dim {
            let i = bin_index(&edges[j], x[j])
                .ok_or_else(|| Error::invalid("histogram states", "sample outside the bounds"))?;
            cell = cell * shape[j] + i;
        }
        counts[cell] += 1;
    }
    let vol = edges
        .iter()
        .map(|e| e[1] - e[0])
        .fold(T::one(), |a, b| a * b);
    let scale = T::one() / (T::from_usize_lossy(n) * vol);
    let density = counts
        .iter()
        .map(|&c| T::from_usize_lossy(c as usize) * scale)
        .collect();
    Ok(HistogramDensity {
        edges,
        counts,
        density,
        degenerate,
        total: n,
    })
}

/// Histograms at every output time over the transient bounds.
pub fn histogram_trajectory<T: Real>(
    traj: &StateTrajectory<T>,
    bins: usize,
) -> Result<Vec<HistogramDensity<T>>> {
    let bounds = traj.transient_bounds();
    (0..traj.times.len())
        .map(|k| histogram_density(&traj.unfrozen_states(k), traj.dim, bins, &bounds))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CompareConfig {
    /// Bins per dimension, one Monte Carlo run each.
    pub resolutions: Vec<usize>,
    /// At least 3; medians are reported.
    pub repetitions: usize,
    pub workers: Option<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![10, 15],
            repetitions: 3,
            workers: None,
        }
    }
}

/// Final-time discrepancy of one state's univariate marginal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalDiscrepancy {
    pub state: usize,
    pub sup: f64,
    pub l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolutionResult {
    pub bins: usize,
    pub cells: usize,
    /// Median seconds for all histograms over the horizon.
    pub histogram_runtime: f64,
    /// Shared state propagation plus histograms.
    pub mc_runtime: f64,
    /// Kernel marginal of the Liouville cloud against the histogram
    /// marginal, on the histogram bins.
    pub marginal_discrepancies: Vec<MarginalDiscrepancy>,
    /// Histogram marginal against the exact marginal at bin centers, when
    /// an exact final density is known.
    pub oracle_sup_error: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub samples: usize,
    pub repetitions: usize,
    pub final_time: f64,
    /// Median seconds of the weighted propagation.
    pub liouville_runtime: f64,
    /// Median seconds of the states-only propagation.
    pub mc_propagation_runtime: f64,
    pub resolutions: Vec<ResolutionResult>,
    /// Max relative error of the final Liouville weights against the exact
    /// density at the sample states.
    pub liouville_oracle_error: Option<f64>,
    pub states_match: bool,
}

/// One row of the raw timing table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub pipeline: String,
    pub bins: Option<usize>,
    pub repetition: usize,
    pub seconds: f64,
}

impl ComparisonReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Writes `pipeline,bins,repetition,seconds`.
pub fn write_timing_csv<W: Write>(rows: &[TimingRow], mut w: W) -> Result<()> {
    writeln!(w, "pipeline,bins,repetition,seconds")?;
    for r in rows {
        let bins = r.bins.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{:.9e}",
            r.pipeline, bins, r.repetition, r.seconds
        )?;
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs both pipelines from the same initial cloud. Timings cover
/// integration and density construction only. The states-only propagation
/// is shared by every resolution, so each Monte Carlo runtime is the median
/// propagation time plus that resolution's median histogram time. `exact`
/// is the true density at the final time, when known.
pub fn compare<T: Real, F: VectorField<T> + ?Sized>(
    cloud0: &WeightedCloud<T>,
    field: &F,
    settings: &PropagationSettings<T>,
    config: &CompareConfig,
    exact: Option<&GaussianSpec<T>>,
) -> Result<(ComparisonReport, Vec<TimingRow>)> {
    if config.repetitions < 3 {
        return Err(Error::invalid("repetitions", "need at least 3"));
    }
    if config.resolutions.is_empty() {
        return Err(Error::invalid("resolutions", "need at least one bin count"));
    }
    let mut rows = Vec::new();
    let mut liouville = None;
    let mut mc = None;
    let mut t_l = Vec::new();
    let mut t_p = Vec::new();
    for rep in 0..config.repetitions {
        let start = Instant::now();
        let traj = propagate_with_workers(cloud0, field, settings, config.workers)?;
        let s = start.elapsed().as_secs_f64();
        t_l.push(s);
        rows.push(TimingRow {
            pipeline: "liouville".into(),
            bins: None,
            repetition: rep,
            seconds: s,
        });
        liouville = Some(traj);

        let start = Instant::now();
        let states = propagate_states_only_with_workers(cloud0, field, settings, config.workers)?;
        let s = start.elapsed().as_secs_f64();
        t_p.push(s);
        rows.push(TimingRow {
            pipeline: "mc_propagation".into(),
            bins: None,
            repetition: rep,
            seconds: s,
        });
        mc = Some(states);
    }
    let liouville: CloudTrajectory<T> = liouville.expect("at least one repetition");
    let mc = mc.expect("at least one repetition");
    let states_match = liouville
        .clouds
        .iter()
        .zip(&mc.states)
        .all(|(c, s)| c.states() == s.as_slice());
    let mc_propagation_runtime = median(t_p);

    let last = mc.times.len() - 1;
    let final_cloud = liouville.last();
    let mut resolutions = Vec::with_capacity(config.resolutions.len());
    for &bins in &config.resolutions {
        let mut times = Vec::with_capacity(config.repetitions);
        let mut hists = None;
        for rep in 0..config.repetitions {
            let start = Instant::now();
            let h = histogram_trajectory(&mc, bins)?;
            let s = start.elapsed().as_secs_f64();
            times.push(s);
            rows.push(TimingRow {
                pipeline: "mc_histogram".into(),
                bins: Some(bins),
                repetition: rep,
                seconds: s,
            });
            hists = Some(h);
        }
        let hists = hists.expect("at least one repetition");
        let h = &hists[last];
        let mut discrepancies = Vec::with_capacity(mc.dim);
        let mut oracle = exact.map(|_| Vec::with_capacity(mc.dim));
        for k in 0..mc.dim {
            let hm = h.marginal(&[k])?;
            let width = hm.edges[0][1] - hm.edges[0][0];
            let lm = if h.degenerate[k] {
                None
            } else {
                marginal_on(final_cloud, &[k], Estimator::Kernel, hm.edges.clone()).ok()
            };
            let (sup, l1) = match &lm {
                Some(lm) => lm.values.iter().zip(&hm.values).fold(
                    (T::zero(), T::zero()),
                    |(s, l), (a, b)| {
                        let d = (*a - *b).abs();
                        (s.max(d), l + d * width)
                    },
                ),
                None => (T::nan(), T::nan()),
            };
            discrepancies.push(MarginalDiscrepancy {
                state: k,
                sup: sup.as_f64(),
                l1: l1.as_f64(),
            });
            if let (Some(spec), Some(o)) = (exact, oracle.as_mut()) {
                let m = spec.marginal(&[k])?;
                let mut worst = T::zero();
                for c in 0..hm.cell_count() {
                    worst = worst.max((hm.values[c] - m.pdf(&hm.cell_center(c))?).abs());
                }
                o.push(worst.as_f64());
            }
        }
        let histogram_runtime = median(times);
        resolutions.push(ResolutionResult {
            bins,
            cells: h.counts.len(),
            histogram_runtime,
            mc_runtime: mc_propagation_runtime + histogram_runtime,
            marginal_discrepancies: discrepancies,
            oracle_sup_error: oracle,
        });
    }
    let liouville_oracle_error = match exact {
        Some(spec) => {
            let mut worst = T::zero();
            for (x, w) in final_cloud.iter() {
                let p = spec.pdf(x)?;
                worst = worst.max((w - p).abs() / p);
            }
            Some(worst.as_f64())
        }
        None => None,
    };
    Ok((
        ComparisonReport {
            samples: cloud0.len(),
            repetitions: config.repetitions,
            final_time: mc.times[last].as_f64(),
            liouville_runtime: median(t_l),
            mc_propagation_runtime,
            resolutions,
            liouville_oracle_error,
            states_match,
        },
        rows,
    ))
}

//! Scenario execution and the run directory.
//!
//! Layout under the output directory:
//! - `scenario.json`: the resolved scenario, which re-runs the same outputs
//! - `manifest.json`: seeds, settings, trims and every artifact
//! - `vehicles/<name>/trajectory.csv`: `t,sample,x1..xd,rho,flag`
//! - `marginals/<name>_<state>.csv`: `t,<state>,density`
//! - `marginals/<name>_<a>_<b>.csv`: `t,<a>,<b>,density`
//! - `collision/<a>_vs_<b>.csv`: `t,p`
//! - `barycenter/measures.csv`: `t,<a>,<b>,mass`
//! - `barycenter/summary.csv`: per-time solver state and mean
//! - `collision/barycenter_vs_<b>.csv`: `t,p`

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::WeightedCloud;
use crate::density::{collision_probability, marginal, DensityGrid, Estimator};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::liouville::{propagate, CloudTrajectory};
use crate::models::EvalFlags;
use crate::transport::{
    barycentric_trajectory, systematic_resample, BarycentricStep, TrajectoryBarycenterOptions,
};

use super::{state_names, BuiltVehicle, Scenario};

/// Which analyses to run after propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sections {
    pub trajectories: bool,
    pub marginals: bool,
    pub collisions: bool,
    pub barycenter: bool,
}

impl Sections {
    pub fn all() -> Self {
        Self {
            trajectories: true,
            marginals: true,
            collisions: true,
            barycenter: true,
        }
    }

    pub fn none() -> Self {
        Self {
            trajectories: false,
            marginals: false,
            collisions: false,
            barycenter: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Thread count; `None` uses every core. Outputs do not depend on it.
    pub workers: Option<usize>,
    pub sections: Sections,
    /// Directory that relative policy paths resolve against.
    pub base_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: None,
            sections: Sections::all(),
            base_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the run directory.
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimRecord {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub residual_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub name: String,
    pub samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim: Option<TrimRecord>,
    pub frozen_samples: usize,
    pub fallback_samples: usize,
    pub extrapolated_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub version: String,
    /// `running`, `complete` or `failed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Resolved scenario file; running it again reproduces every output.
    pub scenario_file: String,
    pub output_times: usize,
    pub rtol: f64,
    pub atol: f64,
    pub vehicles: Vec<VehicleRecord>,
    pub artifacts: Vec<Artifact>,
    /// Output times at which the barycenter stopped before converging.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unconverged_barycenters: Vec<f64>,
}

impl Manifest {
    fn save(&self, dir: &Path) -> Result<()> {
        let file = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Runs every section of `scenario` into `out_dir`.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<Manifest> {
    run_with_options(scenario, out_dir, &RunOptions::default())
}

/// Runs the selected sections. On failure the manifest is still written,
/// with `status = "failed"` and the artifacts produced so far.
pub fn run_with_options(
    scenario: &Scenario,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<Manifest> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("scenario.json"), scenario.to_json_string()?)?;
    let settings = scenario.propagation_settings()?;
    let mut manifest = Manifest {
        scenario: scenario.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: "running".into(),
        error: None,
        scenario_file: "scenario.json".into(),
        output_times: settings.t_grid.len(),
        rtol: settings.rtol,
        atol: settings.atol,
        vehicles: scenario
            .vehicles
            .iter()
            .map(|v| VehicleRecord {
                name: v.name.clone(),
                samples: v.samples,
                seed: v.seed,
                trim: None,
                frozen_samples: 0,
                fallback_samples: 0,
                extrapolated_samples: 0,
            })
            .collect(),
        artifacts: Vec::new(),
        unconverged_barycenters: Vec::new(),
    };
    let result = match options.workers {
        None => execute(scenario, out_dir, options, &mut manifest),
        Some(0) => Err(Error::invalid("workers", "must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            pool.install(|| execute(scenario, out_dir, options, &mut manifest))
        }
    };
    match result {
        Ok(()) => {
            manifest.status = "complete".into();
            manifest.save(out_dir)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.save(out_dir)?;
            Err(e)
        }
    }
}

fn rel(path: &Path, dir: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn execute(
    scenario: &Scenario,
    out: &Path,
    options: &RunOptions,
    manifest: &mut Manifest,
) -> Result<()> {
    let settings = scenario.propagation_settings()?;
    let built: Vec<BuiltVehicle> = scenario
        .vehicles
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.build(
                &format!("vehicles[{k}]"),
                scenario.propagation.divergence,
                options.base_dir.as_deref(),
            )
        })
        .collect::<Result<_>>()?;
    for (rec, b) in manifest.vehicles.iter_mut().zip(&built) {
        rec.trim = b.trim.as_ref().map(|t| TrimRecord {
            x: t.x.clone(),
            u: t.u.clone(),
            residual_norm: t.residual_norm,
        });
    }
    // vehicles concurrently, each over its samples
    let trajs: Vec<CloudTrajectory<f64>> = par_map(built.len(), None, |k| {
        let cloud0 = scenario.vehicles[k].initial_cloud(&built[k].init, scenario.t0)?;
        propagate(&cloud0, &built[k].field, &settings)
    })?
    .into_iter()
    .collect::<Result<_>>()?;
    for (rec, t) in manifest.vehicles.iter_mut().zip(&trajs) {
        rec.frozen_samples = t.frozen_count();
        rec.fallback_samples = t.flagged_count(EvalFlags::POLICY_FALLBACK);
        rec.extrapolated_samples = t.flagged_count(EvalFlags::EXTRAPOLATED);
    }

    if options.sections.trajectories {
        for (v, t) in scenario.vehicles.iter().zip(&trajs) {
            let path = out.join("vehicles").join(&v.name).join("trajectory.csv");
            t.write_csv(create(&path)?)?;
            manifest.artifacts.push(Artifact {
                kind: "trajectory".into(),
                path: rel(&path, out),
                vehicle: Some(v.name.clone()),
            });
        }
    }
    if options.sections.marginals {
        write_marginals(scenario, &trajs, out, manifest)?;
    }
    if options.sections.collisions {
        let dims = scenario.collision_dims();
        let mode = scenario.collision.mode.mode();
        for [a, b] in scenario.collision_pairs() {
            let curve = crate::density::collision_curve(&trajs[a], &trajs[b], dims, mode)?;
            let path = out.join("collision").join(format!(
                "{}_vs_{}.csv",
                scenario.vehicles[a].name, scenario.vehicles[b].name
            ));
            write_curve(&path, &curve)?;
            manifest.artifacts.push(Artifact {
                kind: "collision_curve".into(),
                path: rel(&path, out),
                vehicle: None,
            });
        }
    }
    if options.sections.barycenter && scenario.barycenter.is_some() {
        write_barycenter(scenario, &trajs, out, manifest)?;
    }
    Ok(())
}

fn write_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,p")?;
    for (t, p) in curve {
        writeln!(w, "{t:.16e},{p:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

fn write_grid_rows<W: Write>(w: &mut W, t: f64, grid: &DensityGrid<f64>) -> Result<()> {
    for c in 0..grid.cell_count() {
        let mut line = format!("{t:.16e}");
        for v in grid.cell_center(c) {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push_str(&format!(",{:.16e}", grid.values[c]));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn write_marginals(
    scenario: &Scenario,
    trajs: &[CloudTrajectory<f64>],
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let m = &scenario.marginals;
    let estimator: Estimator = m.estimator.into();
    for (k, (v, traj)) in scenario.vehicles.iter().zip(trajs).enumerate() {
        let names = state_names(&v.model);
        let mut series: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        if m.univariate {
            series.extend((0..names.len()).map(|j| (vec![j], vec![m.bins_1d])));
        }
        series.extend(
            scenario
                .bivariate_pairs(k)
                .into_iter()
                .map(|p| (p.to_vec(), vec![m.bins_2d; 2])),
        );
        for (dims, bins) in series {
            let grids = par_map(traj.clouds.len(), None, |i| {
                marginal(&traj.clouds[i], &dims, estimator, &bins)
            })?;
            let label: Vec<&str> = dims.iter().map(|&j| names[j].as_str()).collect();
            let path = out
                .join("marginals")
                .join(format!("{}_{}.csv", v.name, label.join("_")));
            let mut w = create(&path)?;
            writeln!(w, "t,{},density", label.join(","))?;
            for (cloud, grid) in traj.clouds.iter().zip(grids) {
                match grid {
                    Ok(g) => write_grid_rows(&mut w, cloud.time(), &g)?,
                    // a coordinate without spread has no density to estimate
                    Err(e) if e.is_validation() => {
                        log::warn!(
                            "{} marginal over {label:?} skipped at t = {}: {e}",
                            v.name,
                            cloud.time()
                        );
                    }
                    Err(e) => return Err(e),
                }
            }
            w.flush()?;
            manifest.artifacts.push(Artifact {
                kind: if dims.len() == 1 {
                    "marginal_1d"
                } else {
                    "marginal_2d"
                }
                .into(),
                path: rel(&path, out),
                vehicle: Some(v.name.clone()),
            });
        }
    }
    Ok(())
}

/// The barycenter at each time as a 2D cloud: systematic resample of its
/// measure, weighted by the cell density.
pub(crate) fn barycenter_cloud(
    step: &BarycentricStep<f64>,
    n: usize,
) -> Result<WeightedCloud<f64>> {
    let m = &step.result.measure;
    let pts = systematic_resample(m, n)?;
    let area: f64 = step
        .grid
        .axes
        .iter()
        .map(|a| if a.len() > 1 { a[1] - a[0] } else { 1.0 })
        .product();
    let index: std::collections::HashMap<[u64; 2], f64> = (0..m.len())
        .map(|i| {
            (
                [m.point(i)[0].to_bits(), m.point(i)[1].to_bits()],
                m.masses()[i] / area,
            )
        })
        .collect();
    let weights = pts
        .chunks(2)
        .map(|p| {
            index
                .get(&[p[0].to_bits(), p[1].to_bits()])
                .copied()
                .unwrap_or(0.0)
        })
        .collect();
    WeightedCloud::new(step.time, 2, pts, weights)
}

fn write_barycenter(
    scenario: &Scenario,
    trajs: &[CloudTrajectory<f64>],
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    let cfg = scenario.barycenter.as_ref().expect("checked by caller");
    let inputs: Vec<&CloudTrajectory<f64>> = cfg.inputs.iter().map(|&k| &trajs[k]).collect();
    let lambdas = cfg.lambdas.clone();
    let options = TrajectoryBarycenterOptions {
        bins: cfg.bins,
        eps: cfg.eps,
        max_iter: cfg.max_iter,
        tol: cfg.tol,
    };
    let steps = barycentric_trajectory(&inputs, cfg.dims, &move |_| lambdas.clone(), &options)?;
    manifest.unconverged_barycenters = steps
        .iter()
        .filter(|s| !s.result.converged)
        .map(|s| s.time)
        .collect();

    let names = state_names(&scenario.vehicles[cfg.inputs[0]].model);
    let (na, nb) = (&names[cfg.dims[0]], &names[cfg.dims[1]]);
    let path = out.join("barycenter").join("measures.csv");
    let mut w = create(&path)?;
    writeln!(w, "t,{na},{nb},mass")?;
    for s in &steps {
        let m = &s.result.measure;
        for i in 0..m.len() {
            let p = m.point(i);
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                s.time,
                p[0],
                p[1],
                m.masses()[i]
            )?;
        }
    }
    w.flush()?;
    manifest.artifacts.push(Artifact {
        kind: "barycenter_measures".into(),
        path: rel(&path, out),
        vehicle: None,
    });

    let path = out.join("barycenter").join("summary.csv");
    let mut w = create(&path)?;
    writeln!(w, "t,mean_{na},mean_{nb},iterations,tv_change,converged")?;
    for s in &steps {
        let mean = s.result.measure.mean();
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            s.time, mean[0], mean[1], s.result.iterations, s.result.tv_change, s.result.converged
        )?;
    }
    w.flush()?;
    manifest.artifacts.push(Artifact {
        kind: "barycenter_summary".into(),
        path: rel(&path, out),
        vehicle: None,
    });

    let n = cfg
        .inputs
        .iter()
        .map(|&k| scenario.vehicles[k].samples)
        .max()
        .unwrap_or(1);
    let clouds: Vec<WeightedCloud<f64>> =
        par_map(steps.len(), None, |i| barycenter_cloud(&steps[i], n))?
            .into_iter()
            .collect::<Result<_>>()?;
    let mode = scenario.collision.mode.mode();
    for &b in cfg.versus.as_ref().unwrap_or(&cfg.inputs) {
        let curve = par_map(clouds.len(), None, |i| {
            let other = trajs[b].clouds[i].project(&cfg.dims)?;
            Ok::<_, Error>((
                clouds[i].time(),
                collision_probability(&clouds[i], &other, [0, 1], mode)?,
            ))
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let path = out
            .join("collision")
            .join(format!("barycenter_vs_{}.csv", scenario.vehicles[b].name));
        write_curve(&path, &curve)?;
        manifest.artifacts.push(Artifact {
            kind: "barycenter_collision_curve".into(),
            path: rel(&path, out),
            vehicle: Some(scenario.vehicles[b].name.clone()),
        });
    }
    Ok(())
}

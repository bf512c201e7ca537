//! Scenario files: strict JSON documents describing vehicles, initial
//! beliefs, policies, horizons and the analyses to run.

mod run;

pub use run::{
    run, run_with_options, Artifact, Manifest, RunOptions, Sections, TrimRecord, VehicleRecord,
};

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cloud::WeightedCloud;
use crate::control::{
    find_trim, linearize, ClosedLoop, FeedbackPolicy, MpcConfig, OnlineMpc, OpenLoopSchedule,
    PwaPolicy, Signal, TrimPoint,
};
use crate::density::{CollisionMode, Estimator, SupportKind, DEFAULT_BINS_1D, DEFAULT_BINS_2D};
use crate::error::{Error, Result};
use crate::gaussian::{sample_gaussian, GaussianSpec};
use crate::linalg::Matrix;
use crate::liouville::PropagationSettings;
use crate::models::{DivergenceMode, DynamicParams, KinematicParams, VehicleModel};

/// Bundled scenarios as `(name, JSON text)`.
pub const PRESETS: [(&str, &str); 3] = [
    (
        "kinematic_two_vehicle",
        include_str!("../../presets/kinematic_two_vehicle.json"),
    ),
    (
        "dynamic_two_vehicle",
        include_str!("../../presets/dynamic_two_vehicle.json"),
    ),
    (
        "three_lane_barycenter",
        include_str!("../../presets/three_lane_barycenter.json"),
    ),
];

/// JSON text of a bundled scenario, by name with or without `.json`.
pub fn preset(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    PRESETS
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, text)| *text)
}

fn default_output_dt() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub t0: f64,
    pub tf: f64,
    /// Spacing of the output grid when `output_times` is absent.
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_times: Option<Vec<f64>>,
    #[serde(default)]
    pub propagation: PropagationConfig,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default)]
    pub marginals: MarginalConfig,
    #[serde(default)]
    pub collision: CollisionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barycenter: Option<BarycenterConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    pub rtol: f64,
    pub atol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    pub divergence: DivergenceChoice,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            max_step: None,
            divergence: DivergenceChoice::Analytic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceChoice {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub name: String,
    pub model: ModelSpec,
    pub policy: PolicySpec,
    pub init: InitSpec,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Kinematic {
        l_front: f64,
        l_rear: f64,
    },
    Dynamic(DynamicSpec),
    /// `ẋ = A x + B u + c`
    Affine {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
}

/// Dynamic-bicycle parameters; absent fields take the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cornering_stiffness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gravity: Option<f64>,
}

impl DynamicSpec {
    pub fn params(&self) -> DynamicParams<f64> {
        let d = DynamicParams::default();
        DynamicParams {
            a: self.a.unwrap_or(d.a),
            b: self.b.unwrap_or(d.b),
            c: self.c.unwrap_or(d.c),
            mass: self.mass.unwrap_or(d.mass),
            yaw_inertia: self.yaw_inertia.unwrap_or(d.yaw_inertia),
            cornering_stiffness: self.cornering_stiffness.unwrap_or(d.cornering_stiffness),
            friction: self.friction.unwrap_or(d.friction),
            curvature: self.curvature.unwrap_or(d.curvature),
            gravity: self.gravity.unwrap_or(d.gravity),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// One signal per control input.
    OpenLoop(Vec<SignalSpec>),
    /// Online linear MPC about the velocity-hold trim.
    Mpc(MpcSpec),
    /// Explicit piecewise-affine policy file, relative to the scenario file.
    Pwa { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Constant(f64),
    /// `offset + amplitude · sin(omega · t + phase)`
    Sine {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    Table {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl SignalSpec {
    fn signal(&self) -> Signal<f64> {
        match self {
            SignalSpec::Constant(c) => Signal::Constant(*c),
            SignalSpec::Sine {
                amplitude,
                omega,
                phase,
                offset,
            } => Signal::Sine {
                amplitude: *amplitude,
                omega: *omega,
                phase: *phase,
                offset: *offset,
            },
            SignalSpec::Table { times, values } => Signal::Table {
                times: times.clone(),
                values: values.clone(),
            },
        }
    }
}

/// MPC settings; absent fields take the lane-keeping defaults
/// (`Q = 10 I₆`, `R = I₃`, `S = 0.1 I₃`, 0.1 s sampling, 3 s / 2 s horizons).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    /// Lane center the `e_y` window is built around.
    pub ey_center: f64,
    /// Trim speed; defaults to the initial mean `v_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vx_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ey_halfwidth: Option<f64>,
}

impl MpcSpec {
    pub fn config(&self) -> MpcConfig<f64> {
        let mut c = MpcConfig::for_dynamic(self.ey_center);
        if let Some(q) = &self.q_diag {
            c.q = Matrix::from_diag(q);
        }
        if let Some(r) = &self.r_diag {
            c.r = Matrix::from_diag(r);
        }
        if let Some(s) = &self.s_diag {
            c.s = Matrix::from_diag(s);
        }
        c.dt = self.dt.unwrap_or(c.dt);
        c.t_p = self.t_p.unwrap_or(c.t_p);
        c.t_c = self.t_c.unwrap_or(c.t_c);
        c.ey_halfwidth = self.ey_halfwidth.unwrap_or(c.ey_halfwidth);
        c
    }
}

/// Gaussian initial belief; exactly one of `variances` and `covariance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Histogram,
    Kernel,
}

impl From<EstimatorChoice> for Estimator {
    fn from(e: EstimatorChoice) -> Self {
        match e {
            EstimatorChoice::Histogram => Estimator::Histogram,
            EstimatorChoice::Kernel => Estimator::Kernel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginalConfig {
    pub univariate: bool,
    /// Pairs of state indices; `None` uses `(x, y)` for the kinematic model
    /// and `(s, e_y)` for the dynamic one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bivariate: Option<Vec<[usize; 2]>>,
    pub bins_1d: usize,
    pub bins_2d: usize,
    pub estimator: EstimatorChoice,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        Self {
            univariate: true,
            bivariate: None,
            bins_1d: DEFAULT_BINS_1D,
            bins_2d: DEFAULT_BINS_2D,
            estimator: EstimatorChoice::Kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CollisionModeSpec {
    SupportProduct {
        #[serde(default)]
        kind: SupportChoice,
        #[serde(default)]
        trim_quantile: f64,
    },
    Footprint {
        len_s: f64,
        len_ey: f64,
    },
}

impl Default for CollisionModeSpec {
    fn default() -> Self {
        CollisionModeSpec::SupportProduct {
            kind: SupportChoice::Box,
            trim_quantile: 0.0,
        }
    }
}

impl CollisionModeSpec {
    pub fn mode(&self) -> CollisionMode<f64> {
        match *self {
            CollisionModeSpec::SupportProduct {
                kind,
                trim_quantile,
            } => CollisionMode::SupportProduct {
                kind: match kind {
                    SupportChoice::Box => SupportKind::AxisBox,
                    SupportChoice::Hull => SupportKind::Hull,
                },
                trim_quantile,
            },
            CollisionModeSpec::Footprint { len_s, len_ey } => {
                CollisionMode::Footprint { len_s, len_ey }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportChoice {
    #[default]
    Box,
    Hull,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionConfig {
    /// Projected coordinates; `None` picks the model default as for
    /// bivariate marginals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 2]>,
    pub mode: CollisionModeSpec,
    /// Vehicle index pairs; `None` means every pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
}

fn default_bary_bins() -> [usize; 2] {
    [DEFAULT_BINS_2D; 2]
}

fn default_bary_iter() -> usize {
    10_000
}

fn default_bary_tol() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterConfig {
    /// Vehicle indices whose beliefs are averaged.
    pub inputs: Vec<usize>,
    /// Constant weights, one per input.
    pub lambdas: Vec<f64>,
    /// Projected coordinates, `(s, e_y)` for the dynamic model.
    pub dims: [usize; 2],
    #[serde(default = "default_bary_bins")]
    pub bins: [usize; 2],
    /// `None` uses `1e-2 · grid diameter²` per time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default = "default_bary_iter")]
    pub max_iter: usize,
    #[serde(default = "default_bary_tol")]
    pub tol: f64,
    /// Vehicles to report barycenter collision curves against; defaults to
    /// the inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub versus: Option<Vec<usize>>,
}

/// Names of the state coordinates, used in file names and CSV headers.
pub fn state_names(model: &ModelSpec) -> Vec<String> {
    match model {
        ModelSpec::Kinematic { .. } => ["x", "y", "v", "psi"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ModelSpec::Dynamic(_) => ["v_x", "v_y", "v_psi", "e_psi", "e_y", "s"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ModelSpec::Affine { a, .. } => (1..=a.len()).map(|k| format!("x{k}")).collect(),
    }
}

/// `(x, y)` for the kinematic model, `(s, e_y)` for the dynamic one, the
/// first two coordinates otherwise.
pub fn default_plane(model: &ModelSpec) -> [usize; 2] {
    match model {
        ModelSpec::Dynamic(_) => [5, 4],
        _ => [0, 1],
    }
}

fn state_dim(model: &ModelSpec) -> usize {
    match model {
        ModelSpec::Kinematic { .. } => 4,
        ModelSpec::Dynamic(_) => 6,
        ModelSpec::Affine { a, .. } => a.len(),
    }
}

fn at<T>(path: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Schema { .. } => e,
        other => Error::schema(path, other.to_string()),
    })
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<Matrix<f64>> {
    at(path, Matrix::from_rows(rows))
}

/// Closed-loop field of one vehicle together with its trim, if any.
pub struct BuiltVehicle {
    pub field: ClosedLoop<f64>,
    pub trim: Option<TrimPoint<f64>>,
    pub init: GaussianSpec<f64>,
}

impl VehicleSpec {
    pub fn model(&self, path: &str) -> Result<VehicleModel<f64>> {
        let model = match &self.model {
            ModelSpec::Kinematic { l_front, l_rear } => VehicleModel::Kinematic(KinematicParams {
                l_front: *l_front,
                l_rear: *l_rear,
            }),
            ModelSpec::Dynamic(d) => VehicleModel::Dynamic(d.params()),
            ModelSpec::Affine { a, b, c } => VehicleModel::Affine {
                a: matrix(&format!("{path}.model.affine.a"), a)?,
                b: matrix(&format!("{path}.model.affine.b"), b)?,
                c: c.clone(),
            },
        };
        at(format!("{path}.model"), model.validate())?;
        Ok(model)
    }

    pub fn initial_gaussian(&self, path: &str) -> Result<GaussianSpec<f64>> {
        let p = format!("{path}.init");
        let n = state_dim(&self.model);
        if self.init.mean.len() != n {
            return Err(Error::schema(
                format!("{p}.mean"),
                format!("expected {n} entries, found {}", self.init.mean.len()),
            ));
        }
        match (&self.init.variances, &self.init.covariance) {
            (Some(v), None) => {
                if v.len() != n {
                    return Err(Error::schema(
                        format!("{p}.variances"),
                        format!("expected {n} entries, found {}", v.len()),
                    ));
                }
                if let Some(k) = v.iter().position(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(Error::schema(
                        format!("{p}.variances[{k}]"),
                        "variance must be positive and finite",
                    ));
                }
                at(
                    format!("{p}.variances"),
                    GaussianSpec::diagonal(self.init.mean.clone(), v),
                )
            }
            (None, Some(c)) => {
                let cov = matrix(&format!("{p}.covariance"), c)?;
                at(
                    format!("{p}.covariance"),
                    GaussianSpec::new(self.init.mean.clone(), cov),
                )
            }
            _ => Err(Error::schema(
                p,
                "give exactly one of `variances` and `covariance`",
            )),
        }
    }

    fn policy(
        &self,
        path: &str,
        model: &VehicleModel<f64>,
        init: &GaussianSpec<f64>,
        base: Option<&Path>,
    ) -> Result<(FeedbackPolicy<f64>, Option<TrimPoint<f64>>)> {
        let p = format!("{path}.policy");
        match &self.policy {
            PolicySpec::OpenLoop(signals) => {
                let schedule = at(
                    format!("{p}.open_loop"),
                    OpenLoopSchedule::new(signals.iter().map(SignalSpec::signal).collect()),
                )?;
                Ok((FeedbackPolicy::OpenLoop(schedule), None))
            }
            PolicySpec::Mpc(spec) => {
                let config = spec.config();
                at(
                    format!("{p}.mpc"),
                    config.validate(model.state_dim(), model.control_dim()),
                )?;
                let vx = spec.vx_target.unwrap_or(init.mean()[0]);
                let trim = at(
                    format!("{p}.mpc"),
                    find_trim(model, vx, spec.ey_center, &config),
                )?;
                let lti = at(format!("{p}.mpc"), linearize(model, &trim))?;
                let mpc = at(
                    format!("{p}.mpc"),
                    OnlineMpc::new(lti, config, trim.clone()),
                )?;
                Ok((FeedbackPolicy::OnlineMpc(Box::new(mpc)), Some(trim)))
            }
            PolicySpec::Pwa { path: file } => {
                let full = match base {
                    Some(dir) => dir.join(file),
                    None => Path::new(file).to_path_buf(),
                };
                let pwa = at(format!("{p}.pwa.path"), PwaPolicy::load(&full))?;
                let trim = pwa.trim().cloned();
                Ok((FeedbackPolicy::Pwa(pwa), trim))
            }
        }
    }

    /// Model, policy (trim and MPC synthesis included) and initial belief.
    pub fn build(
        &self,
        path: &str,
        divergence: DivergenceChoice,
        base: Option<&Path>,
    ) -> Result<BuiltVehicle> {
        let model = self.model(path)?;
        let init = self.initial_gaussian(path)?;
        let (policy, trim) = self.policy(path, &model, &init, base)?;
        let mode = match divergence {
            DivergenceChoice::Analytic => DivergenceMode::Analytic,
            DivergenceChoice::FiniteDifference => DivergenceMode::FiniteDifference,
        };
        let field = at(format!("{path}.policy"), ClosedLoop::new(model, policy))?
            .with_divergence_mode(mode);
        Ok(BuiltVehicle { field, trim, init })
    }

    /// `samples` draws from the initial belief at `t0`, weighted by the exact
    /// initial density.
    pub fn initial_cloud(&self, init: &GaussianSpec<f64>, t0: f64) -> Result<WeightedCloud<f64>> {
        let c = sample_gaussian(init, self.samples, self.seed)?;
        WeightedCloud::new(t0, c.dim(), c.states().to_vec(), c.weights().to_vec())
    }
}

impl Scenario {
    pub fn output_times(&self) -> Result<Vec<f64>> {
        match &self.output_times {
            Some(times) => {
                if times.first() != Some(&self.t0) {
                    return Err(Error::schema("output_times[0]", "must equal t0"));
                }
                if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
                    return Err(Error::schema(
                        format!("output_times[{}]", k + 1),
                        "times must increase strictly",
                    ));
                }
                if let Some(k) = times.iter().position(|t| !(*t <= self.tf)) {
                    return Err(Error::schema(
                        format!("output_times[{k}]"),
                        "must lie within [t0, tf]",
                    ));
                }
                Ok(times.clone())
            }
            None => at(
                "output_dt",
                PropagationSettings::uniform_grid(self.t0, self.tf, self.output_dt),
            ),
        }
    }

    pub fn propagation_settings(&self) -> Result<PropagationSettings<f64>> {
        let mut s = PropagationSettings::new(self.output_times()?)
            .with_tolerances(self.propagation.rtol, self.propagation.atol);
        if let Some(h) = self.propagation.max_step {
            s.max_step = h;
        }
        at("propagation", s.validate())?;
        Ok(s)
    }

    pub fn collision_dims(&self) -> [usize; 2] {
        self.collision
            .dims
            .unwrap_or_else(|| default_plane(&self.vehicles[0].model))
    }

    pub fn collision_pairs(&self) -> Vec<[usize; 2]> {
        self.collision.pairs.clone().unwrap_or_else(|| {
            let n = self.vehicles.len();
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| [i, j]))
                .collect()
        })
    }

    pub fn bivariate_pairs(&self, vehicle: usize) -> Vec<[usize; 2]> {
        self.marginals
            .bivariate
            .clone()
            .unwrap_or_else(|| vec![default_plane(&self.vehicles[vehicle].model)])
    }

    /// Checks every field that does not need trim search or MPC synthesis.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::schema("name", "use letters, digits, '_' or '-'"));
        }
        if !(self.t0.is_finite() && self.tf.is_finite() && self.t0 < self.tf) {
            return Err(Error::schema("tf", "need finite t0 < tf"));
        }
        if self.output_times.is_none() && !(self.output_dt > 0.0) {
            return Err(Error::schema("output_dt", "must be positive"));
        }
        self.propagation_settings()?;
        if self.vehicles.is_empty() {
            return Err(Error::schema("vehicles", "need at least one vehicle"));
        }
        let mut names = std::collections::HashSet::new();
        for (k, v) in self.vehicles.iter().enumerate() {
            let p = format!("vehicles[{k}]");
            if v.name.is_empty()
                || !v
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::schema(
                    format!("{p}.name"),
                    "use letters, digits, '_' or '-'",
                ));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::schema(
                    format!("{p}.name"),
                    "vehicle names must be unique",
                ));
            }
            if v.samples == 0 {
                return Err(Error::schema(format!("{p}.samples"), "must be at least 1"));
            }
            let model = v.model(&p)?;
            v.initial_gaussian(&p)?;
            match &v.policy {
                PolicySpec::OpenLoop(signals) => {
                    if signals.len() != model.control_dim() {
                        return Err(Error::schema(
                            format!("{p}.policy.open_loop"),
                            format!(
                                "expected {} signals, found {}",
                                model.control_dim(),
                                signals.len()
                            ),
                        ));
                    }
                    at(
                        format!("{p}.policy.open_loop"),
                        OpenLoopSchedule::new(signals.iter().map(SignalSpec::signal).collect()),
                    )?;
                }
                PolicySpec::Mpc(spec) => {
                    if !matches!(v.model, ModelSpec::Dynamic(_)) {
                        return Err(Error::schema(
                            format!("{p}.policy.mpc"),
                            "MPC needs the dynamic model",
                        ));
                    }
                    at(format!("{p}.policy.mpc"), spec.config().validate(6, 3))?;
                }
                PolicySpec::Pwa { .. } => {}
            }
        }
        let m = &self.marginals;
        if m.bins_1d < 2 || m.bins_2d < 2 {
            return Err(Error::schema("marginals", "need at least 2 bins"));
        }
        for k in 0..self.vehicles.len() {
            let d = state_dim(&self.vehicles[k].model);
            for (j, pair) in self.bivariate_pairs(k).iter().enumerate() {
                if pair[0] == pair[1] || pair.iter().any(|&i| i >= d) {
                    return Err(Error::schema(
                        format!("marginals.bivariate[{j}]"),
                        format!("need distinct indices below {d}"),
                    ));
                }
            }
        }
        let dims = self.collision_dims();
        for (j, pair) in self.collision_pairs().iter().enumerate() {
            for &v in pair {
                if v >= self.vehicles.len() {
                    return Err(Error::schema(
                        format!("collision.pairs[{j}]"),
                        "vehicle index out of range",
                    ));
                }
                if dims
                    .iter()
                    .any(|&i| i >= state_dim(&self.vehicles[v].model))
                {
                    return Err(Error::schema(
                        "collision.dims",
                        "index out of range for a paired vehicle",
                    ));
                }
            }
            if pair[0] == pair[1] {
                return Err(Error::schema(
                    format!("collision.pairs[{j}]"),
                    "a vehicle cannot collide with itself",
                ));
            }
        }
        if dims[0] == dims[1] {
            return Err(Error::schema("collision.dims", "must be distinct"));
        }
        match self.collision.mode {
            CollisionModeSpec::SupportProduct { trim_quantile, .. } => {
                if !(0.0..0.5).contains(&trim_quantile) {
                    return Err(Error::schema(
                        "collision.mode.support_product.trim_quantile",
                        "must lie in [0, 0.5)",
                    ));
                }
            }
            CollisionModeSpec::Footprint { len_s, len_ey } => {
                if !(len_s >= 0.0 && len_ey >= 0.0) {
                    return Err(Error::schema(
                        "collision.mode.footprint",
                        "lengths must be nonnegative",
                    ));
                }
            }
        }
        if let Some(b) = &self.barycenter {
            if b.inputs.is_empty() || b.inputs.len() != b.lambdas.len() {
                return Err(Error::schema(
                    "barycenter.lambdas",
                    "need one weight per input",
                ));
            }
            if let Some(k) = b.lambdas.iter().position(|l| !(*l >= 0.0)) {
                return Err(Error::schema(
                    format!("barycenter.lambdas[{k}]"),
                    "must be nonnegative",
                ));
            }
            if (b.lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::schema("barycenter.lambdas", "must sum to 1"));
            }
            for (j, &v) in b.inputs.iter().chain(b.versus.iter().flatten()).enumerate() {
                if v >= self.vehicles.len() {
                    return Err(Error::schema(
                        format!("barycenter.inputs[{j}]"),
                        "vehicle index out of range",
                    ));
                }
                if b.dims
                    .iter()
                    .any(|&i| i >= state_dim(&self.vehicles[v].model))
                {
                    return Err(Error::schema(
                        "barycenter.dims",
                        "index out of range for an input vehicle",
                    ));
                }
            }
            if b.dims[0] == b.dims[1] || b.bins.iter().any(|&n| n < 2) {
                return Err(Error::schema(
                    "barycenter",
                    "need distinct dims and at least 2 bins",
                ));
            }
            if b.eps.is_some_and(|e| !(e > 0.0)) || !(b.tol > 0.0) || b.max_iter == 0 {
                return Err(Error::schema(
                    "barycenter",
                    "eps, tol and max_iter must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::schema("$", e.to_string()))?;
    scenario_from_value(value)
}

pub fn scenario_from_value(value: Value) -> Result<Scenario> {
    let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(
            if path == "." { "$".to_string() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads a scenario file; a bundled preset name is accepted when no such
/// file exists.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&read_scenario_text(path.as_ref())?)
}

/// Scenario text from a file or, failing that, a preset name.
pub fn read_scenario_text(path: &Path) -> Result<String> {
    if path.exists() {
        return Ok(std::fs::read_to_string(path)?);
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    match preset(name) {
        Some(text) if path.parent().is_none_or(|p| p.as_os_str().is_empty()) => {
            Ok(text.to_string())
        }
        _ => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!(
                "{} does not exist and is not a bundled preset",
                path.display()
            ),
        ))),
    }
}

/// Sets `key = value` in a scenario document. Keys are dot-separated with
/// numeric segments indexing arrays (`vehicles.0.samples`); the value is
/// parsed as JSON and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, key: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut cur = doc;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::schema(key, "empty key segment"));
    }
    for (k, seg) in segments.iter().enumerate() {
        let last = k + 1 == segments.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::schema(key, format!("`{seg}` is not an array index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Error::schema(key, format!("index {idx} out of range for {len} items"))
                })?
            }
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), Value::Null);
                }
                map.entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            _ => {
                return Err(Error::schema(
                    key,
                    format!("`{seg}` is not inside an object or array"),
                ))
            }
        };
    }
    *cur = parsed;
    Ok(())
}

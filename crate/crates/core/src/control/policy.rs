//! Feedback policies and the closed-loop field `g(x, t) = f(x, π(x, t))`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{
    fd_divergence, DivergenceMode, EvalFlags, VectorField, VehicleModel, DIVERGENCE_STEP,
};
use crate::scalar::Real;

use super::mpc::OnlineMpc;
use super::pwa::PwaPolicy;

/// Scalar input signal of time.
#[derive(Clone, Debug, PartialEq)]
pub enum Signal<T> {
    Constant(T),
    /// `offset + amplitude · sin(omega · t + phase)`
    Sine {
        amplitude: T,
        omega: T,
        phase: T,
        offset: T,
    },
    /// Piecewise-linear through `(times[k], values[k])`, held past the ends.
    Table {
        times: Vec<T>,
        values: Vec<T>,
    },
}

impl<T: Real> Signal<T> {
    pub fn validate(&self) -> Result<()> {
        if let Signal::Table { times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(Error::invalid(
                    "signal table",
                    "times and values must be nonempty and of equal length",
                ));
            }
            if times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(
                    "signal table",
                    "times must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn value(&self, t: T) -> T {
        match self {
            Signal::Constant(c) => *c,
            Signal::Sine {
                amplitude,
                omega,
                phase,
                offset,
            } => *offset + *amplitude * (*omega * t + *phase).sin(),
            Signal::Table { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }
}

/// Open-loop schedule `u(t)`, one signal per input.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopSchedule<T> {
    pub signals: Vec<Signal<T>>,
}

impl<T: Real> OpenLoopSchedule<T> {
    pub fn new(signals: Vec<Signal<T>>) -> Result<Self> {
        for s in &signals {
            s.validate()?;
        }
        Ok(Self { signals })
    }

    pub fn at(&self, t: T) -> Vec<T> {
        self.signals.iter().map(|s| s.value(t)).collect()
    }
}

#[derive(Clone, Debug)]
pub enum FeedbackPolicy<T> {
    OpenLoop(OpenLoopSchedule<T>),
    Pwa(PwaPolicy<T>),
    OnlineMpc(Box<OnlineMpc<T>>),
}

/// Control together with `∂u/∂x` (absent for open-loop schedules).
#[derive(Clone, Debug)]
pub struct PolicyOutput<T> {
    pub u: Vec<T>,
    pub flags: EvalFlags,
    pub gain: Option<Matrix<T>>,
}

impl<T: Real> FeedbackPolicy<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            FeedbackPolicy::OpenLoop(s) => s.signals.len(),
            FeedbackPolicy::Pwa(p) => p.input_dim(),
            FeedbackPolicy::OnlineMpc(m) => m.input_dim(),
        }
    }

    /// Required state dimension, if the policy reads the state.
    pub fn state_dim(&self) -> Option<usize> {
        match self {
            FeedbackPolicy::OpenLoop(_) => None,
            FeedbackPolicy::Pwa(p) => Some(p.dim()),
            FeedbackPolicy::OnlineMpc(m) => Some(m.state_dim()),
        }
    }

    pub fn eval(&self, x: &[T], t: T) -> Result<(Vec<T>, EvalFlags)> {
        match self {
            FeedbackPolicy::OpenLoop(s) => Ok((s.at(t), EvalFlags::NONE)),
            FeedbackPolicy::Pwa(p) => {
                let (u, _, flags) = p.eval(x)?;
                Ok((u, flags))
            }
            FeedbackPolicy::OnlineMpc(m) => {
                let out = m.eval(x)?;
                Ok((out.u, out.flags))
            }
        }
    }

    pub fn eval_with_gain(&self, x: &[T], t: T) -> Result<PolicyOutput<T>> {
        match self {
            FeedbackPolicy::OpenLoop(s) => Ok(PolicyOutput {
                u: s.at(t),
                flags: EvalFlags::NONE,
                gain: None,
            }),
            FeedbackPolicy::Pwa(p) => {
                let (u, j, flags) = p.eval(x)?;
                Ok(PolicyOutput {
                    u,
                    flags,
                    gain: Some(p.regions()[j].gain.clone()),
                })
            }
            FeedbackPolicy::OnlineMpc(m) => {
                let out = m.eval_with_gain(x)?;
                Ok(PolicyOutput {
                    u: out.u,
                    flags: out.flags,
                    gain: out.gain,
                })
            }
        }
    }
}

/// `g(x, t) = f(x, π(x, t))`.
///
/// In [`DivergenceMode::Analytic`] the divergence is assembled by the chain
/// rule `tr ∂f/∂x + tr(∂f/∂u · ∂π/∂x)` from the policy's local gain. This is
/// exact for affine plants and open-loop kinematic fields; for the dynamic
/// bicycle the plant Jacobians are central differences. In
/// [`DivergenceMode::FiniteDifference`] the whole closed loop is
/// differenced, which re-solves the policy at every stencil point.
#[derive(Clone, Debug)]
pub struct ClosedLoop<T> {
    model: VehicleModel<T>,
    policy: FeedbackPolicy<T>,
    mode: DivergenceMode,
}

impl<T: Real> ClosedLoop<T> {
    pub fn new(model: VehicleModel<T>, policy: FeedbackPolicy<T>) -> Result<Self> {
        model.validate()?;
        if policy.input_dim() != model.control_dim() {
            return Err(Error::DimensionMismatch {
                what: "policy input",
                expected: model.control_dim(),
                found: policy.input_dim(),
            });
        }
        if let Some(d) = policy.state_dim() {
            if d != model.state_dim() {
                return Err(Error::DimensionMismatch {
                    what: "policy state",
                    expected: model.state_dim(),
                    found: d,
                });
            }
        }
        Ok(Self {
            model,
            policy,
            mode: DivergenceMode::Analytic,
        })
    }

    pub fn with_divergence_mode(mut self, mode: DivergenceMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn model(&self) -> &VehicleModel<T> {
        &self.model
    }

    pub fn policy(&self) -> &FeedbackPolicy<T> {
        &self.policy
    }

    fn chain_rule_divergence(&self, x: &[T], out: &PolicyOutput<T>) -> Result<T> {
        let step = T::lit(DIVERGENCE_STEP);
        match &out.gain {
            None => self.model.state_divergence(x, &out.u, step),
            Some(gain) => {
                let (jx, ju) = self.model.jacobians(x, &out.u, step)?;
                Ok(jx.trace() + ju.matmul(gain).trace())
            }
        }
    }
}

/// Composes a plant with a policy.
pub fn closed_loop_field<T: Real>(
    model: VehicleModel<T>,
    policy: FeedbackPolicy<T>,
) -> Result<ClosedLoop<T>> {
    ClosedLoop::new(model, policy)
}

impl<T: Real> VectorField<T> for ClosedLoop<T> {
    fn dim(&self) -> usize {
        self.model.state_dim()
    }

    fn eval(&self, t: T, x: &[T], out: &mut [T]) -> Result<EvalFlags> {
        let (u, flags) = self.policy.eval(x, t)?;
        self.model.rhs(x, &u, out)?;
        Ok(flags)
    }

    fn analytic_divergence(&self, t: T, x: &[T]) -> Option<Result<T>> {
        if self.mode == DivergenceMode::FiniteDifference {
            return None;
        }
        Some(
            self.policy
                .eval_with_gain(x, t)
                .and_then(|out| self.chain_rule_divergence(x, &out)),
        )
    }

    fn eval_with_divergence(&self, t: T, x: &[T], out: &mut [T]) -> Result<(T, EvalFlags)> {
        if self.mode == DivergenceMode::FiniteDifference {
            let flags = self.eval(t, x, out)?;
            return Ok((fd_divergence(self, t, x, T::lit(DIVERGENCE_STEP))?, flags));
        }
        let pol = self.policy.eval_with_gain(x, t)?;
        self.model.rhs(x, &pol.u, out)?;
        let div = self.chain_rule_divergence(x, &pol)?;
        Ok((div, pol.flags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::pwa::PwaRegion;
    use crate::control::{find_trim, linearize, MpcConfig};
    use crate::models::{divergence, DynamicParams, KinematicParams};

    #[test]
    fn signals() {
        assert_eq!(Signal::Constant(2.0).value(7.0), 2.0);
        let sine = Signal::Sine {
            amplitude: 1.0,
            omega: 1.0,
            phase: 0.0,
            offset: 0.0,
        };
        assert_eq!(sine.value(std::f64::consts::FRAC_PI_2), 1.0);
        let table = Signal::Table {
            times: vec![0.0, 1.0, 3.0],
            values: vec![0.0, 2.0, -2.0],
        };
        assert_eq!(table.value(-1.0), 0.0);
        assert_eq!(table.value(0.5), 1.0);
        assert_eq!(table.value(2.0), 0.0);
        assert_eq!(table.value(9.0), -2.0);
        assert!(OpenLoopSchedule::new(vec![Signal::Table {
            times: vec![1.0, 1.0],
            values: vec![0.0, 0.0]
        }])
        .is_err());
    }

    #[test]
    fn kinematic_open_loop_acceleration() {
        let schedule = OpenLoopSchedule::new(vec![
            Signal::Sine {
                amplitude: 1.0,
                omega: 1.0,
                phase: 0.0,
                offset: 0.0,
            },
            Signal::Constant(0.0),
        ])
        .unwrap();
        let field = ClosedLoop::new(
            VehicleModel::Kinematic(KinematicParams::new(1.0, 1.5).unwrap()),
            FeedbackPolicy::OpenLoop(schedule),
        )
        .unwrap();
        let mut out = [0.0; 4];
        for x in [[0.0, 0.0, 20.0, 0.0], [3.0, -1.0, 12.0, 0.4]] {
            field
                .eval(std::f64::consts::FRAC_PI_2, &x, &mut out)
                .unwrap();
            assert_eq!(out[2], 1.0);
            assert_eq!(
                divergence(&field, 0.3, &x, DivergenceMode::Analytic).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn affine_plant_with_single_region() {
        let a = Matrix::<f64>::from_rows(&[vec![0.0, 1.0], vec![-1.0, -0.2]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let gamma = Matrix::from_rows(&[vec![-0.5, -1.5]]).unwrap();
        let reg = PwaRegion {
            h_mat: Matrix::zeros(0, 2),
            h_vec: vec![],
            gain: gamma.clone(),
            offset: vec![0.3],
        };
        let policy = PwaPolicy::new(2, 1, vec![reg], None).unwrap();
        let field = ClosedLoop::new(
            VehicleModel::Affine {
                a: a.clone(),
                b: b.clone(),
                c: vec![0.0, 0.0],
            },
            FeedbackPolicy::Pwa(policy),
        )
        .unwrap();
        let closed = a.add(&b.matmul(&gamma));
        let x = [0.4, -1.1];
        let mut out = [0.0; 2];
        field.eval(0.0, &x, &mut out).unwrap();
        let expect = closed.mul_vec(&x);
        assert!((out[0] - expect[0]).abs() < 1e-15);
        assert!((out[1] - (expect[1] + 0.3)).abs() < 1e-15);
        let div = divergence(&field, 0.0, &x, DivergenceMode::Analytic).unwrap();
        assert!((div - closed.trace()).abs() < 1e-15);
    }

    fn mpc_field(ey: f64) -> ClosedLoop<f64> {
        let model = VehicleModel::Dynamic(DynamicParams::default());
        let cfg = MpcConfig::for_dynamic(ey);
        let trim = find_trim(&model, 20.0, ey, &cfg).unwrap();
        let lti = linearize(&model, &trim).unwrap();
        let mpc = OnlineMpc::new(lti, cfg, trim).unwrap();
        ClosedLoop::new(model, FeedbackPolicy::OnlineMpc(Box::new(mpc))).unwrap()
    }

    #[test]
    fn mpc_closed_loop_at_trim() {
        let field = mpc_field(-1.85);
        let mut out = [0.0; 6];
        let flags = field
            .eval(0.0, &[20.0, 0.0, 0.0, 0.0, -1.85, 4.0], &mut out)
            .unwrap();
        assert!(flags.is_empty());
        assert!(out[..5].iter().all(|v| v.abs() < 1e-12), "{out:?}");
        assert_eq!(out[5], 20.0);
    }

    #[test]
    fn chain_rule_matches_finite_difference() {
        let field = mpc_field(0.0);
        let fd_field = field
            .clone()
            .with_divergence_mode(DivergenceMode::FiniteDifference);
        let x = [20.2, 0.1, 0.02, 0.004, 0.3, 1.0];
        let mut out = [0.0; 6];
        let (chain, _) = field.eval_with_divergence(0.0, &x, &mut out).unwrap();
        let (fd, _) = fd_field.eval_with_divergence(0.0, &x, &mut out).unwrap();
        assert!(
            (chain - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
            "{chain} vs {fd}"
        );
    }

    #[test]
    fn dimension_checks() {
        let schedule = OpenLoopSchedule::new(vec![Signal::Constant(0.0)]).unwrap();
        let err = ClosedLoop::new(
            VehicleModel::Kinematic(KinematicParams::new(1.0, 1.5).unwrap()),
            FeedbackPolicy::OpenLoop(schedule),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}

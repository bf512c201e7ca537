//! Feedback synthesis and evaluation: trim search, linearization, a dense
//! QP solver, online linear MPC, piecewise-affine policies and the
//! closed-loop field.

pub mod mpc;
pub mod policy;
pub mod pwa;
pub mod qp;
pub mod trim;

pub use mpc::{discretize, MpcConfig, MpcOutput, OnlineMpc};
pub use policy::{
    closed_loop_field, ClosedLoop, FeedbackPolicy, OpenLoopSchedule, PolicyOutput, Signal,
};
pub use pwa::{load_pwa_policy, PwaPolicy, PwaRegion, REGION_TOL};
pub use qp::{qp_solve, DenseQp, QpSolution};
pub use trim::{find_trim, linearize, LtiPair, TrimPoint};

use proptest::prelude::*;

use liouville_reach::control::{FeedbackPolicy, OnlineMpc};
use liouville_reach::models::dynamic::{normal_loads, DynamicParams};
use liouville_reach::models::EvalFlags;
use liouville_reach::scenario::{parse_scenario, preset};

fn ego_mpc() -> OnlineMpc<f64> {
    let s = parse_scenario(preset("dynamic_two_vehicle").unwrap()).unwrap();
    let built = s.vehicles[0]
        .build("vehicles[0]", s.propagation.divergence, None)
        .unwrap();
    match built.field.policy() {
        FeedbackPolicy::OnlineMpc(mpc) => (**mpc).clone(),
        _ => panic!("ego policy is not an online MPC"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    // the parametric QP solution is continuous and piecewise affine, so a
    // 1e-6 probe moves the control by at most the largest gain times 1e-6
    #[test]
    fn mpc_control_is_continuous_at_probe_scale(
        dx in prop::array::uniform6(-1.0f64..1.0),
        dir in prop::array::uniform6(-1.0f64..1.0),
    ) {
        thread_local!(static MPC: OnlineMpc<f64> = ego_mpc());
        MPC.with(|mpc| {
            let cfg = mpc.config();
            let scale = [1.0, 0.3, 0.1, 0.1, 0.9 * cfg.ey_halfwidth, 50.0];
            let x: Vec<f64> = (0..6).map(|k| mpc.trim().x[k] + scale[k] * dx[k]).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let y: Vec<f64> = (0..6).map(|k| x[k] + 1e-6 * dir[k] / norm).collect();
            let (a, b) = (mpc.eval(&x).unwrap(), mpc.eval(&y).unwrap());
            // a fallback switch is a change of problem, not of the QP solution
            prop_assume!(!a.flags.contains(EvalFlags::POLICY_FALLBACK) && !b.flags.contains(EvalFlags::POLICY_FALLBACK));
            let jump = a.u.iter().zip(&b.u).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(jump <= 1e-3, "{jump} at {x:?}");
            Ok(())
        })?;
    }

    #[test]
    fn normal_loads_balance_weight(
        a in 0.5f64..3.0,
        b in 0.5f64..3.0,
        mass in 500.0f64..5000.0,
        gravity in 9.7f64..9.9,
    ) {
        let p = DynamicParams { a, b, mass, gravity, ..DynamicParams::default() };
        let f = normal_loads(&p);
        let total: f64 = f.iter().sum();
        prop_assert!((total - mass * gravity).abs() <= 1e-9 * mass * gravity);
        prop_assert_eq!(f[0], f[1]);
        prop_assert_eq!(f[2], f[3]);
    }
}

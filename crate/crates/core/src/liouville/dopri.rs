//! Dormand–Prince 5(4) with the standard step-size controller, integrating
//! one sample's state and, optionally, its log density.
//!
//! Only the state coordinates enter the error norm, so a run with the weight
//! coordinate takes exactly the same steps as a states-only run and produces
//! bitwise identical states. Steps are clipped to land on every output time.

use crate::error::{Error, Result};
use crate::models::{EvalFlags, VectorField};
use crate::scalar::Real;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct StepSettings<T> {
    pub rtol: T,
    pub atol: T,
    pub max_step: T,
}

/// Output of one sample over the whole grid.
#[derive(Clone, Debug)]
pub struct SampleTrack<T> {
    /// `times × d`, row-major.
    pub states: Vec<T>,
    /// One log density per output time; empty for states-only runs.
    pub log_weights: Vec<T>,
    /// Union of evaluation flags of the accepted steps ending in each
    /// output interval; `FROZEN` from the freeze time on.
    pub flags: Vec<EvalFlags>,
    pub frozen: bool,
    pub accepted: usize,
    pub rejected: usize,
}

struct Stage<T> {
    dx: Vec<T>,
    div: T,
    flags: EvalFlags,
}

fn eval_stage<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    t: T,
    x: &[T],
    with_weight: bool,
    out: &mut Stage<T>,
) -> Result<()> {
    if with_weight {
        let (div, flags) = field.eval_with_divergence(t, x, &mut out.dx)?;
        out.div = div;
        out.flags = flags;
    } else {
        out.flags = field.eval(t, x, &mut out.dx)?;
    }
    if out.dx.iter().any(|v| !v.is_finite()) || !out.div.is_finite() {
        return Err(Error::Degenerate("non-finite field value".into()));
    }
    Ok(())
}

fn error_norm<T: Real>(err: &[T], y: &[T], y_new: &[T], s: &StepSettings<T>) -> T {
    let d = err.len();
    let sum: T = (0..d)
        .map(|i| {
            let sc = s.atol + s.rtol * y[i].abs().max(y_new[i].abs());
            let r = err[i] / sc;
            r * r
        })
        .sum();
    (sum / T::from_usize_lossy(d)).sqrt()
}

/// Hairer–Wanner starting step.
fn initial_step<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    t0: T,
    y0: &[T],
    f0: &[T],
    span: T,
    s: &StepSettings<T>,
) -> T {
    let d = y0.len();
    let scaled = |v: &[T]| {
        let sum: T = (0..d)
            .map(|i| {
                let r = v[i] / (s.atol + s.rtol * y0[i].abs());
                r * r
            })
            .sum();
        (sum / T::from_usize_lossy(d)).sqrt()
    };
    let d0 = scaled(y0);
    let d1 = scaled(f0);
    let mut h0 = if d0 < T::lit(1e-5) || d1 < T::lit(1e-5) {
        T::lit(1e-6)
    } else {
        T::lit(0.01) * d0 / d1
    };
    h0 = h0.min(span).min(s.max_step);
    let y1: Vec<T> = (0..d).map(|i| y0[i] + h0 * f0[i]).collect();
    let mut f1 = vec![T::zero(); d];
    let h1 = match field.eval(t0 + h0, &y1, &mut f1) {
        Ok(_) => {
            let diff: Vec<T> = (0..d).map(|i| (f1[i] - f0[i]) / h0).collect();
            let d2 = scaled(&diff);
            let dmax = d1.max(d2);
            if dmax <= T::lit(1e-15) {
                (h0 * T::lit(1e-3)).max(T::lit(1e-6))
            } else {
                (T::lit(0.01) / dmax).powf(T::lit(0.2))
            }
        }
        Err(_) => h0,
    };
    (T::lit(100.0) * h0).min(h1).min(span).min(s.max_step)
}

/// Integrates `ẋ = g(x, t)` (and `d/dt log ρ = −∇·g` when `log_w0` is
/// given) from `times[0]` through every entry of `times`.
///
/// A field evaluation error rejects the step and shrinks it. When the step
/// falls below the floor `16 ε max(1, |t|)` the sample is frozen at its last
/// accepted state for the remaining output times.
pub fn integrate<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &[T],
    log_w0: Option<T>,
    times: &[T],
    s: &StepSettings<T>,
) -> SampleTrack<T> {
    let d = x0.len();
    let with_weight = log_w0.is_some();
    let nt = times.len();
    let mut track = SampleTrack {
        states: Vec::with_capacity(nt * d),
        log_weights: Vec::with_capacity(if with_weight { nt } else { 0 }),
        flags: Vec::with_capacity(nt),
        frozen: false,
        accepted: 0,
        rejected: 0,
    };
    let mut y = x0.to_vec();
    let mut lw = log_w0.unwrap_or(T::zero());
    let mut t = times[0];
    track.states.extend_from_slice(&y);
    if with_weight {
        track.log_weights.push(lw);
    }
    track.flags.push(EvalFlags::NONE);
    if nt == 1 {
        return track;
    }

    let new_stage = || Stage {
        dx: vec![T::zero(); d],
        div: T::zero(),
        flags: EvalFlags::NONE,
    };
    let mut k: Vec<Stage<T>> = (0..7).map(|_| new_stage()).collect();
    let mut y_stage = vec![T::zero(); d];
    let mut y_new = vec![T::zero(); d];
    let mut err = vec![T::zero(); d];

    let freeze_rest = |track: &mut SampleTrack<T>, y: &[T], lw: T, from: usize| {
        track.frozen = true;
        for _ in from..nt {
            track.states.extend_from_slice(y);
            if with_weight {
                track.log_weights.push(lw);
            }
            track.flags.push(EvalFlags::FROZEN);
        }
    };

    if eval_stage(field, t, &y, with_weight, &mut k[0]).is_err() {
        freeze_rest(&mut track, &y, lw, 1);
        return track;
    }
    let span = times[nt - 1] - t;
    let mut h = initial_step(field, t, &y, &k[0].dx, span, s);
    let mut steps = 0usize;

    for out_idx in 1..nt {
        let target = times[out_idx];
        let mut interval_flags = EvalFlags::NONE;
        while t < target {
            steps += 1;
            let floor = T::epsilon() * T::lit(16.0) * t.abs().max(T::one());
            if h < floor || steps > MAX_STEPS {
                freeze_rest(&mut track, &y, lw, out_idx);
                return track;
            }
            let remaining = target - t;
            let clipped = h >= remaining * (T::one() - T::lit(1e-12));
            let h_try = if clipped {
                remaining
            } else {
                h.min(s.max_step)
            };

            let mut ok = true;
            for st in 1..7 {
                for i in 0..d {
                    let mut acc = T::zero();
                    for (j, stage) in k.iter().enumerate().take(st) {
                        let a = A[st][j];
                        if a != 0.0 {
                            acc += T::lit(a) * stage.dx[i];
                        }
                    }
                    y_stage[i] = y[i] + h_try * acc;
                }
                let (head, tail) = k.split_at_mut(st);
                let _ = head;
                if eval_stage(
                    field,
                    t + T::lit(C[st]) * h_try,
                    &y_stage,
                    with_weight,
                    &mut tail[0],
                )
                .is_err()
                {
                    ok = false;
                    break;
                }
                if st == 6 {
                    y_new.copy_from_slice(&y_stage);
                }
            }
            if !ok {
                track.rejected += 1;
                h = h_try * T::lit(0.25);
                continue;
            }
            for i in 0..d {
                let mut acc = T::zero();
                for (j, stage) in k.iter().enumerate() {
                    if E[j] != 0.0 {
                        acc += T::lit(E[j]) * stage.dx[i];
                    }
                }
                err[i] = h_try * acc;
            }
            let en = error_norm(&err, &y, &y_new, s);
            if en <= T::one() {
                if with_weight {
                    let mut acc = T::zero();
                    for (j, stage) in k.iter().enumerate().take(6) {
                        let b = A[6][j];
                        if b != 0.0 {
                            acc += T::lit(b) * stage.div;
                        }
                    }
                    lw -= h_try * acc;
                }
                for stage in &k[1..] {
                    interval_flags |= stage.flags;
                }
                y.copy_from_slice(&y_new);
                t = if clipped { target } else { t + h_try };
                k.swap(0, 6);
                track.accepted += 1;
                let fac = if en == T::zero() {
                    T::lit(MAX_FACTOR)
                } else {
                    (T::lit(SAFETY) * en.powf(T::lit(-0.2)))
                        .max(T::lit(MIN_FACTOR))
                        .min(T::lit(MAX_FACTOR))
                };
                let proposal = h_try * fac;
                h = if clipped { proposal.max(h) } else { proposal };
            } else {
                track.rejected += 1;
                let fac = (T::lit(SAFETY) * en.powf(T::lit(-0.2)))
                    .max(T::lit(MIN_FACTOR))
                    .min(T::one());
                h = h_try * fac;
            }
        }
        track.states.extend_from_slice(&y);
        if with_weight {
            track.log_weights.push(lw);
        }
        track.flags.push(interval_flags);
    }
    track
}

//! Periodic solutions as fixed points of the period map: winding numbers,
//! zero counts, parity and Newton's method on the shooting defect.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::integrator::{integrate, integrate_variational, Trajectory};
use crate::error::{Error, Result};
use crate::weights::Weight;

/// Accepted points have shooting defect below this.
pub const ACCEPT_TOL: f64 = 1e-8;
const NEWTON_TARGET: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 30;
/// Trajectories closer than this to the origin have no defined winding.
pub const ORIGIN_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
            Parity::None => "none",
        }
    }
}

/// A periodic solution identified by its initial state, with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub lambda: f64,
    pub u0: f64,
    pub v0: f64,
    pub zeros: usize,
    pub winding: usize,
    pub parity: Parity,
    pub linf_u: f64,
    pub linf_du: f64,
    pub h2_norm: f64,
    pub residual: f64,
}

impl OrbitPoint {
    pub fn trivial(lambda: f64) -> Self {
        Self {
            lambda,
            u0: 0.0,
            v0: 0.0,
            zeros: 0,
            winding: 0,
            parity: Parity::None,
            linf_u: 0.0,
            linf_du: 0.0,
            h2_norm: 0.0,
            residual: 0.0,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.u0 == 0.0 && self.v0 == 0.0
    }

    /// Integrates, measures and classifies the solution through
    /// `(u0, v0)`.
    pub fn evaluate(w: &Weight, lambda: f64, u0: f64, v0: f64) -> Result<Self> {
        if u0 == 0.0 && v0 == 0.0 {
            return Ok(Self::trivial(lambda));
        }
        let tr = integrate(w, lambda, u0, v0)?;
        let residual = (tr.end[0] - u0).hypot(tr.end[1] - v0);
        let wr = winding_number(&tr)?;
        let samples = tr.samples();
        let linf_u = samples.iter().fold(0.0f64, |m, s| m.max(s.1.abs()));
        let linf_du = samples.iter().fold(0.0f64, |m, s| m.max(s.2.abs()));
        Ok(Self {
            lambda,
            u0,
            v0,
            zeros: wr.zeros,
            winding: wr.winding,
            parity: detect_parity(w, &tr),
            linf_u,
            linf_du,
            h2_norm: tr.h2_norm(w),
            residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindingReport {
    pub winding: usize,
    pub zeros: usize,
    /// Clockwise angle swept over one period, in turns.
    pub turns: f64,
    pub min_radius: f64,
}

/// Clockwise revolutions of `(u, u')` about the origin, cross-checked
/// against the number of sign changes of `u` on a period.
pub fn winding_number(tr: &Trajectory) -> Result<WindingReport> {
    let mut samples = Vec::with_capacity(4 * tr.steps().len() + 1);
    samples.push((0.0, tr.start[0], tr.start[1]));
    for s in tr.steps() {
        refine_into(
            tr,
            s.t0,
            s.t1(),
            tr.eval(s.t0),
            s.eval(s.t1()),
            &mut samples,
            0,
        );
    }
    let min_radius = samples
        .iter()
        .fold(f64::INFINITY, |m, s| m.min(s.1.hypot(s.2)));
    if min_radius < ORIGIN_GUARD {
        return Err(Error::Degenerate(format!(
            "trajectory passes within {min_radius:e} of the origin"
        )));
    }
    let mut angle = 0.0;
    for pair in samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        angle += wrap(b.2.atan2(b.1) - a.2.atan2(a.1));
    }
    // Close the loop from the end state back to the start state.
    angle += wrap(tr.start[1].atan2(tr.start[0]) - tr.end[1].atan2(tr.end[0]));
    let turns = -angle / (2.0 * PI);
    let winding = turns.round();
    if (turns - winding).abs() > 1e-6 || winding < 0.0 {
        return Err(Error::Degenerate(format!("non-integral winding {turns}")));
    }
    let winding = winding as usize;
    let zeros = locate_zeros(tr, &samples).len();
    if zeros != 2 * winding {
        return Err(Error::Internal(format!(
            "zero count {zeros} inconsistent with winding number {winding}"
        )));
    }
    Ok(WindingReport {
        winding,
        zeros,
        turns,
        min_radius,
    })
}

fn wrap(mut d: f64) -> f64 {
    while d > PI {
        d -= 2.0 * PI;
    }
    while d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Appends samples on `(t0, t1]` so that consecutive angle increments stay
/// below a quarter turn.
fn refine_into(
    tr: &Trajectory,
    t0: f64,
    t1: f64,
    y0: [f64; 2],
    y1: [f64; 2],
    out: &mut Vec<(f64, f64, f64)>,
    depth: usize,
) {
    let d = wrap(y1[1].atan2(y1[0]) - y0[1].atan2(y0[0]));
    if d.abs() < 0.25 * PI || depth > 40 {
        out.push((t1, y1[0], y1[1]));
        return;
    }
    let tm = 0.5 * (t0 + t1);
    let ym = tr.eval(tm);
    refine_into(tr, t0, tm, y0, ym, out, depth + 1);
    refine_into(tr, tm, t1, ym, y1, out, depth + 1);
}

/// Zeros of `u` in `[0, T)`, located by sign changes in a window of length
/// `T` that starts at a sample of maximal `|u|` (so no zero sits on the
/// window boundary) and polished by bisection.
pub fn zeros_of(tr: &Trajectory) -> Vec<f64> {
    let mut samples = Vec::with_capacity(4 * tr.steps().len() + 1);
    samples.push((0.0, tr.start[0], tr.start[1]));
    for s in tr.steps() {
        refine_into(
            tr,
            s.t0,
            s.t1(),
            tr.eval(s.t0),
            s.eval(s.t1()),
            &mut samples,
            0,
        );
    }
    locate_zeros(tr, &samples)
}

fn locate_zeros(tr: &Trajectory, samples: &[(f64, f64, f64)]) -> Vec<f64> {
    let n = samples.len() - 1; // last sample is t = T
    let start = (0..n)
        .max_by(|&i, &j| samples[i].1.abs().total_cmp(&samples[j].1.abs()))
        .unwrap_or(0);
    let mut zeros = Vec::new();
    let mut prev = samples[start];
    for off in 1..=n {
        let cur = samples[(start + off) % n];
        if prev.1 == 0.0 || (prev.1 < 0.0) != (cur.1 < 0.0) && cur.1 != 0.0 {
            let (mut lo, mut hi) = (
                prev.0,
                if cur.0 < prev.0 {
                    cur.0 + tr.period
                } else {
                    cur.0
                },
            );
            let ulo = tr.eval(lo)[0];
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (tr.eval(mid)[0] < 0.0) == (ulo < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            zeros.push((0.5 * (lo + hi)).rem_euclid(tr.period));
        }
        prev = cur;
    }
    zeros.sort_by(f64::total_cmp);
    zeros
}

/// `Even` if `u(T - t) = u(t)`, `Odd` if `u(T - t) = -u(t)` (tolerance
/// `1e-7 |u|_inf`); `None` otherwise or when the weight is not even.
pub fn detect_parity(w: &Weight, tr: &Trajectory) -> Parity {
    if !w.is_even() {
        return Parity::None;
    }
    let t = tr.period;
    let m = 256;
    let vals: Vec<f64> = (0..=m)
        .map(|j| tr.eval(t * j as f64 / m as f64)[0])
        .collect();
    let sup = vals.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if sup == 0.0 {
        return Parity::None;
    }
    let tol = 1e-7 * sup;
    let even = (0..=m).all(|j| (vals[m - j] - vals[j]).abs() <= tol);
    let odd = (0..=m).all(|j| (vals[m - j] + vals[j]).abs() <= tol);
    match (even, odd) {
        (true, false) => Parity::Even,
        (false, true) => Parity::Odd,
        _ => Parity::None,
    }
}

#[derive(Debug, Clone)]
pub struct ShootOutcome {
    pub point: Option<OrbitPoint>,
    pub iterations: usize,
    /// The shooting Jacobian was numerically singular.
    pub near_bifurcation: bool,
    pub last_residual: f64,
}

/// Newton's method at fixed `lambda` on `(u(T) - u0, v(T) - v0)`.
pub fn shoot_newton(w: &Weight, lambda: f64, u0: f64, v0: f64) -> ShootOutcome {
    let fail = |iterations, near_bifurcation, last_residual| ShootOutcome {
        point: None,
        iterations,
        near_bifurcation,
        last_residual,
    };
    if !(lambda.is_finite() && u0.is_finite() && v0.is_finite()) {
        return fail(0, false, f64::NAN);
    }
    if u0 == 0.0 && v0 == 0.0 {
        return ShootOutcome {
            point: Some(OrbitPoint::trivial(lambda)),
            iterations: 0,
            near_bifurcation: false,
            last_residual: 0.0,
        };
    }
    let (mut u, mut v) = (u0, v0);
    let mut res = f64::INFINITY;
    let mut near_bifurcation = false;
    for iter in 0..=NEWTON_MAX_ITER {
        let m = match integrate_variational(w, lambda, u, v) {
            Ok(m) => m,
            Err(_) => return fail(iter, near_bifurcation, res),
        };
        let (g1, g2) = (m.end[0] - u, m.end[1] - v);
        res = g1.hypot(g2);
        let scale = 1.0 + u.hypot(v);
        if res < NEWTON_TARGET * scale || (iter == NEWTON_MAX_ITER && res < ACCEPT_TOL) {
            return match OrbitPoint::evaluate(w, lambda, u, v) {
                Ok(p) if p.residual < ACCEPT_TOL => ShootOutcome {
                    point: Some(p),
                    iterations: iter,
                    near_bifurcation,
                    last_residual: p.residual,
                },
                _ => fail(iter, near_bifurcation, res),
            };
        }
        if iter == NEWTON_MAX_ITER {
            break;
        }
        let j11 = m.phi[0][0] - 1.0;
        let j12 = m.phi[0][1];
        let j21 = m.phi[1][0];
        let j22 = m.phi[1][1] - 1.0;
        let det = j11 * j22 - j12 * j21;
        let jn = j11.abs().max(j12.abs()).max(j21.abs()).max(j22.abs());
        let (du, dv) = if det.abs() > 1e-10 * jn * jn {
            ((j22 * g1 - j12 * g2) / det, (-j21 * g1 + j11 * g2) / det)
        } else {
            // Non-isolated solutions (time shifts of an autonomous orbit,
            // linear resonance): minimum-norm step.
            near_bifurcation = true;
            let jac = Matrix2::new(j11, j12, j21, j22);
            let Ok(pinv) = jac
                .svd(true, true)
                .pseudo_inverse(1e-10 * jn.max(f64::MIN_POSITIVE))
            else {
                return fail(iter, true, res);
            };
            let d = pinv * Vector2::new(g1, g2);
            if d.norm() == 0.0 {
                return fail(iter, true, res);
            }
            (d[0], d[1])
        };
        // Limit wild steps far from the basin.
        let step = du.hypot(dv);
        let cap = 0.5 * scale;
        let damp = if step > cap { cap / step } else { 1.0 };
        u -= damp * du;
        v -= damp * dv;
        if u == 0.0 && v == 0.0 {
            return fail(iter, false, res);
        }
    }
    fail(NEWTON_MAX_ITER, near_bifurcation, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonomous::AutonomousProblem;
    use crate::weights::Segment;

    fn zero_weight() -> Weight {
        Weight::new(PI, vec![0.0, PI], vec![Segment::Zero]).unwrap()
    }

    #[test]
    fn linear_winding_and_zeros() {
        for (lambda, k) in [(4.0, 1usize), (16.0, 2)] {
            let tr = integrate(&zero_weight(), lambda, 1.0, 0.0).unwrap();
            let r = winding_number(&tr).unwrap();
            assert_eq!((r.winding, r.zeros), (k, 2 * k));
            // Start on a zero of u.
            let tr = integrate(&zero_weight(), lambda, 0.0, 1.0).unwrap();
            let r = winding_number(&tr).unwrap();
            assert_eq!((r.winding, r.zeros), (k, 2 * k));
        }
    }

    #[test]
    fn autonomous_orbit_winding() {
        let w = Weight::constant(PI, 1.0).unwrap();
        let p = AutonomousProblem::new(1.0, 0.5, PI).unwrap();
        let orbit = p.find_orbit(3).unwrap().unwrap();
        let (u0, v0) = orbit.initial_state();
        let pt = OrbitPoint::evaluate(&w, 0.5, u0, v0).unwrap();
        assert_eq!(pt.winding, 3);
        assert_eq!(pt.zeros, 6);
        assert!(pt.residual < 1e-7);
    }

    #[test]
    fn trivial_start_is_returned() {
        let w = Weight::indicators(PI, &[(0.0, PI / 4.0, 1.0)]).unwrap();
        let out = shoot_newton(&w, 1.3, 0.0, 0.0);
        assert_eq!(out.iterations, 0);
        assert!(out.point.unwrap().is_trivial());
    }

    #[test]
    fn recovers_perturbed_autonomous_orbit() {
        let w = Weight::constant(PI, 1.0).unwrap();
        let p = AutonomousProblem::new(1.0, 0.0, PI).unwrap();
        let orbit = p.find_orbit(1).unwrap().unwrap();
        let (u0, v0) = orbit.initial_state();
        let out = shoot_newton(&w, 0.0, u0 * 1.05, 0.0);
        let pt = out.point.expect("converged");
        // Any point on the orbit is a solution; compare energies and the
        // winding instead of raw coordinates.
        assert!((p.energy(pt.u0, pt.v0) - p.energy(u0, v0)).abs() < 1e-8);
        assert_eq!(pt.winding, 1);
    }

    #[test]
    fn parity_of_symmetric_solutions() {
        let w = Weight::indicators(PI, &[(0.3, 0.5, 1.0), (PI - 0.5, PI - 0.3, 1.0)]).unwrap();
        let tr = integrate(&zero_weight(), 4.0, 1.0, 0.0).unwrap();
        assert_eq!(detect_parity(&w, &tr), Parity::Even);
        let tr = integrate(&zero_weight(), 4.0, 0.0, 1.0).unwrap();
        assert_eq!(detect_parity(&w, &tr), Parity::Odd);
        let uneven =
            Weight::indicators(PI, &[(0.3, 0.5, 1.0), (PI - 0.5, PI - 0.3, 0.95)]).unwrap();
        assert_eq!(detect_parity(&uneven, &tr), Parity::None);
    }
}

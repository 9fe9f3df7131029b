//! Dormand–Prince 5(4) with Hairer's dense output, restarted at every
//! breakpoint of the weight so that each step sees a smooth right-hand side.

use crate::error::{Error, Result};
use crate::quad::GaussRule;
use crate::weights::Weight;

/// Local error tolerance (absolute and relative).
pub const LOCAL_TOL: f64 = 1e-12;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub segment: usize,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn eval(&self, t: f64) -> [f64; N] {
        let th = ((t - self.t0) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - th;
        let r = &self.rcont;
        std::array::from_fn(|i| {
            r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
        })
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// Integrates `y' = f(t, y)` over `[t0, t1]`, appending dense steps when
/// requested. Returns the final state and the last accepted step size.
#[allow(clippy::too_many_arguments)]
pub fn dopri_segment<const N: usize, F>(
    f: &mut F,
    segment: usize,
    t0: f64,
    t1: f64,
    y0: [f64; N],
    tol: f64,
    h_guess: f64,
    mut dense: Option<&mut Vec<DenseStep<N>>>,
) -> Result<([f64; N], f64)>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let len = t1 - t0;
    if len <= 0.0 {
        return Ok((y0, h_guess));
    }
    let h_min = 1e-14 * len.abs().max(1.0);
    let mut t = t0;
    let mut y = y0;
    let mut h = h_guess.min(len);
    let mut k1 = f(t, &y);
    let mut last_h = h;
    let mut steps = 0usize;
    while t < t1 {
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::Integration(format!(
                "state became non-finite at t = {t}"
            )));
        }
        let last = t + h >= t1 - 1e-15 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }
        let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = axpy(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let t_new = if last { t1 } else { t + h };
        let k7 = f(t_new, &y_new);
        let mut err = 0.0;
        for i in 0..N {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = tol + tol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            if h < h_min {
                return Err(Error::Integration(format!(
                    "step size underflow at t = {t}"
                )));
            }
            continue;
        }
        if err <= 1.0 {
            if let Some(out) = dense.as_deref_mut() {
                let mut rcont = [[0.0; N]; 5];
                for i in 0..N {
                    let dy = y_new[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    rcont[0][i] = y[i];
                    rcont[1][i] = dy;
                    rcont[2][i] = bspl;
                    rcont[3][i] = dy - h * k7[i] - bspl;
                    rcont[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                out.push(DenseStep {
                    t0: t,
                    h: t_new - t,
                    segment,
                    rcont,
                });
            }
            last_h = h;
            t = t_new;
            y = y_new;
            k1 = k7;
            steps += 1;
            if steps > 2_000_000 {
                return Err(Error::Integration("step budget exhausted".into()));
            }
            let fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            h *= fac;
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            h *= fac;
            if h < h_min {
                return Err(Error::Integration(format!(
                    "step size underflow at t = {t}"
                )));
            }
        }
    }
    Ok((y, last_h))
}

/// Planar vector field `u' = v`, `v' = -lambda u - a(t) u^3` on one
/// segment with weight value `a`.
#[inline]
fn planar(lambda: f64, a: f64, y: &[f64; 2]) -> [f64; 2] {
    [y[1], -lambda * y[0] - a * y[0] * y[0] * y[0]]
}

/// Dense solution of the planar system over one period.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub period: f64,
    pub lambda: f64,
    pub start: [f64; 2],
    pub end: [f64; 2],
    steps: Vec<DenseStep<2>>,
}

impl Trajectory {
    pub fn steps(&self) -> &[DenseStep<2>] {
        &self.steps
    }

    /// State at `t`, extended periodically outside `[0, T]`.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let t = if (0.0..=self.period).contains(&t) {
            t
        } else {
            t.rem_euclid(self.period)
        };
        let idx = self
            .steps
            .partition_point(|s| s.t1() < t)
            .min(self.steps.len() - 1);
        self.steps[idx].eval(t)
    }

    /// Samples `(t, u, v)` at the step nodes and three interior points per
    /// step.
    pub fn samples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(4 * self.steps.len() + 1);
        out.push((0.0, self.start[0], self.start[1]));
        for s in &self.steps {
            for j in 1..=4 {
                let t = s.t0 + s.h * j as f64 / 4.0;
                let y = s.eval(t);
                out.push((t, y[0], y[1]));
            }
        }
        out
    }

    /// `(int u^2 + u'^2 + u''^2)^{1/2}` with `u'' = -lambda u - a u^3`.
    pub fn h2_norm(&self, w: &Weight) -> f64 {
        let rule = GaussRule::new(6);
        let mut acc = 0.0;
        for s in &self.steps {
            acc += rule.integrate(s.t0, s.t1(), |t| {
                let y = s.eval(t);
                let a = w.eval_in_segment(s.segment, t);
                let upp = -self.lambda * y[0] - a * y[0].powi(3);
                y[0] * y[0] + y[1] * y[1] + upp * upp
            });
        }
        acc.sqrt()
    }
}

fn initial_step(w: &Weight) -> f64 {
    1e-3 * w.period()
}

/// One period of the planar system from `(u0, v0)` at `t = 0`.
pub fn integrate(w: &Weight, lambda: f64, u0: f64, v0: f64) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut y = [u0, v0];
    let mut h = initial_step(w);
    let bp = w.breakpoints();
    for i in 0..w.segments().len() {
        let mut rhs = |t: f64, y: &[f64; 2]| planar(lambda, w.eval_in_segment(i, t), y);
        let (y1, h1) = dopri_segment(
            &mut rhs,
            i,
            bp[i],
            bp[i + 1],
            y,
            LOCAL_TOL,
            h,
            Some(&mut steps),
        )?;
        y = y1;
        h = h1;
    }
    Ok(Trajectory {
        period: w.period(),
        lambda,
        start: [u0, v0],
        end: y,
        steps,
    })
}

/// Period map with its derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Monodromy {
    pub end: [f64; 2],
    /// `d(u(T), v(T)) / d(u0, v0)`, row-major.
    pub phi: [[f64; 2]; 2],
    /// `d(u(T), v(T)) / d lambda`.
    pub d_lambda: [f64; 2],
}

/// Period map together with the variational equations in the initial state
/// and in `lambda`.
pub fn integrate_variational(w: &Weight, lambda: f64, u0: f64, v0: f64) -> Result<Monodromy> {
    // (u, v, Phi11, Phi21, Phi12, Phi22, p, q)
    let mut y = [u0, v0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut h = initial_step(w);
    let bp = w.breakpoints();
    for i in 0..w.segments().len() {
        let mut rhs = |t: f64, y: &[f64; 8]| {
            let a = w.eval_in_segment(i, t);
            let u = y[0];
            let m = -lambda - 3.0 * a * u * u;
            [
                y[1],
                -lambda * u - a * u * u * u,
                y[3],
                m * y[2],
                y[5],
                m * y[4],
                y[7],
                m * y[6] - u,
            ]
        };
        let (y1, h1) = dopri_segment(&mut rhs, i, bp[i], bp[i + 1], y, LOCAL_TOL, h, None)?;
        y = y1;
        h = h1;
    }
    Ok(Monodromy {
        end: [y[0], y[1]],
        phi: [[y[2], y[4]], [y[3], y[5]]],
        d_lambda: [y[6], y[7]],
    })
}

//! Reduced bifurcation equations at `(sigma_k, 0)`: cubic coefficients,
//! the reduced model, its nontrivial roots and the resulting local
//! predictors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::brent;
use crate::spectral::sigma;
use crate::weights::{Trig, TrigProduct, Weight};

/// Relative tolerance of the equality predicates in [`classify_structure`].
pub const STRUCTURE_TOL: f64 = 1e-9;
/// Roots with `|det| <= REGULAR_DET` are flagged singular.
pub const REGULAR_DET: f64 = 1e-8;
const ROOT_TOL: f64 = 1e-12;
const PAIRING_TOL: f64 = 1e-12;

/// `L2` pairings of `a(t)` with quartic products of the normalized
/// eigenfunctions `phi_k = sqrt(2/T) cos`, `psi_k = sqrt(2/T) sin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsCoefficients {
    pub k: usize,
    pub period: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl LsCoefficients {
    pub fn compute(w: &Weight, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("coefficients are defined for k >= 1".into()));
        }
        w.require_hloc()?;
        let period = w.period();
        let k32 = k as u32;
        let norm = (2.0 / period).powi(2);
        let pair = |cos_count: usize| -> Result<f64> {
            let mut f = vec![(Trig::Cos, k32); cos_count];
            f.extend(std::iter::repeat((Trig::Sin, k32)).take(4 - cos_count));
            Ok(w.integrate_against(&TrigProduct::new(norm, &f)?))
        };
        // Same integrands with the factors listed in the other order.
        let pair_rev = |cos_count: usize| -> Result<f64> {
            let mut f = vec![(Trig::Sin, k32); 4 - cos_count];
            f.extend(std::iter::repeat((Trig::Cos, k32)).take(cos_count));
            Ok(w.integrate_against(&TrigProduct::new(norm, &f)?))
        };
        let a = pair(4)?;
        let (b, b2) = (pair(3)?, pair_rev(3)?);
        let (c, c2) = (pair(2)?, pair_rev(2)?);
        let (d, d2) = (pair(1)?, pair_rev(1)?);
        let e = pair(0)?;
        let scale = a.abs().max(e.abs()).max(1.0);
        for (name, x, y) in [("b", b, b2), ("c", c, c2), ("d", d, d2)] {
            if (x - y).abs() > PAIRING_TOL * scale {
                return Err(Error::Internal(format!(
                    "duplicate pairings for {name}_{k} disagree: {x} vs {y}"
                )));
            }
        }
        Ok(Self {
            k,
            period,
            a,
            b,
            c,
            d,
            e,
        })
    }

    pub fn from_values(k: usize, period: f64, [a, b, c, d, e]: [f64; 5]) -> Self {
        Self {
            k,
            period,
            a,
            b,
            c,
            d,
            e,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }

    pub fn sigma(&self) -> f64 {
        sigma(self.period, self.k, 1)
    }

    /// Cubic part of the reduced map with all five coefficients.
    pub fn cubic_full(&self, x: f64, y: f64) -> (f64, f64) {
        let Self { a, b, c, d, e, .. } = *self;
        (
            a * x * x * x + 3.0 * b * x * x * y + 3.0 * c * x * y * y + d * y * y * y,
            b * x * x * x + 3.0 * c * x * x * y + 3.0 * d * x * y * y + e * y * y * y,
        )
    }

    fn cubic_full_jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let Self { a, b, c, d, e, .. } = *self;
        [
            [
                3.0 * a * x * x + 6.0 * b * x * y + 3.0 * c * y * y,
                3.0 * b * x * x + 6.0 * c * x * y + 3.0 * d * y * y,
            ],
            [
                3.0 * b * x * x + 6.0 * c * x * y + 3.0 * d * y * y,
                3.0 * c * x * x + 6.0 * d * x * y + 3.0 * e * y * y,
            ],
        ]
    }

    /// Truncated reduced map `h(lambda, x1, x2)` (remainder dropped).
    pub fn reduced_h(&self, lambda: f64, x1: f64, x2: f64) -> (f64, f64) {
        let s = lambda - self.sigma();
        let (c1, c2) = self.cubic_full(x1, x2);
        (s * x1 + c1, s * x2 + c2)
    }

    pub fn reduced_h_jacobian(&self, lambda: f64, x1: f64, x2: f64) -> [[f64; 2]; 2] {
        let s = lambda - self.sigma();
        let mut j = self.cubic_full_jacobian(x1, x2);
        j[0][0] += s;
        j[1][1] += s;
        j
    }

    /// Scaled root system `C(z, w) - (z, w)`.
    pub fn scaled_system(&self, z: f64, w: f64) -> (f64, f64) {
        let (c1, c2) = self.cubic_full(z, w);
        (c1 - z, c2 - w)
    }

    fn scaled_det(&self, z: f64, w: f64) -> f64 {
        let j = self.cubic_full_jacobian(z, w);
        (j[0][0] - 1.0) * (j[1][1] - 1.0) - j[0][1] * j[1][0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// `a = 3c`, `b = d`, `a = e`, `b != 0`.
    pub h: [bool; 4],
    pub satisfies_h: bool,
    /// `(a - 3c)(ae - 9c^2) > 0`.
    pub satisfies_8branch: bool,
    /// `b = d = 0` within tolerance.
    pub even_type: bool,
    /// `(a + 2b, a - 2b)`.
    pub subcrit_margins: (f64, f64),
    pub tolerance: f64,
}

pub fn classify_structure(c: &LsCoefficients) -> StructureReport {
    let scale = c.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = STRUCTURE_TOL * scale;
    let h = [
        (c.a - 3.0 * c.c).abs() <= tol,
        (c.b - c.d).abs() <= tol,
        (c.a - c.e).abs() <= tol,
        c.b.abs() > STRUCTURE_TOL * c.a.abs(),
    ];
    StructureReport {
        h,
        satisfies_h: h.iter().all(|&x| x),
        satisfies_8branch: {
            let p = c.a - 3.0 * c.c;
            let q = c.a * c.e - 9.0 * c.c * c.c;
            p.abs() > tol && q.abs() > tol * scale && p * q > 0.0
        },
        even_type: c.b.abs() <= tol && c.d.abs() <= tol,
        subcrit_margins: (c.a + 2.0 * c.b, c.a - 2.0 * c.b),
        tolerance: STRUCTURE_TOL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CubicFamily {
    /// Four branches under the relations `a = 3c = e`, `b = d != 0`.
    FourBranchH,
    /// Eight branches for `b = d = 0` and `(a - 3c)(ae - 9c^2) > 0`.
    EightBranchEven,
    /// All five coefficients, no structural assumption.
    General,
}

/// Cubic part of the reduced map in the simplified form of `family`.
pub fn cubic_map(c: &LsCoefficients, family: CubicFamily, x: f64, y: f64) -> Result<(f64, f64)> {
    let report = classify_structure(c);
    match family {
        CubicFamily::FourBranchH => {
            if !report.satisfies_h {
                return Err(Error::Unsupported(format!(
                    "four-branch cubic requested but relations fail: {:?}",
                    report.h
                )));
            }
            let (a, b) = (c.a, c.b);
            Ok((
                a * x * x * x + 3.0 * b * x * x * y + a * x * y * y + b * y * y * y,
                b * x * x * x + a * x * x * y + 3.0 * b * x * y * y + a * y * y * y,
            ))
        }
        CubicFamily::EightBranchEven => {
            if !report.even_type {
                return Err(Error::Unsupported(format!(
                    "even cubic requested but b = {}, d = {}",
                    c.b, c.d
                )));
            }
            Ok((
                x * (c.a * x * x + 3.0 * c.c * y * y),
                y * (3.0 * c.c * x * x + c.e * y * y),
            ))
        }
        CubicFamily::General => Ok(c.cubic_full(x, y)),
    }
}

/// Minimum of `|C(x, y)|` over the unit circle, by sampling and golden
/// section refinement.
pub fn cubic_min_on_circle(c: &LsCoefficients, family: CubicFamily) -> Result<f64> {
    let f = |t: f64| -> Result<f64> {
        let (p, q) = cubic_map(c, family, t.cos(), t.sin())?;
        Ok(p.hypot(q))
    };
    let n = 720;
    let h = 2.0 * PI / n as f64;
    let mut best = (f64::INFINITY, 0.0);
    for j in 0..n {
        let t = j as f64 * h;
        let v = f(t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    let (mut lo, mut hi) = (best.1 - h, best.1 + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1)? < f(m2)? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Ok(best.0.min(f(0.5 * (lo + hi))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalRoot {
    /// 1-based index in the conventional ordering of the family.
    pub index: usize,
    pub z: f64,
    pub w: f64,
    pub regular: bool,
    pub det: f64,
    pub residual: f64,
    pub family: CubicFamily,
}

fn polish(c: &LsCoefficients, mut z: f64, mut w: f64) -> (f64, f64, f64) {
    for _ in 0..50 {
        let (f1, f2) = c.scaled_system(z, w);
        if f1.hypot(f2) < 1e-15 * (1.0 + z.hypot(w)) {
            break;
        }
        let j = c.cubic_full_jacobian(z, w);
        let (j11, j12, j21, j22) = (j[0][0] - 1.0, j[0][1], j[1][0], j[1][1] - 1.0);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dz = (j22 * f1 - j12 * f2) / det;
        let dw = (-j21 * f1 + j11 * f2) / det;
        z -= dz;
        w -= dw;
        if dz.hypot(dw) < 1e-16 * (1.0 + z.hypot(w)) {
            break;
        }
    }
    let (f1, f2) = c.scaled_system(z, w);
    (z, w, f1.hypot(f2))
}

fn finish(
    c: &LsCoefficients,
    family: CubicFamily,
    guesses: &[(f64, f64)],
) -> Result<Vec<LocalRoot>> {
    guesses
        .iter()
        .enumerate()
        .map(|(i, &(z0, w0))| {
            let (z, w, residual) = polish(c, z0, w0);
            if !(residual < ROOT_TOL) {
                return Err(Error::Internal(format!(
                    "root {} did not polish: residual {residual:e}",
                    i + 1
                )));
            }
            let det = c.scaled_det(z, w);
            Ok(LocalRoot {
                index: i + 1,
                z,
                w,
                regular: det.abs() > REGULAR_DET,
                det,
                residual,
                family,
            })
        })
        .collect()
}

fn h_family_guesses(c: &LsCoefficients) -> Result<Vec<(f64, f64)>> {
    let (p, m) = (c.a + 2.0 * c.b, c.a - 2.0 * c.b);
    if !(p > 0.0 && m > 0.0) {
        return Err(Error::Unsupported(format!(
            "subcriticality margins not positive: a+2b = {p}, a-2b = {m}"
        )));
    }
    let r1 = 1.0 / (2.0 * p).sqrt();
    let r3 = 1.0 / (2.0 * m).sqrt();
    Ok(vec![(r1, r1), (-r1, -r1), (r3, -r3), (-r3, r3)])
}

/// Closed-form roots of the even-type system, using only `a`, `c`, `e`.
fn even_family_guesses(c: &LsCoefficients) -> Result<Vec<(f64, f64)>> {
    let det = c.a * c.e - 9.0 * c.c * c.c;
    let z2 = (c.e - 3.0 * c.c) / det;
    let w2 = (c.a - 3.0 * c.c) / det;
    if !(c.a > 0.0 && c.e > 0.0 && z2 > 0.0 && w2 > 0.0) {
        return Err(Error::Unsupported(
            "mixed roots of the even-type system are not real".into(),
        ));
    }
    let (ze, wa) = (1.0 / c.e.sqrt(), 1.0 / c.a.sqrt());
    let (z5, w5) = (z2.sqrt(), w2.sqrt());
    Ok(vec![
        (0.0, ze),
        (0.0, -ze),
        (wa, 0.0),
        (-wa, 0.0),
        (z5, w5),
        (-z5, -w5),
        (z5, -w5),
        (-z5, w5),
    ])
}

/// Nontrivial roots of `C(z, w) = (z, w)` for the four-branch or the
/// even eight-branch structure, from closed forms polished by Newton on the
/// full cubic.
pub fn solve_local_roots(c: &LsCoefficients) -> Result<Vec<LocalRoot>> {
    let report = classify_structure(c);
    if report.satisfies_h {
        finish(c, CubicFamily::FourBranchH, &h_family_guesses(c)?)
    } else if report.even_type && report.satisfies_8branch {
        finish(c, CubicFamily::EightBranchEven, &even_family_guesses(c)?)
    } else {
        Err(Error::Unsupported(format!(
            "k = {}: neither the four-branch relations nor the even eight-branch condition hold",
            c.k
        )))
    }
}

/// All nontrivial roots of `C(z, w) = (z, w)` for arbitrary coefficients.
///
/// A root is `r (cos t, sin t)` where `C(cos t, sin t)` is parallel to
/// `(cos t, sin t)`; this is a quartic trigonometric equation in `t`, solved
/// by sampling and bracketing on a half turn. The pairing `C . p` is the
/// integral of `a u^4`, so every direction found yields a real root.
/// When the coefficients are close to an even-type set, roots are ordered
/// like the even family; otherwise by angle.
pub fn solve_local_roots_general(c: &LsCoefficients) -> Result<Vec<LocalRoot>> {
    let g = |t: f64| {
        let (x, y) = (t.cos(), t.sin());
        let (c1, c2) = c.cubic_full(x, y);
        c2 * x - c1 * y
    };
    // Offset avoids landing exactly on the axes, where even-type roots sit.
    let t0 = -0.123_456_789;
    let n = 4096;
    let h = PI / n as f64;
    let samples: Vec<f64> = (0..=n).map(|j| g(t0 + j as f64 * h)).collect();
    let scale = c.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if samples.iter().all(|v| v.abs() <= STRUCTURE_TOL * scale) {
        return Err(Error::Unsupported(format!(
            "k = {}: reduced cubic is rotation invariant, roots form a circle",
            c.k
        )));
    }
    let mut dirs = Vec::new();
    for j in 1..=n {
        if samples[j - 1].signum() != samples[j].signum() {
            let t = t0 + j as f64 * h;
            dirs.push(brent(g, t - h, t, 1e-15, 1e-18 * scale, 200)?);
        }
    }
    let mut guesses = Vec::new();
    for t in dirs {
        let (x, y) = (t.cos(), t.sin());
        let (c1, c2) = c.cubic_full(x, y);
        let q = c1 * x + c2 * y;
        if q <= 0.0 {
            continue;
        }
        let r = 1.0 / q.sqrt();
        guesses.push((r * x, r * y));
        guesses.push((-r * x, -r * y));
    }
    if guesses.is_empty() {
        return Err(Error::Unsupported(
            "reduced cubic has no nontrivial roots".into(),
        ));
    }
    if let Ok(reference) = even_family_guesses(c) {
        if reference.len() == guesses.len() {
            let mut ordered = Vec::with_capacity(guesses.len());
            let mut pool = guesses.clone();
            for &(zr, wr) in &reference {
                let (idx, _) = pool
                    .iter()
                    .enumerate()
                    .min_by(|p, q| {
                        let dp = (p.1 .0 - zr).hypot(p.1 .1 - wr);
                        let dq = (q.1 .0 - zr).hypot(q.1 .1 - wr);
                        dp.total_cmp(&dq)
                    })
                    .expect("non-empty pool");
                ordered.push(pool.swap_remove(idx));
            }
            guesses = ordered;
        }
    }
    finish(c, CubicFamily::General, &guesses)
}

/// Structured solver when applicable, general solver otherwise.
pub fn solve_local_roots_any(c: &LsCoefficients) -> Result<Vec<LocalRoot>> {
    match solve_local_roots(c) {
        Err(Error::Unsupported(_)) => solve_local_roots_general(c),
        other => other,
    }
}

/// Leading-order approximation of a bifurcating solution,
/// `u(t) = gamma1 phi_k(t) + gamma2 psi_k(t) = A cos(2 pi k t / T - delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub k: usize,
    pub root_index: usize,
    pub lambda: f64,
    pub period: f64,
    pub z: f64,
    pub w: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub u0: f64,
    pub v0: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Predictor {
    fn omega(&self) -> f64 {
        2.0 * PI * self.k as f64 / self.period
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega() * t - self.phase).cos()
    }

    pub fn eval_derivative(&self, t: f64) -> f64 {
        -self.amplitude * self.omega() * (self.omega() * t - self.phase).sin()
    }
}

pub fn local_predictor(c: &LsCoefficients, root: &LocalRoot, lambda: f64) -> Result<Predictor> {
    let s = c.sigma();
    if !(lambda <= s) {
        return Err(Error::Domain(format!(
            "no bifurcating solutions with lambda = {lambda} >= sigma_{} = {s}",
            c.k
        )));
    }
    let scale = (s - lambda).sqrt();
    let (g1, g2) = (scale * root.z, scale * root.w);
    let t = c.period;
    let norm = (2.0 / t).sqrt();
    let omega = 2.0 * PI * c.k as f64 / t;
    Ok(Predictor {
        k: c.k,
        root_index: root.index,
        lambda,
        period: t,
        z: root.z,
        w: root.w,
        gamma1: g1,
        gamma2: g2,
        u0: norm * g1,
        v0: norm * g2 * omega,
        amplitude: (2.0 / t * (g1 * g1 + g2 * g2)).sqrt(),
        phase: g2.atan2(g1),
    })
}

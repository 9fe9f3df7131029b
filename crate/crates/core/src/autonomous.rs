//! Phase-plane analysis of the constant-weight problem `-u'' = lambda u + a u^3`.
//!
//! Every nontrivial periodic orbit encircling the origin is fixed by its
//! energy level `e > 0`; its minimal period is `tau_lambda(e)`, and the
//! orbit with winding number `k` solves `tau_lambda(e) = T / k`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive_gk, brent};

/// Absolute tolerance for the period integral.
pub const TAU_TOL: f64 = 1e-10;

const BRACKET_FACTOR: f64 = 4.0;
const MAX_BRACKET_EXPANSIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutonomousProblem {
    pub a: f64,
    pub lambda: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    CenterOnly,
    SaddleWithCenters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePortrait {
    pub equilibria: Vec<(f64, f64)>,
    /// Positive crossing of the homoclinic loops; zero when `lambda >= 0`.
    pub u_star: f64,
    pub regime: Regime,
}

/// The periodic orbit with a prescribed winding number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub k: usize,
    pub lambda: f64,
    pub e: f64,
    pub u_plus: f64,
    /// `tau_lambda(e) - T/k` at the returned energy.
    pub tau_residual: f64,
}

impl OrbitSpec {
    /// Initial state `(u(0), u'(0))` on the positive `u` axis.
    pub fn initial_state(&self) -> (f64, f64) {
        (self.u_plus, 0.0)
    }
}

impl AutonomousProblem {
    pub fn new(a: f64, lambda: f64, period: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Domain(format!(
                "constant weight must be positive, got {a}"
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!(
                "period must be positive, got {period}"
            )));
        }
        if !lambda.is_finite() {
            return Err(Error::Domain("lambda must be finite".into()));
        }
        Ok(Self { a, lambda, period })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    /// `(2 pi k / T)^2`.
    pub fn sigma(&self, k: usize) -> f64 {
        let w = 2.0 * PI * k as f64 / self.period;
        w * w
    }

    pub fn phase_portrait(&self) -> PhasePortrait {
        if self.lambda >= 0.0 {
            PhasePortrait {
                equilibria: vec![(0.0, 0.0)],
                u_star: 0.0,
                regime: Regime::CenterOnly,
            }
        } else {
            let omega = (-self.lambda / self.a).sqrt();
            PhasePortrait {
                equilibria: vec![(0.0, 0.0), (-omega, 0.0), (omega, 0.0)],
                u_star: (-2.0 * self.lambda / self.a).sqrt(),
                regime: Regime::SaddleWithCenters,
            }
        }
    }

    /// `v^2/2 + lambda u^2/2 + a u^4/4`.
    pub fn energy(&self, u: f64, v: f64) -> f64 {
        0.5 * v * v + 0.5 * self.lambda * u * u + 0.25 * self.a * u.powi(4)
    }

    fn discriminant_root(&self, e: f64) -> f64 {
        (self.lambda * self.lambda + 4.0 * self.a * e).sqrt()
    }

    /// Rightmost axis crossing `u_+ > u_*` of the energy level `e > 0`.
    pub fn u_plus_from_energy(&self, e: f64) -> Result<f64> {
        if !(e > 0.0) {
            return Err(Error::Domain(format!(
                "energy level must be positive, got {e}"
            )));
        }
        let root = self.discriminant_root(e);
        // u_+^2 = (sqrt(lambda^2 + 4 a e) - lambda) / a, rationalized when
        // lambda > 0 to avoid cancellation at small e.
        let u2 = if self.lambda > 0.0 {
            4.0 * e / (self.lambda + root)
        } else {
            (root - self.lambda) / self.a
        };
        Ok(u2.sqrt())
    }

    /// Minimal period of the orbit at energy `e`:
    /// `4 int_0^1 ds / sqrt(lambda (1 - s^2) + a/2 u_+^2 (1 - s^4))`,
    /// evaluated after the substitution `s = sin(theta)`, which leaves the
    /// smooth integrand `1 / sqrt(lambda + a/2 u_+^2 (1 + sin^2 theta))`.
    pub fn period_tau(&self, e: f64) -> Result<f64> {
        let u_plus = self.u_plus_from_energy(e)?;
        let root = self.discriminant_root(e);
        // Radicand at theta = 0 is (lambda + sqrt(lambda^2 + 4ae)) / 2.
        let base = if self.lambda >= 0.0 {
            0.5 * (self.lambda + root)
        } else {
            2.0 * self.a * e / (root - self.lambda)
        };
        let slope = 0.5 * self.a * u_plus * u_plus;
        if !(base > 0.0) {
            return Err(Error::Internal(format!(
                "nonpositive radicand {base:e} in period integral (lambda={}, e={e:e})",
                self.lambda
            )));
        }
        let integrand = |theta: f64| {
            let s = theta.sin();
            1.0 / (base + slope * s * s).sqrt()
        };
        let integral = adaptive_gk(integrand, 0.0, FRAC_PI_2, TAU_TOL / 4.0, 4000)?;
        Ok(4.0 * integral)
    }

    /// Energy of the unique orbit with winding number `k >= 1`, or `None`
    /// when `lambda >= sigma_k`.
    pub fn find_orbit(&self, k: usize) -> Result<Option<OrbitSpec>> {
        if k == 0 {
            return Err(Error::Domain("winding number must be at least 1".into()));
        }
        if self.lambda >= self.sigma(k) {
            return Ok(None);
        }
        let target = self.period / k as f64;
        let g = |log_e: f64| -> f64 {
            match self.period_tau(log_e.exp()) {
                Ok(tau) => tau - target,
                Err(_) => f64::NAN,
            }
        };
        // tau is strictly decreasing in e: grow or shrink e geometrically
        // from e = 1 until the sign of tau - T/k flips.
        let step = BRACKET_FACTOR.ln();
        let mut x = 0.0f64;
        let mut gx = g(x);
        // Walk towards the root: up in energy while the period is too long.
        let dir = if gx > 0.0 { step } else { -step };
        let mut expansions = 0;
        let (a, b) = loop {
            if gx == 0.0 {
                break (x, x);
            }
            if expansions >= MAX_BRACKET_EXPANSIONS || !gx.is_finite() {
                return Err(Error::Internal(format!(
                    "could not bracket the orbit energy for k={k}, lambda={}",
                    self.lambda
                )));
            }
            expansions += 1;
            let next = x + dir;
            let g_next = g(next);
            if g_next.signum() != gx.signum() || g_next == 0.0 {
                break if next < x { (next, x) } else { (x, next) };
            }
            x = next;
            gx = g_next;
        };
        let log_e = brent(g, a, b, 1e-15, TAU_TOL / 10.0, 400)?;
        let e = log_e.exp();
        let tau = self.period_tau(e)?;
        let spec = OrbitSpec {
            k,
            lambda: self.lambda,
            e,
            u_plus: self.u_plus_from_energy(e)?,
            tau_residual: tau - target,
        };
        if spec.tau_residual.abs() >= TAU_TOL {
            return Err(Error::Internal(format!(
                "orbit energy solve left |tau - T/k| = {:e}",
                spec.tau_residual.abs()
            )));
        }
        Ok(Some(spec))
    }

    /// Orbits with winding number `k` over a list of `lambda` values.
    pub fn orbit_family(&self, k: usize, lambdas: &[f64]) -> Result<Vec<(f64, Option<OrbitSpec>)>> {
        lambdas
            .iter()
            .map(|&l| Ok((l, self.with_lambda(l).find_orbit(k)?)))
            .collect()
    }
}

//! Piecewise description of the weight `a(t)` multiplying the cubic term,
//! its admissibility checks, and exact integration against trigonometric
//! products.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussRule;

/// Tolerance used for sign and positivity checks on segments.
pub const SIGN_TOL: f64 = 1e-12;

/// Number of Chebyshev points used to scan polynomial segments.
const CHEBYSHEV_SCAN: usize = 1024;

/// One piece of the weight on an open interval `(t_i, t_{i+1})`.
///
/// Polynomial coefficients are in the local variable `s = t - t_i`,
/// lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Zero,
    Constant(f64),
    Polynomial(Vec<f64>),
}

impl Segment {
    /// Value at local coordinate `s = t - t_i`.
    pub fn eval_local(&self, s: f64) -> f64 {
        match self {
            Segment::Zero => 0.0,
            Segment::Constant(c) => *c,
            Segment::Polynomial(coeffs) => coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c),
        }
    }

    fn eval_local_derivative(&self, s: f64) -> f64 {
        match self {
            Segment::Polynomial(coeffs) if coeffs.len() > 1 => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (j, &c)| acc * s + j as f64 * c),
            _ => 0.0,
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            Segment::Zero => true,
            Segment::Constant(c) => *c == 0.0,
            Segment::Polynomial(coeffs) => coeffs.iter().all(|&c| c == 0.0),
        }
    }

    fn degree(&self) -> usize {
        match self {
            Segment::Polynomial(coeffs) => coeffs.len().saturating_sub(1),
            _ => 0,
        }
    }

    /// Minimum over the closed local interval `[0, len]`.
    fn minimum(&self, len: f64) -> f64 {
        match self {
            Segment::Zero => 0.0,
            Segment::Constant(c) => *c,
            Segment::Polynomial(_) => {
                // Chebyshev–Lobatto scan, then polish every interior
                // minimum located by a sign change of the derivative.
                let n = CHEBYSHEV_SCAN;
                let xs: Vec<f64> = (0..n)
                    .map(|j| {
                        let c = (PI * j as f64 / (n - 1) as f64).cos();
                        0.5 * len * (1.0 - c)
                    })
                    .collect();
                let mut min = xs
                    .iter()
                    .map(|&s| self.eval_local(s))
                    .fold(f64::INFINITY, f64::min);
                for w in xs.windows(2) {
                    let (mut lo, mut hi) = (w[0], w[1]);
                    let dlo = self.eval_local_derivative(lo);
                    let dhi = self.eval_local_derivative(hi);
                    if dlo < 0.0 && dhi > 0.0 {
                        for _ in 0..80 {
                            let mid = 0.5 * (lo + hi);
                            if self.eval_local_derivative(mid) < 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        min = min.min(self.eval_local(0.5 * (lo + hi)));
                    }
                }
                min
            }
        }
    }
}

/// Result of checking the admissibility hypotheses on a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Nonnegative and not identically zero.
    pub hloc: bool,
    /// Every piece is either identically zero or bounded away from zero.
    pub hglob: bool,
    pub violations: Vec<String>,
}

/// Cosine or sine factor in a [`TrigProduct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Cos,
    Sin,
}

/// `scale * prod_j f_j(2 pi k_j t / T)` with at most four factors, each
/// `f_j` a cosine or a sine.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigProduct {
    pub scale: f64,
    pub factors: Vec<(Trig, u32)>,
}

impl TrigProduct {
    pub const MAX_FACTORS: usize = 4;

    pub fn new(scale: f64, factors: &[(Trig, u32)]) -> Result<Self> {
        if factors.len() > Self::MAX_FACTORS {
            return Err(Error::Structure {
                index: Self::MAX_FACTORS,
                reason: format!("trig product has {} factors (max 4)", factors.len()),
            });
        }
        Ok(Self {
            scale,
            factors: factors.to_vec(),
        })
    }

    /// Expansion `sum_m c_m exp(i m Omega t)` keyed by integer frequency `m`.
    fn exponential_terms(&self) -> BTreeMap<i64, Complex64> {
        let mut terms = BTreeMap::new();
        terms.insert(0i64, Complex64::new(self.scale, 0.0));
        for &(kind, k) in &self.factors {
            let k = k as i64;
            let (plus, minus) = match kind {
                Trig::Cos => (Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)),
                Trig::Sin => (Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5)),
            };
            let mut next = BTreeMap::new();
            for (&m, &c) in &terms {
                *next.entry(m + k).or_insert(Complex64::new(0.0, 0.0)) += c * plus;
                *next.entry(m - k).or_insert(Complex64::new(0.0, 0.0)) += c * minus;
            }
            terms = next;
        }
        terms
    }

    pub fn eval(&self, t: f64, period: f64) -> f64 {
        let omega = 2.0 * PI / period;
        self.factors.iter().fold(self.scale, |acc, &(kind, k)| {
            let arg = omega * k as f64 * t;
            acc * match kind {
                Trig::Cos => arg.cos(),
                Trig::Sin => arg.sin(),
            }
        })
    }
}

/// The weight `a(t)` on one period `[0, T]`, extended periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    period: f64,
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
}

impl Weight {
    pub fn new(period: f64, breakpoints: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Structure {
                index: 0,
                reason: format!("period must be positive and finite, got {period}"),
            });
        }
        if breakpoints.len() < 2 {
            return Err(Error::Structure {
                index: 0,
                reason: "need at least two breakpoints".into(),
            });
        }
        if segments.len() + 1 != breakpoints.len() {
            return Err(Error::Structure {
                index: segments.len(),
                reason: format!(
                    "{} breakpoints require {} segments, got {}",
                    breakpoints.len(),
                    breakpoints.len() - 1,
                    segments.len()
                ),
            });
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Structure {
                index: 0,
                reason: format!("first breakpoint must be 0, got {}", breakpoints[0]),
            });
        }
        for (i, w) in breakpoints.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::Structure {
                    index: i + 1,
                    reason: format!(
                        "breakpoints not strictly increasing: {} then {}",
                        w[0], w[1]
                    ),
                });
            }
        }
        let last = breakpoints.len() - 1;
        if (breakpoints[last] - period).abs() > 1e-12 * period {
            return Err(Error::Structure {
                index: last,
                reason: format!(
                    "last breakpoint {} does not equal the period {period}",
                    breakpoints[last]
                ),
            });
        }
        let mut breakpoints = breakpoints;
        breakpoints[last] = period;
        for (i, seg) in segments.iter().enumerate() {
            let finite = match seg {
                Segment::Zero => true,
                Segment::Constant(c) => c.is_finite(),
                Segment::Polynomial(cs) => !cs.is_empty() && cs.iter().all(|c| c.is_finite()),
            };
            if !finite {
                return Err(Error::Structure {
                    index: i,
                    reason: "segment values must be finite and polynomials non-empty".into(),
                });
            }
        }
        Ok(Self {
            period,
            breakpoints,
            segments,
        })
    }

    /// `a(t) = value` on the whole period.
    pub fn constant(period: f64, value: f64) -> Result<Self> {
        Self::new(period, vec![0.0, period], vec![Segment::Constant(value)])
    }

    /// Sum of scaled indicator functions `value * 1_[from, to]`; the
    /// intervals must be disjoint and lie inside `[0, T]`.
    pub fn indicators(period: f64, pieces: &[(f64, f64, f64)]) -> Result<Self> {
        let mut pieces = pieces.to_vec();
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut breakpoints = vec![0.0];
        let mut segments = Vec::new();
        for (i, &(from, to, value)) in pieces.iter().enumerate() {
            let cursor = *breakpoints.last().expect("non-empty");
            if from < cursor || to <= from || to > period {
                return Err(Error::Structure {
                    index: i,
                    reason: format!("indicator [{from}, {to}] overlaps or leaves [0, {period}]"),
                });
            }
            if from > cursor {
                breakpoints.push(from);
                segments.push(Segment::Zero);
            }
            breakpoints.push(to);
            segments.push(Segment::Constant(value));
        }
        if *breakpoints.last().expect("non-empty") < period {
            breakpoints.push(period);
            segments.push(Segment::Zero);
        }
        Self::new(period, breakpoints, segments)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `(t_i, t_{i+1}, segment)` triples.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, &Segment)> {
        self.breakpoints
            .windows(2)
            .zip(&self.segments)
            .map(|(w, s)| (w[0], w[1], s))
    }

    /// Value at `t` (periodically extended). At a breakpoint the mean of
    /// the one-sided limits is returned.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.rem_euclid(self.period);
        let tol = 1e-14 * self.period;
        let n = self.segments.len();
        for (i, &b) in self.breakpoints.iter().enumerate() {
            if (t - b).abs() <= tol || (i == n && (t - self.period).abs() <= tol) {
                let right = if i < n { i } else { 0 };
                let left = if i > 0 { i - 1 } else { n - 1 };
                let lv = self.segments[left]
                    .eval_local(self.breakpoints[left + 1] - self.breakpoints[left]);
                let rv = self.segments[right].eval_local(0.0);
                return 0.5 * (lv + rv);
            }
        }
        let i = self.segment_index(t);
        self.segments[i].eval_local(t - self.breakpoints[i])
    }

    /// Value on the segment containing `t` in its closure, taking the
    /// segment to the right at breakpoints. Used by the ODE right-hand
    /// side, which always integrates within a single segment.
    pub fn eval_in_segment(&self, segment: usize, t: f64) -> f64 {
        self.segments[segment].eval_local(t - self.breakpoints[segment])
    }

    fn segment_index(&self, t: f64) -> usize {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        idx.saturating_sub(1).min(self.segments.len() - 1)
    }

    /// Largest value of `|a|` seen on the Chebyshev scan.
    pub fn sup_norm(&self) -> f64 {
        self.pieces()
            .map(|(a, b, seg)| match seg {
                Segment::Zero => 0.0,
                Segment::Constant(c) => c.abs(),
                Segment::Polynomial(_) => (0..=64)
                    .map(|j| seg.eval_local((b - a) * j as f64 / 64.0).abs())
                    .fold(0.0, f64::max),
            })
            .fold(0.0, f64::max)
    }

    /// Checks nonnegativity, nontriviality and the piecewise positivity
    /// structure.
    pub fn validate_hypotheses(&self) -> HypothesisReport {
        let mut violations = Vec::new();
        let mut hloc = true;
        let mut hglob = true;
        let mut all_zero = true;
        for (i, (a, b, seg)) in self.pieces().enumerate() {
            let zero = seg.is_identically_zero();
            if !zero {
                all_zero = false;
            }
            let min = seg.minimum(b - a);
            if min < -SIGN_TOL {
                hloc = false;
                violations.push(format!(
                    "segment {i} on ({a}, {b}) takes negative values (min {min:e})"
                ));
            }
            if !zero && min <= SIGN_TOL {
                hglob = false;
                violations.push(format!(
                    "segment {i} on ({a}, {b}) is neither identically zero nor bounded away from zero (inf {min:e})"
                ));
            }
        }
        if all_zero {
            hloc = false;
            violations.push("weight vanishes identically".into());
        }
        HypothesisReport {
            hloc,
            hglob: hglob && hloc,
            violations,
        }
    }

    /// Returns an error unless the nonnegativity/nontriviality hypothesis holds.
    pub fn require_hloc(&self) -> Result<()> {
        let report = self.validate_hypotheses();
        if report.hloc {
            Ok(())
        } else {
            Err(Error::Hypothesis(report.violations.join("; ")))
        }
    }

    /// Whether `a(T - t) = a(t)`.
    pub fn is_even(&self) -> bool {
        let scale = self.sup_norm().max(1.0);
        let tol = 1e-12 * scale;
        let t = self.period;
        let grid = 4096;
        let grid_ok = (0..grid).all(|j| {
            let s = (j as f64 + 0.5) * t / grid as f64;
            (self.eval(s) - self.eval(t - s)).abs() <= tol
        });
        grid_ok
            && self.pieces().all(|(a, b, _)| {
                (1..8).all(|j| {
                    let s = a + (b - a) * j as f64 / 8.0;
                    (self.eval(s) - self.eval(t - s)).abs() <= tol
                })
            })
    }

    /// The same weight regarded as `n T`-periodic.
    pub fn periodic_extension(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("subharmonic order must be at least 1".into()));
        }
        let mut breakpoints = vec![0.0];
        let mut segments = Vec::new();
        for rep in 0..n {
            let offset = rep as f64 * self.period;
            for (_, b, seg) in self.pieces() {
                breakpoints.push(offset + b);
                segments.push(seg.clone());
            }
        }
        let new_period = self.period * n as f64;
        *breakpoints.last_mut().expect("non-empty") = new_period;
        Self::new(new_period, breakpoints, segments)
    }

    /// `int_{t0}^{t1} seg(t) exp(i m Omega t) dt` for one segment.
    fn segment_moment(&self, index: usize, m: i64) -> Complex64 {
        let (t0, t1) = (self.breakpoints[index], self.breakpoints[index + 1]);
        let omega = 2.0 * PI / self.period;
        let seg = &self.segments[index];
        let exp_integral = |m: i64| -> Complex64 {
            if m == 0 {
                Complex64::new(t1 - t0, 0.0)
            } else {
                let w = m as f64 * omega;
                // (e^{i w t1} - e^{i w t0}) / (i w), written to avoid
                // cancellation when the segment is short.
                let mid = 0.5 * (t0 + t1);
                let half = 0.5 * (t1 - t0);
                let phase = Complex64::from_polar(1.0, w * mid);
                phase * Complex64::new(2.0 * (w * half).sin() / w, 0.0)
            }
        };
        match seg {
            Segment::Zero => Complex64::new(0.0, 0.0),
            Segment::Constant(c) => exp_integral(m) * *c,
            Segment::Polynomial(_) => {
                let deg = seg.degree();
                let wlen = (m as f64 * omega * (t1 - t0)).abs();
                let n = (deg / 2 + 12 + wlen.ceil() as usize).min(64);
                let rule = GaussRule::new(n);
                let eval = |panels: usize| -> Complex64 {
                    let h = (t1 - t0) / panels as f64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for p in 0..panels {
                        let lo = t0 + p as f64 * h;
                        for (t, w) in rule.points(lo, lo + h) {
                            acc += Complex64::from_polar(
                                w * seg.eval_local(t - t0),
                                m as f64 * omega * t,
                            );
                        }
                    }
                    acc
                };
                let mut panels = 1 + (wlen / 16.0) as usize;
                let mut prev = eval(panels);
                // Richardson-style verification: refine until two successive
                // panel counts agree.
                for _ in 0..10 {
                    panels *= 2;
                    let next = eval(panels);
                    let diff = (next - prev).norm();
                    prev = next;
                    if diff <= 1e-15 * (1.0 + next.norm()) {
                        break;
                    }
                }
                prev
            }
        }
    }

    /// `int_0^T a(t) g(t) dt` for a trigonometric product `g`, in closed
    /// form on zero and constant pieces.
    pub fn integrate_against(&self, g: &TrigProduct) -> f64 {
        let terms = g.exponential_terms();
        let mut total = Complex64::new(0.0, 0.0);
        for (&m, &c) in &terms {
            if c.norm() == 0.0 {
                continue;
            }
            let moment: Complex64 = (0..self.segments.len())
                .map(|i| self.segment_moment(i, m))
                .sum();
            total += c * moment;
        }
        total.re
    }

    /// Fourier coefficient `(1/T) int_0^T a(t) exp(-i 2 pi m t / T) dt`.
    pub fn fourier_coefficient(&self, m: i64) -> Complex64 {
        let sum: Complex64 = (0..self.segments.len())
            .map(|i| self.segment_moment(i, -m))
            .sum();
        sum / self.period
    }

    pub fn to_config(&self) -> WeightConfig {
        WeightConfig {
            period: self.period,
            segments: self
                .pieces()
                .map(|(from, to, seg)| SegmentConfig {
                    from,
                    to,
                    kind: match seg {
                        Segment::Zero => SegmentKind::Zero,
                        Segment::Constant(c) => SegmentKind::Const { value: *c },
                        Segment::Polynomial(cs) => SegmentKind::Poly { coeffs: cs.clone() },
                    },
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: WeightConfig = serde_json::from_str(text)?;
        cfg.build()
    }
}

/// On-disk form of a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub period: f64,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub from: f64,
    pub to: f64,
    #[serde(flatten)]
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmentKind {
    Zero,
    Const { value: f64 },
    Poly { coeffs: Vec<f64> },
}

impl WeightConfig {
    /// Infers breakpoints from segment endpoints; gaps and overlaps are
    /// structural errors naming the segment.
    pub fn build(&self) -> Result<Weight> {
        if self.segments.is_empty() {
            return Err(Error::Structure {
                index: 0,
                reason: "weight has no segments".into(),
            });
        }
        let tol = 1e-12 * self.period.abs().max(1.0);
        let mut breakpoints = vec![self.segments[0].from];
        for (i, seg) in self.segments.iter().enumerate() {
            let cursor = *breakpoints.last().expect("non-empty");
            if (seg.from - cursor).abs() > tol {
                return Err(Error::Structure {
                    index: i,
                    reason: if seg.from > cursor {
                        format!("gap between {cursor} and {}", seg.from)
                    } else {
                        format!(
                            "segment starting at {} overlaps previous end {cursor}",
                            seg.from
                        )
                    },
                });
            }
            breakpoints.push(seg.to);
        }
        let segments = self
            .segments
            .iter()
            .map(|s| match &s.kind {
                SegmentKind::Zero => Segment::Zero,
                SegmentKind::Const { value } => Segment::Constant(*value),
                SegmentKind::Poly { coeffs } => Segment::Polynomial(coeffs.clone()),
            })
            .collect();
        Weight::new(self.period, breakpoints, segments)
    }
}

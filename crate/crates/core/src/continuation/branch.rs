//! Pseudo-arclength continuation in `(lambda, u(0), u'(0))`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::integrator::integrate_variational;
use super::shooting::{shoot_newton, OrbitPoint, Parity, ACCEPT_TOL};
use crate::error::{Error, Result};
use crate::lsred::{local_predictor, solve_local_roots_any, LsCoefficients};
use crate::spectral::{kernel_report, sigma};
use crate::weights::Weight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    /// Lower end of the `lambda` window; `sigma_k - 10` when unset.
    pub lambda_min: Option<f64>,
    /// Extra distance allowed when matching a revisited point.
    pub loop_tol: f64,
    /// Bound on `|u|_inf + |u'|_inf`.
    pub bound_cap: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Seeds are placed at `sigma_k (1 - seed_offset)`.
    pub seed_offset: f64,
    /// Seed `lambda` for the branches through `(0, 0)`.
    pub k0_seed_lambda: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            lambda_min: None,
            loop_tol: 1e-6,
            bound_cap: 1e6,
            initial_step: 0.02,
            min_step: 1e-7,
            max_step: 0.25,
            max_steps: 20_000,
            seed_offset: 0.01,
            k0_seed_lambda: -0.04,
        }
    }
}

impl ContinuationOptions {
    pub fn lambda_min_for(&self, sigma_k: f64) -> f64 {
        self.lambda_min.unwrap_or(sigma_k - 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.loop_tol >= 0.0
            && self.bound_cap > 0.0
            && self.min_step > 0.0
            && self.initial_step >= self.min_step
            && self.max_step >= self.initial_step
            && self.max_steps > 0
            && self.seed_offset > 0.0
            && self.seed_offset < 1.0
            && self.k0_seed_lambda < 0.0
            && self.lambda_min.map_or(true, f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inconsistent continuation options: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    /// Seeded from reduced root `root` at `(sigma_k, 0)`.
    Eigen { k: usize, root: usize },
    /// Constant-sign branch through `(0, 0)`; `sign` is `+1` or `-1`.
    Constant { sign: i8 },
    /// Seeded by hand.
    Manual,
}

impl Origin {
    pub fn k(&self) -> usize {
        match self {
            Origin::Eigen { k, .. } => *k,
            _ => 0,
        }
    }

    pub fn root(&self) -> usize {
        match self {
            Origin::Eigen { root, .. } => *root,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedLambdaMin,
    ClosedLoop,
    BoundExceeded,
    NewtonFailure,
    /// The step budget ran out before any other condition triggered.
    StepBudgetExhausted,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ReachedLambdaMin => "reached_lambda_min",
            Termination::ClosedLoop => "closed_loop",
            Termination::BoundExceeded => "bound_exceeded",
            Termination::NewtonFailure => "newton_failure",
            Termination::StepBudgetExhausted => "step_budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryClass {
    EvenFamily,
    OddFamily,
    Asymmetric,
}

/// Sign change along the branch of the shooting determinant
/// `det(Phi - I)`. `branch_point` is set when the augmented continuation
/// determinant changes sign as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialPoint {
    pub index: usize,
    pub lambda: f64,
    pub branch_point: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub origin: Origin,
    pub points: Vec<OrbitPoint>,
    pub termination: Termination,
    pub symmetry_class: SymmetryClass,
    /// For `ClosedLoop` through the bifurcation point: the seed root the
    /// branch came back along, when known.
    pub returned_near_root: Option<usize>,
    pub special_points: Vec<SpecialPoint>,
    pub message: String,
}

impl Branch {
    fn failed(origin: Origin, points: Vec<OrbitPoint>, message: String) -> Self {
        let symmetry_class = classify_symmetry(&points);
        Self {
            origin,
            points,
            termination: Termination::NewtonFailure,
            symmetry_class,
            returned_near_root: None,
            special_points: Vec::new(),
            message,
        }
    }

    pub fn winding(&self) -> Option<usize> {
        self.points.first().map(|p| p.winding)
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.lambda), hi.max(p.lambda))
            })
    }
}

fn classify_symmetry(points: &[OrbitPoint]) -> SymmetryClass {
    if !points.is_empty() && points.iter().all(|p| p.parity == Parity::Even) {
        SymmetryClass::EvenFamily
    } else if !points.is_empty() && points.iter().all(|p| p.parity == Parity::Odd) {
        SymmetryClass::OddFamily
    } else {
        SymmetryClass::Asymmetric
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub k: usize,
    pub sigma: f64,
    pub kernel_dim: usize,
    pub gap: f64,
}

/// `sigma_{n,k}` for `k = 0..=k_max` with the kernel dimension of the
/// linearization on `nT`-periodic functions.
pub fn find_bifurcation_points(period: f64, k_max: usize, n: usize) -> Vec<BifurcationPoint> {
    let modes = k_max + 8;
    (0..=k_max)
        .map(|k| {
            let s = sigma(period, k, n);
            let r = kernel_report(s, n as f64 * period, modes);
            BifurcationPoint {
                k,
                sigma: s,
                kernel_dim: r.dim,
                gap: r.gap,
            }
        })
        .collect()
}

/// Scaled coordinates `(lambda, u0, v0 T / 2 pi)`.
struct Frame {
    v_scale: f64,
}

impl Frame {
    fn to_y(&self, lambda: f64, u0: f64, v0: f64) -> Vector3<f64> {
        Vector3::new(lambda, u0, v0 * self.v_scale)
    }

    fn point(&self, p: &OrbitPoint) -> Vector3<f64> {
        self.to_y(p.lambda, p.u0, p.v0)
    }

    fn unpack(&self, y: &Vector3<f64>) -> (f64, f64, f64) {
        (y[0], y[1], y[2] / self.v_scale)
    }
}

struct Linearization {
    g: [f64; 2],
    /// Rows of the 2x3 Jacobian in scaled coordinates.
    rows: [Vector3<f64>; 2],
    shoot_det: f64,
}

fn linearize(w: &Weight, frame: &Frame, y: &Vector3<f64>) -> Result<Linearization> {
    let (lambda, u0, v0) = frame.unpack(y);
    let m = integrate_variational(w, lambda, u0, v0)?;
    let (j11, j12, j21, j22) = (
        m.phi[0][0] - 1.0,
        m.phi[0][1],
        m.phi[1][0],
        m.phi[1][1] - 1.0,
    );
    let s = 1.0 / frame.v_scale;
    Ok(Linearization {
        g: [m.end[0] - u0, m.end[1] - v0],
        rows: [
            Vector3::new(m.d_lambda[0], j11, j12 * s),
            Vector3::new(m.d_lambda[1], j21, j22 * s),
        ],
        shoot_det: j11 * j22 - j12 * j21,
    })
}

const RANK_TOL: f64 = 1e-8;

fn tangent(lin: &Linearization) -> Option<Vector3<f64>> {
    let t = lin.rows[0].cross(&lin.rows[1]);
    let n = t.norm();
    // |t| is the product of the two singular values. Scaling by the whole
    // Jacobian keeps a row made of integration noise from counting as rank.
    let scale = lin.rows[0].norm_squared() + lin.rows[1].norm_squared();
    if n <= RANK_TOL * scale || !n.is_finite() {
        None
    } else {
        Some(t / n)
    }
}

struct Corrected {
    y: Vector3<f64>,
    lin: Linearization,
    iterations: usize,
}

fn correct(w: &Weight, frame: &Frame, yp: &Vector3<f64>, t: &Vector3<f64>) -> Option<Corrected> {
    let mut y = *yp;
    for iter in 0..12 {
        let lin = linearize(w, frame, &y).ok()?;
        let gnorm = lin.g[0].hypot(lin.g[1]);
        // Accuracy is judged on the shooting defect alone; near branch
        // points the augmented system is ill-conditioned and the update
        // never settles below integration noise.
        if gnorm < 1e-10 * (1.0 + y.norm()) {
            return Some(Corrected {
                y,
                lin,
                iterations: iter,
            });
        }
        let a = Matrix3::from_rows(&[
            lin.rows[0].transpose(),
            lin.rows[1].transpose(),
            t.transpose(),
        ]);
        let f = Vector3::new(lin.g[0], lin.g[1], t.dot(&(y - yp)));
        let dy = a.lu().solve(&f)?;
        if !dy.iter().all(|x| x.is_finite()) {
            return None;
        }
        y -= dy;
    }
    None
}

fn augmented_det(lin: &Linearization, t: &Vector3<f64>) -> f64 {
    Matrix3::from_rows(&[
        lin.rows[0].transpose(),
        lin.rows[1].transpose(),
        t.transpose(),
    ])
    .determinant()
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let s = if l2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / l2).clamp(0.0, 1.0)
    };
    (p - (a + ab * s)).norm()
}

/// Follows the solution curve through `seed` away from `anchor` (the
/// bifurcation point it emanates from).
///
/// `return_targets` are the other seeds at the same bifurcation point; when
/// the curve comes back to `anchor` the nearest one is reported.
pub fn continue_branch(
    w: &Weight,
    seed: OrbitPoint,
    origin: Origin,
    anchor: (f64, f64, f64),
    return_targets: &[(usize, OrbitPoint)],
    opts: &ContinuationOptions,
) -> Branch {
    let sigma_anchor = anchor.0;
    let lambda_min = match origin {
        Origin::Constant { .. } => opts.lambda_min.unwrap_or(-10.0),
        _ => opts.lambda_min_for(sigma_anchor),
    };
    let frame = Frame {
        v_scale: w.period() / (2.0 * PI),
    };
    let anchor_y = frame.to_y(anchor.0, anchor.1, anchor.2);
    let mut points = vec![seed];
    let mut y = frame.point(&seed);
    let Ok(lin0) = linearize(w, &frame, &y) else {
        return Branch::failed(origin, points, "integration failed at the seed".into());
    };
    let Some(mut t) = tangent(&lin0) else {
        return Branch::failed(
            origin,
            points,
            "rank-deficient shooting Jacobian at the seed".into(),
        );
    };
    if t.dot(&(y - anchor_y)) < 0.0 {
        t = -t;
    }
    let seed_dist = (y - anchor_y).norm();
    let mut far = false;
    let mut h = opts.initial_step;
    let mut path = vec![(y, t)];
    let mut prev_shoot_det = lin0.shoot_det;
    let mut prev_aug_det = augmented_det(&lin0, &t);
    let mut special_points = Vec::new();

    let finish = |points: Vec<OrbitPoint>, termination, returned, special, message: String| {
        let symmetry_class = classify_symmetry(&points);
        Branch {
            origin,
            points,
            termination,
            symmetry_class,
            returned_near_root: returned,
            special_points: special,
            message,
        }
    };

    for _ in 0..opts.max_steps {
        let yp = y + t * h;
        let attempt = correct(w, &frame, &yp, &t).and_then(|c| {
            let (lambda, u0, v0) = frame.unpack(&c.y);
            let point = OrbitPoint::evaluate(w, lambda, u0, v0).ok()?;
            if point.winding != seed.winding || point.residual >= ACCEPT_TOL {
                return None;
            }
            let mut tn = tangent(&c.lin)?;
            if tn.dot(&t) < 0.0 {
                tn = -tn;
            }
            // Large turns or long jumps suggest a switch to another curve.
            if tn.dot(&t) < 0.5 || (c.y - y).norm() > 2.0 * h {
                return None;
            }
            Some((c, point, tn))
        });
        let Some((c, point, tn)) = attempt else {
            h *= 0.5;
            if h < opts.min_step {
                let last = points.last().map_or(f64::NAN, |p| p.lambda);
                return finish(
                    points,
                    Termination::NewtonFailure,
                    None,
                    special_points,
                    format!(
                        "step size fell below {:e} after lambda = {last}",
                        opts.min_step
                    ),
                );
            }
            continue;
        };

        let index = points.len();
        let aug = augmented_det(&c.lin, &tn);
        if c.lin.shoot_det.signum() != prev_shoot_det.signum() {
            special_points.push(SpecialPoint {
                index,
                lambda: point.lambda,
                branch_point: aug.signum() != prev_aug_det.signum(),
            });
        }
        prev_shoot_det = c.lin.shoot_det;
        prev_aug_det = aug;

        if point.lambda <= lambda_min {
            // Land exactly on the window boundary.
            let (l0, l1) = (y[0], c.y[0]);
            let s = if l1 == l0 {
                1.0
            } else {
                (lambda_min - l0) / (l1 - l0)
            };
            let yi = y + (c.y - y) * s;
            let (_, u0, v0) = frame.unpack(&yi);
            let out = shoot_newton(w, lambda_min, u0, v0);
            let message = match out.point {
                Some(p) if p.winding == seed.winding && !p.is_trivial() => {
                    points.push(p);
                    format!("extends to lambda_min = {lambda_min}")
                }
                _ => {
                    points.push(point);
                    format!("extends past lambda_min = {lambda_min}")
                }
            };
            return finish(
                points,
                Termination::ReachedLambdaMin,
                None,
                special_points,
                message,
            );
        }

        points.push(point);
        if point.linf_u + point.linf_du > opts.bound_cap {
            return finish(
                points,
                Termination::BoundExceeded,
                None,
                special_points,
                format!("|u| + |u'| exceeded {:e}", opts.bound_cap),
            );
        }

        let d = (c.y - anchor_y).norm();
        if d > 2.0 * seed_dist {
            far = true;
        }
        if far && d < 1.2 * seed_dist {
            let returned = return_targets
                .iter()
                .map(|(i, p)| (*i, (frame.point(p) - c.y).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            return finish(
                points,
                Termination::ClosedLoop,
                returned,
                special_points,
                format!("returned to ({sigma_anchor}, 0)"),
            );
        }
        // Revisit of an earlier stretch with the same orientation.
        if path.len() > 4 {
            let tol = opts.loop_tol + 0.05 * h;
            let hit = path[..path.len() - 3].windows(2).any(|seg| {
                segment_distance(&c.y, &seg[0].0, &seg[1].0) < tol && seg[0].1.dot(&tn) > 0.9
            });
            if hit {
                return finish(
                    points,
                    Termination::ClosedLoop,
                    None,
                    special_points,
                    "revisited an earlier point".into(),
                );
            }
        }

        y = c.y;
        t = tn;
        path.push((y, t));
        h = match c.iterations {
            0..=3 => (h * 1.5).min(opts.max_step),
            4..=6 => h,
            _ => h * 0.6,
        }
        .max(opts.min_step);
    }
    finish(
        points,
        Termination::StepBudgetExhausted,
        None,
        special_points,
        format!("{} steps taken", opts.max_steps),
    )
}

/// Converged starting point of one local branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub k: usize,
    pub root: usize,
    pub predictor_u0: f64,
    pub predictor_v0: f64,
    pub predictor_amplitude: f64,
    pub point: Option<OrbitPoint>,
}

/// Local predictors at `lambda = sigma_k (1 - seed_offset)` corrected by
/// shooting.
pub fn seed_points(w: &Weight, k: usize, opts: &ContinuationOptions) -> Result<Vec<Seed>> {
    let c = LsCoefficients::compute(w, k)?;
    let roots = solve_local_roots_any(&c)?;
    let lambda = c.sigma() * (1.0 - opts.seed_offset);
    roots
        .iter()
        .map(|r| {
            let p = local_predictor(&c, r, lambda)?;
            let out = shoot_newton(w, lambda, p.u0, p.v0);
            let point = out.point.filter(|q| q.winding == k && !q.is_trivial());
            Ok(Seed {
                k,
                root: r.index,
                predictor_u0: p.u0,
                predictor_v0: p.v0,
                predictor_amplitude: p.amplitude,
                point,
            })
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn run_all<T: Send, R: Send>(items: Vec<T>, f: impl Fn(T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all<T, R>(items: Vec<T>, f: impl Fn(T) -> R) -> Vec<R> {
    items.into_iter().map(f).collect()
}

/// All local branches from `(sigma_k, 0)`, each continued independently.
pub fn branches_from_eigenvalue(
    w: &Weight,
    k: usize,
    opts: &ContinuationOptions,
) -> Result<Vec<Branch>> {
    opts.validate()?;
    let seeds = seed_points(w, k, opts)?;
    let s = sigma(w.period(), k, 1);
    let targets: Vec<(usize, OrbitPoint)> = seeds
        .iter()
        .filter_map(|sd| sd.point.map(|p| (sd.root, p)))
        .collect();
    Ok(run_all(seeds, |sd| {
        let origin = Origin::Eigen { k, root: sd.root };
        match sd.point {
            None => Branch::failed(
                origin,
                Vec::new(),
                "shooting from the predictor failed".into(),
            ),
            Some(p) => {
                let others: Vec<_> = targets
                    .iter()
                    .copied()
                    .filter(|(i, _)| *i != sd.root)
                    .collect();
                continue_branch(w, p, origin, (s, 0.0, 0.0), &others, opts)
            }
        }
    }))
}

/// Positive and negative constant-sign branches through `(0, 0)`.
pub fn branch_k0(w: &Weight, opts: &ContinuationOptions) -> Result<(Branch, Branch)> {
    opts.validate()?;
    w.require_hloc()?;
    let mean = w.fourier_coefficient(0).re;
    let lambda = opts.k0_seed_lambda;
    let amp = (-lambda / mean).sqrt();
    let mut out = run_all(vec![1i8, -1], |sign| {
        let origin = Origin::Constant { sign };
        let res = shoot_newton(w, lambda, sign as f64 * amp, 0.0);
        match res.point.filter(|p| p.winding == 0 && !p.is_trivial()) {
            None => Branch::failed(
                origin,
                Vec::new(),
                "shooting from the constant predictor failed".into(),
            ),
            Some(p) => continue_branch(w, p, origin, (0.0, 0.0, 0.0), &[], opts),
        }
    });
    let neg = out.pop().expect("two branches");
    let pos = out.pop().expect("two branches");
    Ok((pos, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::integrator::integrate;
    use crate::weights::Segment;

    fn quarter() -> Weight {
        Weight::indicators(PI, &[(0.0, PI / 4.0, 1.0)]).unwrap()
    }

    #[test]
    fn bifurcation_points() {
        let pts = find_bifurcation_points(PI, 2, 1);
        let got: Vec<_> = pts.iter().map(|p| (p.k, p.sigma, p.kernel_dim)).collect();
        assert_eq!(got, vec![(0, 0.0, 1), (1, 4.0, 2), (2, 16.0, 2)]);
        let pts = find_bifurcation_points(2.0 * PI, 3, 1);
        for p in pts {
            assert!((p.sigma - (p.k * p.k) as f64).abs() < 1e-12);
        }
        let sub = find_bifurcation_points(PI, 1, 2);
        assert!((sub[1].sigma - 1.0).abs() < 1e-14);
        assert_eq!(sub[1].kernel_dim, 2);
    }

    #[test]
    fn linear_problem_cannot_be_continued() {
        let w = Weight::new(PI, vec![0.0, PI], vec![Segment::Zero]).unwrap();
        let seed = OrbitPoint::evaluate(&w, 4.0, 0.3, 0.0).unwrap();
        let b = continue_branch(
            &w,
            seed,
            Origin::Manual,
            (4.0, 0.0, 0.0),
            &[],
            &ContinuationOptions::default(),
        );
        assert_eq!(b.termination, Termination::NewtonFailure);
        assert_eq!(b.points.len(), 1);
    }

    #[test]
    fn quarter_branch_reaches_window() {
        let opts = ContinuationOptions {
            lambda_min: Some(2.0),
            ..Default::default()
        };
        let branches = branches_from_eigenvalue(&quarter(), 1, &opts).unwrap();
        assert_eq!(branches.len(), 4);
        for b in &branches {
            assert_eq!(
                b.termination,
                Termination::ReachedLambdaMin,
                "{}",
                b.message
            );
            assert!(b.points.iter().all(|p| p.zeros == 2 && p.lambda < 4.0));
            assert!((b.points.last().unwrap().lambda - 2.0).abs() < 1e-12);
        }
        // Root 2 mirrors root 1.
        let (p1, p2) = (
            branches[0].points.last().unwrap(),
            branches[1].points.last().unwrap(),
        );
        assert!((p1.u0 + p2.u0).abs() < 1e-7 && (p1.v0 + p2.v0).abs() < 1e-7);
    }

    #[test]
    fn constant_weight_k0_branches() {
        let w = Weight::constant(PI, 1.0).unwrap();
        let opts = ContinuationOptions {
            lambda_min: Some(-3.0),
            ..Default::default()
        };
        let (pos, neg) = branch_k0(&w, &opts).unwrap();
        for b in [&pos, &neg] {
            assert_eq!(
                b.termination,
                Termination::ReachedLambdaMin,
                "{}",
                b.message
            );
        }
        for p in &pos.points {
            assert!(p.lambda < 0.0);
            assert!((p.u0 - (-p.lambda).sqrt()).abs() < 1e-8);
            assert!(p.v0.abs() < 1e-8);
        }
        assert_eq!(pos.points.len(), neg.points.len());
        for (p, q) in pos.points.iter().zip(&neg.points) {
            assert!((p.lambda - q.lambda).abs() <= 1e-9 && (p.u0 + q.u0).abs() <= 1e-9);
        }
    }

    #[test]
    fn predictor_consistency_near_sigma() {
        let w = quarter();
        let c = LsCoefficients::compute(&w, 1).unwrap();
        let root = crate::lsred::solve_local_roots(&c).unwrap()[0];
        let mut errs = Vec::new();
        for eps in [0.04, 0.01, 0.0025] {
            let lambda = 4.0 - eps;
            let p = local_predictor(&c, &root, lambda).unwrap();
            let pt = shoot_newton(&w, lambda, p.u0, p.v0).point.unwrap();
            let tr = integrate(&w, lambda, pt.u0, pt.v0).unwrap();
            let err = (0..=200)
                .map(|j| {
                    let t = PI * j as f64 / 200.0;
                    (tr.eval(t)[0] - p.eval(t)).abs()
                })
                .fold(0.0f64, f64::max)
                / eps.sqrt();
            errs.push(err);
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }
}

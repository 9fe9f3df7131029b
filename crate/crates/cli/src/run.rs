use anyhow::{bail, Result};
use perbif::autonomous::AutonomousProblem;
use perbif::continuation::{
    branch_k0, branches_from_eigenvalue, find_bifurcation_points, seed_points, Branch, Origin,
    Termination,
};
use perbif::lsred::{
    classify_structure, cubic_min_on_circle, solve_local_roots_any, CubicFamily, LsCoefficients,
};
use perbif::spectral::sigma;
use perbif::weights::{Segment, Weight, WeightConfig};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, Mode};
use crate::output::{num, FileRecord, OutputDir};

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub id: usize,
    pub k: usize,
    pub origin: Origin,
    pub termination: Termination,
    pub points: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitReport {
    pub mode: Mode,
    pub files: Vec<FileRecord>,
    pub branches: Vec<BranchSummary>,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    weight_file: String,
    weight: WeightConfig,
    report: &'a ExitReport,
}

struct Run<'a> {
    exp: &'a Experiment,
    out: OutputDir,
    branches: Vec<BranchSummary>,
    violations: Vec<String>,
    warnings: Vec<String>,
}

pub fn run(exp: &Experiment, mode: Mode, out: OutputDir) -> Result<ExitReport> {
    let mut r = Run {
        exp,
        out,
        branches: Vec::new(),
        violations: Vec::new(),
        warnings: Vec::new(),
    };
    match mode {
        Mode::Eigs => r.eigs()?,
        Mode::Autonomous => r.autonomous()?,
        Mode::Lscoeff => r.lscoeff()?,
        Mode::LocalBranches => r.local_branches()?,
        Mode::Continue => {
            r.continuation()?;
        }
        Mode::Diagram => r.diagram()?,
    }
    let report = ExitReport {
        mode,
        files: r.out.files.clone(),
        branches: r.branches,
        violations: r.violations,
        warnings: r.warnings,
    };
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &exp.config,
        weight_file: exp.weight_path.display().to_string(),
        weight: exp.base_weight.to_config(),
        report: &report,
    };
    r.out.write_json("manifest.json", &manifest)?;
    Ok(report)
}

fn flag(b: bool) -> String {
    (if b { "1" } else { "0" }).to_string()
}

/// `a` when the weight is the constant `a`.
fn constant_value(w: &Weight) -> Option<f64> {
    let mut value = None;
    for s in w.segments() {
        match (s, value) {
            (Segment::Constant(c), None) => value = Some(*c),
            (Segment::Constant(c), Some(v)) if *c == v => {}
            _ => return None,
        }
    }
    value
}

impl Run<'_> {
    fn cfg(&self) -> &ExperimentConfig {
        &self.exp.config
    }

    fn eigen_ks(&mut self) -> Vec<usize> {
        let ks: Vec<usize> = self.cfg().k.iter().filter(|&k| k >= 1).collect();
        if self.cfg().k.min == 0 {
            self.warnings
                .push("k = 0 has no reduced equation; skipped".into());
        }
        ks
    }

    fn eigs(&mut self) -> Result<()> {
        let cfg = self.cfg().clone();
        let n = cfg.n_subharmonic;
        let pts = find_bifurcation_points(self.exp.base_weight.period(), cfg.k.max, n);
        let mut rows = Vec::new();
        for p in pts.iter().filter(|p| p.k >= cfg.k.min) {
            let expected = if p.k == 0 { 1 } else { 2 };
            if p.kernel_dim != expected {
                self.violations.push(format!(
                    "k={}: kernel dimension {} (expected {expected})",
                    p.k, p.kernel_dim
                ));
            }
            rows.push(vec![
                p.k.to_string(),
                n.to_string(),
                num(p.sigma),
                p.kernel_dim.to_string(),
                num(p.gap),
            ]);
        }
        self.out
            .write_csv("eigs.csv", &["k", "n", "sigma", "kernel_dim", "gap"], &rows)
    }

    fn autonomous(&mut self) -> Result<()> {
        let w = self.exp.weight()?;
        let Some(a) = constant_value(&w) else {
            bail!("autonomous mode needs a constant weight");
        };
        let cfg = self.cfg().clone();
        let base = AutonomousProblem::new(a, cfg.lambda.min, w.period())?;
        let grid = cfg.lambda.grid();
        let mut rows = Vec::new();
        for k in self.eigen_ks() {
            let s = base.sigma(k);
            let mut last_e = f64::INFINITY;
            for (lambda, orbit) in base.orbit_family(k, &grid)? {
                if orbit.is_some() != (lambda < s) {
                    self.violations.push(format!(
                        "k={k}, lambda={lambda}: orbit existence disagrees with lambda < {s}"
                    ));
                }
                match orbit {
                    Some(o) => {
                        if !(o.e < last_e) {
                            self.violations.push(format!(
                                "k={k}: orbit energy not decreasing at lambda={lambda}"
                            ));
                        }
                        last_e = o.e;
                        let (u0, v0) = o.initial_state();
                        rows.push(vec![
                            k.to_string(),
                            num(lambda),
                            num(s),
                            flag(true),
                            num(o.e),
                            num(o.u_plus),
                            num(u0),
                            num(v0),
                            num(o.tau_residual),
                        ]);
                    }
                    None => {
                        let mut row = vec![k.to_string(), num(lambda), num(s), flag(false)];
                        row.extend(std::iter::repeat(String::new()).take(5));
                        rows.push(row);
                    }
                }
            }
        }
        self.out.write_csv(
            "autonomous_orbits.csv",
            &[
                "k",
                "lambda",
                "sigma",
                "exists",
                "energy",
                "u_plus",
                "u0",
                "v0",
                "tau_residual",
            ],
            &rows,
        )?;

        // Period function on a geometric energy grid at both window ends.
        let mut rows = Vec::new();
        let energies: Vec<f64> = (0..=48)
            .map(|i| 10f64.powf(-8.0 + 0.25 * i as f64))
            .collect();
        for lambda in [cfg.lambda.min, cfg.lambda.max] {
            let p = base.with_lambda(lambda);
            let mut last = f64::INFINITY;
            for &e in &energies {
                let tau = p.period_tau(e)?;
                if !(tau < last) {
                    self.violations
                        .push(format!("lambda={lambda}: period not decreasing at e={e:e}"));
                }
                last = tau;
                rows.push(vec![num(lambda), num(e), num(tau)]);
            }
        }
        self.out
            .write_csv("period_function.csv", &["lambda", "energy", "tau"], &rows)
    }

    fn lscoeff(&mut self) -> Result<()> {
        let w = self.exp.weight()?;
        let mut rows = Vec::new();
        for k in self.eigen_ks() {
            let c = LsCoefficients::compute(&w, k)?;
            let s = classify_structure(&c);
            let cmin = cubic_min_on_circle(&c, CubicFamily::General)?;
            let (plus, minus) = s.subcrit_margins;
            if s.satisfies_h && !(plus > 0.0 && minus > 0.0 && cmin > 0.0) {
                self.violations.push(format!(
                    "k={k}: a+2b={plus:e}, a-2b={minus:e}, min |C| on circle={cmin:e}"
                ));
            }
            let mut row = vec![k.to_string(), num(c.sigma())];
            row.extend(c.values().iter().map(|&x| num(x)));
            row.extend([
                flag(s.satisfies_h),
                flag(s.satisfies_8branch),
                flag(s.even_type),
                num(plus),
                num(minus),
                num(cmin),
            ]);
            rows.push(row);
        }
        self.out.write_csv(
            "lscoeff.csv",
            &[
                "k",
                "sigma",
                "a",
                "b",
                "c",
                "d",
                "e",
                "condition_h",
                "eight_branch",
                "even_type",
                "a_plus_2b",
                "a_minus_2b",
                "cubic_min",
            ],
            &rows,
        )
    }

    fn local_branches(&mut self) -> Result<()> {
        let w = self.exp.weight()?;
        let opts = self.exp.options();
        let mut root_rows = Vec::new();
        let mut seed_rows = Vec::new();
        for k in self.eigen_ks() {
            let c = LsCoefficients::compute(&w, k)?;
            let roots = solve_local_roots_any(&c)?;
            for r in &roots {
                if !r.regular {
                    self.warnings
                        .push(format!("k={k}: root {} is not regular", r.index));
                }
                root_rows.push(vec![
                    k.to_string(),
                    r.index.to_string(),
                    num(r.z),
                    num(r.w),
                    flag(r.regular),
                    num(r.det),
                    num(r.residual),
                    format!("{:?}", r.family),
                ]);
            }
            let lambda = c.sigma() * (1.0 - opts.seed_offset);
            for sd in seed_points(&w, k, &opts)? {
                let mut row = vec![
                    k.to_string(),
                    sd.root.to_string(),
                    num(lambda),
                    num(sd.predictor_u0),
                    num(sd.predictor_v0),
                    num(sd.predictor_amplitude),
                ];
                match sd.point {
                    Some(p) => row.extend([
                        flag(true),
                        num(p.u0),
                        num(p.v0),
                        p.zeros.to_string(),
                        p.parity.as_str().to_string(),
                        num(p.linf_u),
                    ]),
                    None => {
                        self.warnings
                            .push(format!("k={k}: shooting from root {} failed", sd.root));
                        row.push(flag(false));
                        row.extend(std::iter::repeat(String::new()).take(5));
                    }
                }
                seed_rows.push(row);
            }
        }
        self.out.write_csv(
            "local_roots.csv",
            &[
                "k", "root", "z", "w", "regular", "det", "residual", "family",
            ],
            &root_rows,
        )?;
        self.out.write_csv(
            "seeds.csv",
            &[
                "k",
                "root",
                "lambda",
                "predictor_u0",
                "predictor_v0",
                "predictor_amplitude",
                "converged",
                "u0",
                "v0",
                "zeros",
                "parity",
                "linf_u",
            ],
            &seed_rows,
        )
    }

    fn check_branch(&mut self, id: usize, b: &Branch) {
        let k = b.origin.k();
        let (zeros, bound) = match b.origin {
            Origin::Constant { .. } => (0, 0.0),
            _ => (2 * k, sigma(b_period(self.exp), k, 1)),
        };
        for (i, p) in b.points.iter().enumerate() {
            if p.zeros != zeros {
                self.violations.push(format!(
                    "branch {id} point {i}: {} zeros, expected {zeros}",
                    p.zeros
                ));
                break;
            }
            if !(p.lambda < bound) {
                self.violations.push(format!(
                    "branch {id} point {i}: lambda = {} is not below {bound}",
                    p.lambda
                ));
                break;
            }
        }
        match b.termination {
            Termination::ReachedLambdaMin | Termination::ClosedLoop => {}
            t => self.warnings.push(format!(
                "branch {id} ended with {}: {}",
                t.as_str(),
                b.message
            )),
        }
        self.branches.push(BranchSummary {
            id,
            k,
            origin: b.origin,
            termination: b.termination,
            points: b.points.len(),
            message: b.message.clone(),
        });
    }

    fn continuation(&mut self) -> Result<Vec<Branch>> {
        let w = self.exp.weight()?;
        let opts = self.exp.options();
        let mut branches = Vec::new();
        if self.cfg().k.min == 0 {
            if self.cfg().lambda.min < opts.k0_seed_lambda {
                let (pos, neg) = branch_k0(&w, &opts)?;
                branches.push(pos);
                branches.push(neg);
            } else {
                self.warnings.push(format!(
                    "k = 0 skipped: window starts at {}, above the seed {}",
                    self.cfg().lambda.min,
                    opts.k0_seed_lambda
                ));
            }
        }
        for k in self.cfg().k.iter().filter(|&k| k >= 1) {
            branches.extend(branches_from_eigenvalue(&w, k, &opts)?);
        }

        let mut summary = Vec::new();
        let mut points = Vec::new();
        for (id, b) in branches.iter().enumerate() {
            self.check_branch(id, b);
            let (lo, hi) = b.lambda_range();
            summary.push(vec![
                id.to_string(),
                b.origin.k().to_string(),
                origin_label(&b.origin),
                b.termination.as_str().to_string(),
                format!("{:?}", b.symmetry_class),
                b.points.len().to_string(),
                num(lo),
                num(hi),
                b.returned_near_root
                    .map(|r| r.to_string())
                    .unwrap_or_default(),
                b.special_points.len().to_string(),
            ]);
            for (i, p) in b.points.iter().enumerate() {
                points.push(vec![
                    id.to_string(),
                    i.to_string(),
                    num(p.lambda),
                    num(p.u0),
                    num(p.v0),
                    p.zeros.to_string(),
                    p.winding.to_string(),
                    p.parity.as_str().to_string(),
                    num(p.linf_u),
                    num(p.linf_du),
                    num(p.h2_norm),
                    num(p.residual),
                ]);
            }
        }
        self.out.write_csv(
            "branches.csv",
            &[
                "branch",
                "k",
                "origin",
                "termination",
                "symmetry",
                "points",
                "lambda_lo",
                "lambda_hi",
                "returned_near_root",
                "special_points",
            ],
            &summary,
        )?;
        self.out.write_csv(
            "branch_points.csv",
            &[
                "branch", "index", "lambda", "u0", "v0", "zeros", "winding", "parity", "linf_u",
                "linf_du", "h2_norm", "residual",
            ],
            &points,
        )?;
        Ok(branches)
    }

    fn diagram(&mut self) -> Result<()> {
        let branches = self.continuation()?;
        let cfg = self.cfg().clone();
        let period = b_period(self.exp);
        let mut rows = Vec::new();
        for k in cfg.k.iter() {
            let s = sigma(period, k, 1);
            if s >= cfg.lambda.min && s <= cfg.lambda.max {
                rows.push(vec![k.to_string(), num(s)]);
            }
        }
        self.out
            .write_csv("bifurcations.csv", &["k", "sigma"], &rows)?;

        // Signed amplitude against lambda; the trivial line is branch -1.
        let mut rows = vec![
            vec!["-1".into(), num(cfg.lambda.min), num(0.0), num(0.0)],
            vec!["-1".into(), num(cfg.lambda.max), num(0.0), num(0.0)],
        ];
        for (id, b) in branches.iter().enumerate() {
            for p in &b.points {
                let signed = if p.u0 < 0.0 { -p.linf_u } else { p.linf_u };
                rows.push(vec![
                    id.to_string(),
                    num(p.lambda),
                    num(signed),
                    num(p.h2_norm),
                ]);
            }
        }
        self.out.write_csv(
            "diagram.csv",
            &["branch", "lambda", "signed_linf_u", "h2_norm"],
            &rows,
        )
    }
}

fn b_period(exp: &Experiment) -> f64 {
    exp.base_weight.period() * exp.config.n_subharmonic as f64
}

fn origin_label(o: &Origin) -> String {
    match o {
        Origin::Eigen { k, root } => format!("eigen:{k}:{root}"),
        Origin::Constant { sign } => format!("constant:{sign}"),
        Origin::Manual => "manual".into(),
    }
}

//! Fourier-space representation of `T`-periodic functions, the linear
//! operator `v'' + lambda v`, and a Galerkin–Newton solver for
//! `u'' + lambda u + a(t) u^3 = 0`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussRule;
use crate::weights::Weight;

/// Default number of retained modes `N` (coefficients `-N..=N`).
pub const DEFAULT_MODES: usize = 64;
/// Distance from the spectrum below which `invert_l` refuses.
pub const RESONANCE_GUARD: f64 = 1e-8;
/// Tolerance on `coeff(-k) = conj(coeff(k))`.
pub const SYMMETRY_TOL: f64 = 1e-14;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `(2 pi k / (n T))^2`; `n = 1` gives the `T`-periodic eigenvalues.
pub fn sigma(period: f64, k: usize, n: usize) -> f64 {
    let w = 2.0 * PI * k as f64 / (n as f64 * period);
    w * w
}

fn wavenumber(period: f64, k: i64) -> f64 {
    2.0 * PI * k as f64 / period
}

/// Truncated Fourier series `u(t) = sum_{|k| <= N} c_k exp(i 2 pi k t / T)`
/// of a real function.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierVector {
    period: f64,
    coeffs: Vec<Complex64>,
}

impl FourierVector {
    pub fn zeros(period: f64, modes: usize) -> Self {
        Self {
            period,
            coeffs: vec![ZERO; 2 * modes + 1],
        }
    }

    pub fn constant(period: f64, modes: usize, value: f64) -> Self {
        let mut v = Self::zeros(period, modes);
        v.coeffs[modes] = Complex64::new(value, 0.0);
        v
    }

    /// Coefficients ordered `k = -N..=N`. Rejects input that is not the
    /// expansion of a real function.
    pub fn from_coeffs(period: f64, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() % 2 == 0 {
            return Err(Error::Structure {
                index: coeffs.len(),
                reason: "coefficient vector must have odd length 2N+1".into(),
            });
        }
        let v = Self { period, coeffs };
        let scale = v
            .coeffs
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            .max(1.0);
        let n = v.modes() as i64;
        for k in 0..=n {
            if (v.coeff(-k) - v.coeff(k).conj()).norm() > SYMMETRY_TOL * scale {
                return Err(Error::Structure {
                    index: (k + n) as usize,
                    reason: format!("coefficients at +-{k} are not conjugate"),
                });
            }
        }
        Ok(v)
    }

    /// `u(t) = a0 + sum_k (a_k cos + b_k sin)(2 pi k t / T)`.
    pub fn from_cos_sin(period: f64, a0: f64, cos: &[f64], sin: &[f64]) -> Self {
        let modes = cos.len().max(sin.len());
        let mut v = Self::constant(period, modes, a0);
        for (k, &a) in cos.iter().enumerate() {
            v.add_cos(k + 1, a);
        }
        for (k, &b) in sin.iter().enumerate() {
            v.add_sin(k + 1, b);
        }
        v
    }

    /// Normalized `sqrt(2/T) cos(2 pi k t / T)` (or the constant
    /// `1/sqrt(T)` for `k = 0`).
    pub fn eigen_cos(period: f64, modes: usize, k: usize) -> Self {
        let mut v = Self::zeros(period, modes);
        if k == 0 {
            v.coeffs[modes] = Complex64::new(1.0 / period.sqrt(), 0.0);
        } else {
            v.add_cos(k, (2.0 / period).sqrt());
        }
        v
    }

    /// Normalized `sqrt(2/T) sin(2 pi k t / T)`, `k >= 1`.
    pub fn eigen_sin(period: f64, modes: usize, k: usize) -> Self {
        let mut v = Self::zeros(period, modes);
        v.add_sin(k, (2.0 / period).sqrt());
        v
    }

    fn add_cos(&mut self, k: usize, amp: f64) {
        let n = self.modes();
        if k <= n {
            self.coeffs[n + k] += Complex64::new(0.5 * amp, 0.0);
            self.coeffs[n - k] += Complex64::new(0.5 * amp, 0.0);
        }
    }

    fn add_sin(&mut self, k: usize, amp: f64) {
        let n = self.modes();
        if k <= n {
            self.coeffs[n + k] += Complex64::new(0.0, -0.5 * amp);
            self.coeffs[n - k] += Complex64::new(0.0, 0.5 * amp);
        }
    }

    /// Discrete Fourier projection of uniform samples `u(j T / M)`,
    /// `j = 0..M`, truncated to `modes`.
    pub fn from_samples(period: f64, modes: usize, samples: &[f64]) -> Self {
        let m = samples.len();
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        let mut v = Self::zeros(period, modes);
        let inv = 1.0 / m as f64;
        for k in 0..=modes.min((m - 1) / 2) {
            let c = buf[k] * inv;
            v.coeffs[modes + k] = c;
            v.coeffs[modes - k] = c.conj();
        }
        v.coeffs[modes] = Complex64::new(buf[0].re * inv, 0.0);
        v
    }

    pub fn from_fn<F: Fn(f64) -> f64>(period: f64, modes: usize, grid: usize, f: F) -> Self {
        let samples: Vec<f64> = (0..grid)
            .map(|j| f(period * j as f64 / grid as f64))
            .collect();
        Self::from_samples(period, modes, &samples)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn modes(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        let n = self.modes() as i64;
        if k.abs() > n {
            ZERO
        } else {
            self.coeffs[(k + n) as usize]
        }
    }

    /// Same function with `modes` retained (zero-padded or truncated).
    pub fn resized(&self, modes: usize) -> Self {
        let mut v = Self::zeros(self.period, modes);
        let m = modes as i64;
        for k in -m..=m {
            v.coeffs[(k + m) as usize] = self.coeff(k);
        }
        v
    }

    pub fn map_coeffs<F: Fn(i64, Complex64) -> Complex64>(&self, f: F) -> Self {
        let n = self.modes() as i64;
        Self {
            period: self.period,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| f(i as i64 - n, c))
                .collect(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.modes() as i64;
        let z = Complex64::from_polar(1.0, wavenumber(self.period, 1) * t);
        let mut zk = Complex64::new(1.0, 0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            zk *= z;
            acc += (self.coeff(k) * zk).re;
        }
        self.coeff(0).re + 2.0 * acc
    }

    pub fn eval_derivative(&self, t: f64) -> f64 {
        let n = self.modes() as i64;
        let z = Complex64::from_polar(1.0, wavenumber(self.period, 1) * t);
        let mut zk = Complex64::new(1.0, 0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            zk *= z;
            acc -= k as f64 * (self.coeff(k) * zk).im;
        }
        2.0 * wavenumber(self.period, 1) * acc
    }

    /// Values on the uniform grid `j T / m`, `m > 2N`.
    pub fn samples(&self, m: usize) -> Vec<f64> {
        assert!(
            m > 2 * self.modes(),
            "grid too coarse for the retained modes"
        );
        let n = self.modes() as i64;
        let mut buf = vec![ZERO; m];
        for k in -n..=n {
            buf[k.rem_euclid(m as i64) as usize] = self.coeff(k);
        }
        FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// `||u||_{L^2} = (T sum |c_k|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.period * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Sobolev norm `(int u^2 + u'^2 + u''^2)^{1/2}`.
    pub fn h2_norm(&self) -> f64 {
        let n = self.modes() as i64;
        let s: f64 = (-n..=n)
            .map(|k| {
                let w2 = wavenumber(self.period, k).powi(2);
                (1.0 + w2 + w2 * w2) * self.coeff(k).norm_sqr()
            })
            .sum();
        (self.period * s).sqrt()
    }

    /// Index-weighted norm `(sum (1 + |k|^4) |c_k|^2)^{1/2}`.
    pub fn h2f_norm(&self) -> f64 {
        let n = self.modes() as i64;
        (-n..=n)
            .map(|k| (1.0 + (k * k * k * k) as f64) * self.coeff(k).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Maximum of `|u|` on a fine uniform grid.
    pub fn linf_norm(&self) -> f64 {
        let m = (8 * self.modes() + 64).next_power_of_two();
        self.samples(m).iter().fold(0.0, |a, x| a.max(x.abs()))
    }

    /// Real coordinates `[c_0, Re c_1, Im c_1, ..., Re c_N, Im c_N]`.
    pub fn to_real(&self) -> DVector<f64> {
        let n = self.modes();
        let mut x = DVector::zeros(2 * n + 1);
        x[0] = self.coeff(0).re;
        for k in 1..=n {
            let c = self.coeff(k as i64);
            x[2 * k - 1] = c.re;
            x[2 * k] = c.im;
        }
        x
    }

    pub fn from_real(period: f64, x: &DVector<f64>) -> Self {
        let n = (x.len() - 1) / 2;
        let mut v = Self::zeros(period, n);
        v.coeffs[n] = Complex64::new(x[0], 0.0);
        for k in 1..=n {
            let c = Complex64::new(x[2 * k - 1], x[2 * k]);
            v.coeffs[n + k] = c;
            v.coeffs[n - k] = c.conj();
        }
        v
    }

    /// `u(T - t) = u(t)`, i.e. all coefficients real.
    pub fn is_even(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|c| c.im.abs() <= tol)
    }

    /// `u(T - t) = -u(t)`, i.e. all coefficients imaginary.
    pub fn is_odd(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|c| c.re.abs() <= tol)
    }

    fn check_compatible(&self, other: &Self) {
        assert_eq!(self.coeffs.len(), other.coeffs.len(), "mode counts differ");
        assert_eq!(self.period, other.period, "periods differ");
    }
}

impl Add for &FourierVector {
    type Output = FourierVector;
    fn add(self, rhs: &FourierVector) -> FourierVector {
        self.check_compatible(rhs);
        FourierVector {
            period: self.period,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &FourierVector {
    type Output = FourierVector;
    fn sub(self, rhs: &FourierVector) -> FourierVector {
        self.check_compatible(rhs);
        FourierVector {
            period: self.period,
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul<f64> for &FourierVector {
    type Output = FourierVector;
    fn mul(self, s: f64) -> FourierVector {
        FourierVector {
            period: self.period,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }
}

/// Eigenvalue `sigma_k` of `-d^2/dt^2` with its normalized eigenfunctions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub k: usize,
    pub sigma: f64,
    pub period: f64,
    /// `(1 + 4 pi^2 k^2 / T^2 + 16 pi^4 k^4 / T^4)^{-1/2}`: rescales the
    /// L2-normalized eigenfunctions to unit H2 norm.
    pub h2_normalizer: f64,
    pub kernel_dim: usize,
}

impl EigenPair {
    pub fn new(period: f64, k: usize) -> Self {
        let s = sigma(period, k, 1);
        Self {
            k,
            sigma: s,
            period,
            h2_normalizer: 1.0 / (1.0 + s + s * s).sqrt(),
            kernel_dim: if k == 0 { 1 } else { 2 },
        }
    }

    /// L2-normalized kernel basis (one function for `k = 0`, cosine and
    /// sine otherwise).
    pub fn basis(&self, modes: usize) -> Vec<FourierVector> {
        if self.k == 0 {
            vec![FourierVector::eigen_cos(self.period, modes, 0)]
        } else {
            vec![
                FourierVector::eigen_cos(self.period, modes, self.k),
                FourierVector::eigen_sin(self.period, modes, self.k),
            ]
        }
    }

    pub fn h2_basis(&self, modes: usize) -> Vec<FourierVector> {
        self.basis(modes)
            .iter()
            .map(|b| b * self.h2_normalizer)
            .collect()
    }
}

/// `v'' + lambda v`, coefficient-wise `(lambda - (2 pi k / T)^2) c_k`.
pub fn apply_l(lambda: f64, u: &FourierVector) -> FourierVector {
    let t = u.period();
    u.map_coeffs(|k, c| c * (lambda - wavenumber(t, k).powi(2)))
}

/// Inverse of `v'' + lambda v` on the retained modes.
pub fn invert_l(lambda: f64, v: &FourierVector) -> Result<FourierVector> {
    let t = v.period();
    let n = v.modes();
    for k in 0..=n {
        let s = sigma(t, k, 1);
        if (lambda - s).abs() < RESONANCE_GUARD {
            return Err(Error::Resonance {
                k,
                sigma: s,
                lambda,
            });
        }
    }
    Ok(v.map_coeffs(|k, c| c / (lambda - wavenumber(t, k).powi(2))))
}

/// Real `(2N+1) x (2N+1)` matrix of `v'' + lambda v`, assembled column by
/// column from [`apply_l`].
pub fn operator_matrix(lambda: f64, period: f64, modes: usize) -> DMatrix<f64> {
    let dim = 2 * modes + 1;
    let mut m = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let col = apply_l(lambda, &FourierVector::from_real(period, &e)).to_real();
        m.set_column(j, &col);
    }
    m
}

/// Numerical kernel of `v'' + lambda v` from the singular values of its
/// truncated matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub dim: usize,
    /// Largest singular value counted as zero.
    pub largest_null: f64,
    /// Smallest singular value counted as nonzero.
    pub smallest_nonnull: f64,
    /// `smallest_nonnull / largest_null` (infinite for exact zeros).
    pub gap: f64,
    /// The kernel basis is not in the range of the operator, i.e. the
    /// derivative in `lambda` (the identity) maps the kernel off the range.
    pub transversal: bool,
}

pub fn kernel_report(lambda: f64, period: f64, modes: usize) -> KernelReport {
    let m = operator_matrix(lambda, period, modes);
    let svd = m.clone().svd(true, false);
    let sv = &svd.singular_values;
    let max = sv.iter().fold(0.0f64, |a, &x| a.max(x));
    let thresh = 1e-10 * max;
    let dim = sv.iter().filter(|&&s| s <= thresh).count();
    let largest_null = sv
        .iter()
        .filter(|&&s| s <= thresh)
        .fold(0.0f64, |a, &x| a.max(x));
    let smallest_nonnull = sv
        .iter()
        .filter(|&&s| s > thresh)
        .fold(f64::INFINITY, |a, &x| a.min(x));
    let gap = if largest_null == 0.0 {
        f64::INFINITY
    } else {
        smallest_nonnull / largest_null
    };
    // Range of the symmetric operator = orthogonal complement of its
    // kernel; a kernel vector is transversal iff its component orthogonal
    // to the left-singular null directions vanishes.
    let u = svd.u.expect("requested U");
    let transversal = (0..sv.len()).filter(|&i| sv[i] <= thresh).all(|i| {
        let kv = u.column(i);
        let range_part: f64 = (0..sv.len())
            .filter(|&j| sv[j] > thresh)
            .map(|j| u.column(j).dot(&kv).powi(2))
            .sum();
        range_part < 1e-20
    });
    KernelReport {
        dim,
        largest_null,
        smallest_nonnull,
        gap,
        transversal,
    }
}

/// Galerkin discretization of `F(lambda, u) = u'' + lambda u + a(t) u^3`
/// with exact Fourier coefficients of the weight.
///
/// Products are formed on an FFT grid of at least `16 N` points from the
/// `4N`-band truncation of `a`. That truncation already reproduces every
/// retained coefficient of `a u^3` exactly, and the grid is large enough
/// to be alias-free, so discontinuities in `a` cost nothing beyond
/// truncation of `u`.
pub struct GalerkinModel {
    period: f64,
    modes: usize,
    grid: usize,
    weight: Weight,
    /// `a_hat[m + 4N]` for `|m| <= 4N`.
    weight_hat: Vec<Complex64>,
    /// The `4N`-band truncation of `a` sampled on the grid.
    weight_grid: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GalerkinModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GalerkinModel")
            .field("period", &self.period)
            .field("modes", &self.modes)
            .field("grid", &self.grid)
            .finish()
    }
}

/// Outcome of [`GalerkinModel::newton_solve`].
#[derive(Debug, Clone)]
pub struct SpectralSolve {
    pub solution: Option<FourierVector>,
    pub iterations: usize,
    pub residual_l2: f64,
    /// Set when a Newton matrix was numerically singular (typically near a
    /// bifurcation point).
    pub singular_jacobian: bool,
}

pub const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_STEP_TOL: f64 = 1e-13;
/// Above this many modes Newton steps are solved by preconditioned GMRES;
/// the dense Jacobian on these low modes is the preconditioner.
pub const DENSE_MODES: usize = 256;
const GMRES_TOL: f64 = 1e-13;
const GMRES_RESTART: usize = 60;
const GMRES_MAX_RESTARTS: usize = 20;

impl GalerkinModel {
    pub fn new(weight: &Weight, modes: usize) -> Self {
        let period = weight.period();
        let band = 4 * modes as i64;
        let weight_hat: Vec<Complex64> = (-band..=band)
            .map(|m| weight.fourier_coefficient(m))
            .collect();
        // (P_4N a) u^3 has band 7N; retained modes are alias-free on M > 8N.
        let grid = (16 * modes).max(16).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid);
        let ifft = planner.plan_fft_inverse(grid);
        let mut buf = vec![ZERO; grid];
        for (i, &c) in weight_hat.iter().enumerate() {
            buf[(i as i64 - band).rem_euclid(grid as i64) as usize] = c;
        }
        ifft.process(&mut buf);
        Self {
            period,
            modes,
            grid,
            weight: weight.clone(),
            weight_hat,
            weight_grid: buf.iter().map(|z| z.re).collect(),
            fft,
            ifft,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Exact Fourier coefficient of the weight, `|m| <= 4N`.
    pub fn weight_coefficient(&self, m: i64) -> Complex64 {
        let band = 4 * self.modes as i64;
        if m.abs() > band {
            ZERO
        } else {
            self.weight_hat[(m + band) as usize]
        }
    }

    fn to_grid(&self, u: &FourierVector) -> Vec<f64> {
        let n = u.modes() as i64;
        let m = self.grid as i64;
        let mut buf = vec![ZERO; self.grid];
        for k in -n..=n {
            buf[k.rem_euclid(m) as usize] = u.coeff(k);
        }
        self.ifft.process(&mut buf);
        buf.iter().map(|z| z.re).collect()
    }

    /// Coefficients `|k| <= band` of grid values.
    fn from_grid(&self, values: &[f64], band: i64) -> Vec<Complex64> {
        let m = self.grid as i64;
        let mut buf: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        let inv = 1.0 / self.grid as f64;
        (-band..=band)
            .map(|k| buf[k.rem_euclid(m) as usize] * inv)
            .collect()
    }

    fn vector_from_grid(&self, values: &[f64]) -> FourierVector {
        let n = self.modes as i64;
        let c = self.from_grid(values, n);
        let mut out = FourierVector::zeros(self.period, self.modes);
        for k in 0..=n {
            let z = c[(k + n) as usize];
            out.coeffs[(n + k) as usize] = z;
            out.coeffs[(n - k) as usize] = z.conj();
        }
        out.coeffs[n as usize].im = 0.0;
        out
    }

    fn check(&self, u: &FourierVector) {
        assert_eq!(
            u.modes(),
            self.modes,
            "vector has {} modes, model {}",
            u.modes(),
            self.modes
        );
        assert!(
            (u.period() - self.period).abs() <= 1e-12 * self.period,
            "period mismatch"
        );
    }

    /// Fourier coefficients of `a(t) u(t)^3`, truncated to `|k| <= N`.
    pub fn cubic_term(&self, u: &FourierVector) -> FourierVector {
        self.check(u);
        let g = self.to_grid(u);
        let values: Vec<f64> = g
            .iter()
            .zip(&self.weight_grid)
            .map(|(x, a)| a * x * x * x)
            .collect();
        self.vector_from_grid(&values)
    }

    /// `u'' + lambda u + a u^3` projected on the retained modes.
    pub fn residual(&self, lambda: f64, u: &FourierVector) -> FourierVector {
        &apply_l(lambda, u) + &self.cubic_term(u)
    }

    /// `v'' + lambda v + 3 a u^2 v` projected on the retained modes.
    pub fn jacobian_apply(
        &self,
        lambda: f64,
        u: &FourierVector,
        v: &FourierVector,
    ) -> FourierVector {
        self.check(u);
        self.check(v);
        let gu = self.to_grid(u);
        let gv = self.to_grid(v);
        let values: Vec<f64> = gu
            .iter()
            .zip(&gv)
            .zip(&self.weight_grid)
            .map(|((x, y), a)| 3.0 * a * x * x * y)
            .collect();
        &apply_l(lambda, v) + &self.vector_from_grid(&values)
    }

    /// Coefficients of `3 a u^2` for `|m| <= 2N`.
    fn linear_coupling(&self, u: &FourierVector) -> Vec<Complex64> {
        let g = self.to_grid(u);
        let values: Vec<f64> = g
            .iter()
            .zip(&self.weight_grid)
            .map(|(x, a)| 3.0 * a * x * x)
            .collect();
        self.from_grid(&values, 2 * self.modes as i64)
    }

    /// Real matrix of `v -> v'' + lambda v + 3 a u^2 v`.
    pub fn jacobian(&self, lambda: f64, u: &FourierVector) -> DMatrix<f64> {
        self.check(u);
        self.jacobian_block(lambda, &self.linear_coupling(u), self.modes)
    }

    /// Jacobian restricted to modes `|k| <= n`.
    fn jacobian_block(&self, lambda: f64, g: &[Complex64], n: usize) -> DMatrix<f64> {
        let band = 2 * self.modes as i64;
        let g_at = |m: i64| -> Complex64 {
            if m.abs() > band {
                ZERO
            } else {
                g[(m + band) as usize]
            }
        };
        let n = n as i64;
        let dim = (2 * n + 1) as usize;
        let mut jac = DMatrix::zeros(dim, dim);
        let i = Complex64::new(0.0, 1.0);
        let mut row = Vec::with_capacity(dim);
        for k in 0..=n {
            let d_k = lambda - wavenumber(self.period, k).powi(2);
            // Columns: x_0, then (x_j, y_j) for j >= 1.
            row.clear();
            let mut c0 = g_at(k);
            if k == 0 {
                c0 += d_k;
            }
            row.push(c0);
            for j in 1..=n {
                let mut dx = g_at(k - j) + g_at(k + j);
                let mut dy = i * (g_at(k - j) - g_at(k + j));
                if j == k {
                    dx += d_k;
                    dy += i * d_k;
                }
                row.push(dx);
                row.push(dy);
            }
            if k == 0 {
                for (col, z) in row.iter().enumerate() {
                    jac[(0, col)] = z.re;
                }
            } else {
                let (re_row, im_row) = (2 * k as usize - 1, 2 * k as usize);
                for (col, z) in row.iter().enumerate() {
                    jac[(re_row, col)] = z.re;
                    jac[(im_row, col)] = z.im;
                }
            }
        }
        jac
    }

    /// Newton step `J^{-1} r` at `u`, or `None` if `J` is numerically
    /// singular.
    fn newton_step(
        &self,
        lambda: f64,
        u: &FourierVector,
        r: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let g = self.linear_coupling(u);
        let coarse = self.modes.min(DENSE_MODES);
        let lu = self.jacobian_block(lambda, &g, coarse).lu();
        let diag = lu.u().diagonal();
        let dmax = diag.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let dmin = diag.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        if !(dmin > 1e-14 * dmax) {
            return None;
        }
        if coarse == self.modes {
            return lu.solve(r);
        }
        let low = 2 * coarse + 1;
        let g0 = g[2 * self.modes].re;
        let precondition = |x: &DVector<f64>| -> DVector<f64> {
            let mut y = x.clone();
            let head = lu
                .solve(&x.rows(0, low).into_owned())
                .unwrap_or_else(|| x.rows(0, low).into_owned());
            y.rows_mut(0, low).copy_from(&head);
            for idx in low..x.len() {
                let k = ((idx + 1) / 2) as i64;
                y[idx] /= lambda - wavenumber(self.period, k).powi(2) + g0;
            }
            y
        };
        let apply = |x: &DVector<f64>| -> DVector<f64> {
            self.jacobian_apply(lambda, u, &FourierVector::from_real(self.period, x))
                .to_real()
        };
        gmres(apply, precondition, r)
    }

    /// Values `(u(0), u'(0))` recovered from a Galerkin solution by one
    /// pass through the periodic Green's function of `d^2/dt^2 - m^2`.
    ///
    /// Truncating the series directly gives `u'(0)` only to `O(1/N)`
    /// because `u''` jumps wherever `a` does; the integral form converges
    /// at the rate of the `L^2` error instead.
    pub fn point_values(&self, lambda: f64, u: &FourierVector) -> (f64, f64) {
        self.check(u);
        let period = self.period;
        let m = 2.0 * PI / period;
        let mu = m * m;
        let half = 0.5 * period;
        let sh = (m * half).sinh();
        let rule = GaussRule::new(10);
        // Panels of width T / q, so that u at the same Gauss node of
        // consecutive panels is one inverse DFT of length q.
        let q = 2 * self.modes.max(1);
        let width = period / q as f64;
        let ifft = FftPlanner::new().plan_fft_inverse(q);
        let n = self.modes as i64;
        let mut value = 0.0;
        let mut slope = 0.0;
        let mut add = |i: usize, s: f64, wq: f64, us: f64| {
            let f = -(lambda + mu) * us - self.weight.eval_in_segment(i, s) * us.powi(3);
            value -= wq * (m * (s - half)).cosh() / (2.0 * m * sh) * f;
            slope -= wq * (m * (half - s)).sinh() / (2.0 * sh) * f;
        };
        let mut buf = vec![ZERO; q];
        for (i, (lo, hi, _)) in self.weight.pieces().enumerate() {
            let full = ((hi - lo) / width).floor() as usize;
            if full > 0 {
                for (x, wq) in rule.points(0.0, width) {
                    buf.iter_mut().for_each(|z| *z = ZERO);
                    let z = Complex64::from_polar(1.0, m * (lo + x));
                    let mut zk = Complex64::new(1.0, 0.0);
                    buf[0] = u.coeff(0);
                    for k in 1..=n {
                        zk *= z;
                        let d = u.coeff(k) * zk;
                        buf[(k as usize) % q] += d;
                        buf[(q - (k as usize) % q) % q] += d.conj();
                    }
                    ifft.process(&mut buf);
                    for (p, v) in buf.iter().take(full).enumerate() {
                        add(i, lo + x + p as f64 * width, wq, v.re);
                    }
                }
            }
            let rest = lo + full as f64 * width;
            if hi - rest > 1e-15 * period {
                for (s, wq) in rule.points(rest, hi) {
                    add(i, s, wq, u.eval(s));
                }
            }
        }
        (value, slope)
    }

    /// Damped Newton iteration on the truncated residual.
    pub fn newton_solve(&self, lambda: f64, guess: &FourierVector) -> SpectralSolve {
        let mut u = guess.resized(self.modes);
        if !u
            .coeffs
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
        {
            return SpectralSolve {
                solution: None,
                iterations: 0,
                residual_l2: f64::NAN,
                singular_jacobian: false,
            };
        }
        let mut res = self.residual(lambda, &u);
        let mut norm = res.l2_norm();
        let mut singular = false;
        // A small residual alone is not enough when the Jacobian is poorly
        // conditioned; also require the last correction to be negligible.
        let mut settled = norm == 0.0;
        let done = |u: FourierVector, iterations, norm, singular| SpectralSolve {
            solution: Some(u),
            iterations,
            residual_l2: norm,
            singular_jacobian: singular,
        };
        for iter in 0..=NEWTON_MAX_ITER {
            if norm < NEWTON_TOL && settled {
                return done(u, iter, norm, singular);
            }
            if iter == NEWTON_MAX_ITER {
                break;
            }
            let Some(step) = self.newton_step(lambda, &u, &res.to_real()) else {
                singular = true;
                break;
            };
            let x = u.to_real();
            settled = step.norm() <= NEWTON_STEP_TOL * (1.0 + x.norm());
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = FourierVector::from_real(self.period, &(&x - &step * alpha));
                let trial_res = self.residual(lambda, &trial);
                let trial_norm = trial_res.l2_norm();
                if trial_norm < (1.0 - 1e-4 * alpha) * norm {
                    u = trial;
                    res = trial_res;
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // At the rounding floor no step can reduce the residual.
                if norm < NEWTON_TOL {
                    return done(u, iter + 1, norm, singular);
                }
                break;
            }
        }
        SpectralSolve {
            solution: None,
            iterations: NEWTON_MAX_ITER,
            residual_l2: norm,
            singular_jacobian: singular,
        }
    }
}

/// Restarted GMRES with right preconditioning, started from zero.
fn gmres(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    precondition: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    let bnorm = b.norm();
    let mut x = DVector::zeros(b.len());
    if bnorm == 0.0 {
        return Some(x);
    }
    for _ in 0..GMRES_MAX_RESTARTS {
        let r = b - apply(&x);
        let beta = r.norm();
        if beta <= GMRES_TOL * bnorm {
            return Some(x);
        }
        let m = GMRES_RESTART;
        let mut basis: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut rhs = vec![0.0; m + 1];
        rhs[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let mut w = apply(&precondition(&basis[j]));
            for (i, q) in basis.iter().enumerate() {
                h[(i, j)] = w.dot(q);
                w.axpy(-h[(i, j)], q, 1.0);
            }
            h[(j + 1, j)] = w.norm();
            for i in 0..j {
                let t = cs[i] * h[(i, j)] + sn[i] * h[(i + 1, j)];
                h[(i + 1, j)] = -sn[i] * h[(i, j)] + cs[i] * h[(i + 1, j)];
                h[(i, j)] = t;
            }
            let d = h[(j, j)].hypot(h[(j + 1, j)]);
            if d == 0.0 {
                return None;
            }
            cs[j] = h[(j, j)] / d;
            sn[j] = h[(j + 1, j)] / d;
            h[(j, j)] = d;
            h[(j + 1, j)] = 0.0;
            rhs[j + 1] = -sn[j] * rhs[j];
            rhs[j] *= cs[j];
            used = j + 1;
            let hn = w.norm();
            if rhs[j + 1].abs() <= GMRES_TOL * bnorm || hn == 0.0 {
                break;
            }
            basis.push(w / hn);
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = (i + 1..used).map(|l| h[(i, l)] * y[l]).sum();
            y[i] = (rhs[i] - s) / h[(i, i)];
        }
        let mut z = DVector::zeros(b.len());
        for (yi, q) in y.iter().zip(&basis) {
            z.axpy(*yi, q, 1.0);
        }
        x += precondition(&z);
    }
    let r = b - apply(&x);
    (r.norm() <= 1e-8 * bnorm).then_some(x)
}

/// `(u(0), u'(0))` of a spectral solution with an error indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValues {
    pub u0: f64,
    pub v0: f64,
    /// Values from the solve with half as many modes.
    pub coarse: (f64, f64),
    /// Distance between the two levels; with jumps in `a` the error of the
    /// finer level is roughly an eighth of this.
    pub estimate: f64,
}

/// Solves with `modes / 2` and then `modes` retained modes, each seeded by
/// the previous solution, and reads off `(u(0), u'(0))` through
/// [`GalerkinModel::point_values`]. Returns `None` if either solve fails.
pub fn refined_point_values(
    weight: &Weight,
    lambda: f64,
    guess: &FourierVector,
    modes: usize,
) -> Option<PointValues> {
    let coarse = GalerkinModel::new(weight, (modes / 2).max(1));
    let uc = coarse.newton_solve(lambda, guess).solution?;
    let (c0, c1) = coarse.point_values(lambda, &uc);
    let fine = GalerkinModel::new(weight, modes);
    let uf = fine.newton_solve(lambda, &uc).solution?;
    let (u0, v0) = fine.point_values(lambda, &uf);
    Some(PointValues {
        u0,
        v0,
        coarse: (c0, c1),
        estimate: (u0 - c0).hypot(v0 - c1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_values() {
        assert_eq!(sigma(PI, 1, 1), 4.0);
        assert_eq!(sigma(PI, 2, 1), 16.0);
        assert_eq!(sigma(PI, 0, 1), 0.0);
        assert!((sigma(PI, 1, 2) - 1.0).abs() < 1e-15);
        assert!((sigma(2.0 * PI, 3, 1) - 9.0).abs() < 1e-14);
    }

    #[test]
    fn linear_operator_examples() {
        let phi = FourierVector::eigen_cos(PI, 8, 1);
        assert!(apply_l(4.0, &phi).l2_norm() < 1e-15);
        let one = FourierVector::constant(PI, 8, 1.0);
        assert!(apply_l(0.0, &one).l2_norm() == 0.0);
        assert_eq!(apply_l(1.0, &one), one);
        let inv = invert_l(-1.0, &phi).unwrap();
        assert!((&inv - &(&phi * (-0.2))).l2_norm() < 1e-16);
        let c = FourierVector::constant(PI, 8, 3.5);
        assert_eq!(invert_l(1.0, &c).unwrap(), c);
        match invert_l(4.0 - 1e-12, &phi) {
            Err(Error::Resonance { k, sigma, .. }) => {
                assert_eq!(k, 1);
                assert_eq!(sigma, 4.0);
            }
            other => panic!("expected resonance, got {other:?}"),
        }
    }

    #[test]
    fn eigenfunction_normalization() {
        for k in [0usize, 1, 3] {
            let e = EigenPair::new(2.7, k);
            for b in e.basis(8) {
                assert!((b.l2_norm() - 1.0).abs() < 1e-14);
            }
            for b in e.h2_basis(8) {
                assert!((b.h2_norm() - 1.0).abs() < 1e-14);
            }
            assert_eq!(e.basis(8).len(), e.kernel_dim);
        }
    }

    #[test]
    fn kernel_dimensions() {
        let r = kernel_report(0.0, PI, 12);
        assert_eq!(r.dim, 1);
        assert!(r.transversal);
        for k in 1..=4 {
            let r = kernel_report(sigma(PI, k, 1), PI, 12);
            assert_eq!(r.dim, 2, "k={k}");
            assert!(r.gap >= 1e8);
            assert!(r.transversal);
        }
        assert_eq!(kernel_report(5.0, PI, 12).dim, 0);
    }

    #[test]
    fn samples_and_projection_agree() {
        let u = FourierVector::from_cos_sin(2.0, 0.3, &[1.0, 0.0, -0.25], &[0.5, 0.125]);
        let s = u.samples(64);
        for (j, &x) in s.iter().enumerate() {
            assert!((x - u.eval(2.0 * j as f64 / 64.0)).abs() < 1e-14);
        }
        let back = FourierVector::from_samples(2.0, 3, &s);
        assert!((&back - &u).l2_norm() < 1e-14);
        assert!((u.eval_derivative(0.0) - (PI * 0.5 + 2.0 * PI * 0.125)).abs() < 1e-13);
    }

    #[test]
    fn conjugate_symmetry_enforced() {
        let bad = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(2.0, 0.0),
        ];
        assert!(FourierVector::from_coeffs(1.0, bad).is_err());
        let good = vec![
            Complex64::new(1.0, -1.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(1.0, 1.0),
        ];
        assert!(FourierVector::from_coeffs(1.0, good).is_ok());
    }

    #[test]
    fn residual_trivial_cases() {
        let w = Weight::indicators(PI, &[(0.0, PI / 4.0, 1.0)]).unwrap();
        let model = GalerkinModel::new(&w, 16);
        let zero = FourierVector::zeros(PI, 16);
        assert_eq!(model.residual(2.3, &zero).l2_norm(), 0.0);
        let no_weight =
            Weight::new(PI, vec![0.0, PI], vec![crate::weights::Segment::Zero]).unwrap();
        let model = GalerkinModel::new(&no_weight, 16);
        let phi = FourierVector::eigen_cos(PI, 16, 1);
        assert!(model.residual(4.0, &phi).l2_norm() < 1e-15);
    }

    #[test]
    fn cubic_term_of_constant_weight() {
        // a = 2, u = cos(2t): a u^3 = (3/2) cos 2t + (1/2) cos 6t
        let w = Weight::constant(PI, 2.0).unwrap();
        let model = GalerkinModel::new(&w, 8);
        let u = FourierVector::from_cos_sin(PI, 0.0, &[1.0], &[]).resized(8);
        let got = model.cubic_term(&u);
        let expected = FourierVector::from_cos_sin(PI, 0.0, &[1.5, 0.0, 0.5], &[]).resized(8);
        assert!(
            (&got - &expected).l2_norm() < 1e-14,
            "{:?}",
            (&got - &expected).coeffs()
        );
    }

    #[test]
    fn newton_from_exact_root() {
        let w = Weight::constant(PI, 1.0).unwrap();
        let model = GalerkinModel::new(&w, 16);
        let out = model.newton_solve(3.0, &FourierVector::zeros(PI, 16));
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution.unwrap().l2_norm(), 0.0);
        // Constant solution u = sqrt(-lambda) for a = 1.
        let out = model.newton_solve(-2.0, &FourierVector::constant(PI, 16, 1.2));
        let u = out.solution.unwrap();
        assert!((u.coeff(0).re - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matrix_free_jacobian_agrees_with_matrix() {
        let w = Weight::indicators(PI, &[(0.0, PI / 4.0, 1.0)]).unwrap();
        let model = GalerkinModel::new(&w, 12);
        let u = random_vector(
            12,
            &[
                0.9, -0.4, 0.3, 0.2, -0.1, 0.05, 0.3, -0.2, 0.1, 0.4, -0.3, 0.2,
            ],
        );
        let v = random_vector(
            12,
            &[
                -0.2, 0.7, 0.1, -0.5, 0.3, 0.2, 0.1, 0.6, -0.4, 0.2, 0.1, -0.1,
            ],
        );
        let dense = &model.jacobian(1.3, &u) * v.to_real();
        let free = model.jacobian_apply(1.3, &u, &v).to_real();
        assert!((dense - free).norm() < 1e-12);
    }

    #[test]
    fn krylov_newton_matches_dense_newton() {
        // Above DENSE_MODES the step comes from preconditioned GMRES; the
        // converged low modes must match the dense solve at the same size.
        let w = Weight::indicators(PI, &[(0.0, PI / 4.0, 1.0)]).unwrap();
        let guess = &(&FourierVector::eigen_cos(PI, 8, 1) * 1.3)
            + &(&FourierVector::eigen_sin(PI, 8, 1) * 1.3);
        let small = GalerkinModel::new(&w, DENSE_MODES);
        let big = GalerkinModel::new(&w, DENSE_MODES + 64);
        let us = small.newton_solve(3.0, &guess).solution.unwrap();
        let ub = big.newton_solve(3.0, &guess).solution.unwrap();
        assert!(big.residual(3.0, &ub).l2_norm() < NEWTON_TOL);
        assert!((&ub.resized(DENSE_MODES) - &us).l2_norm() < 1e-7);
    }

    #[test]
    fn point_values_of_smooth_solution() {
        // For a = 1 the solution is analytic and the series is exact to
        // rounding; the Green readout must reproduce it.
        let w = Weight::constant(PI, 1.0).unwrap();
        let model = GalerkinModel::new(&w, 48);
        let guess = &FourierVector::eigen_cos(PI, 48, 1) * 1.1;
        let u = model.newton_solve(2.5, &guess).solution.unwrap();
        let (u0, v0) = model.point_values(2.5, &u);
        assert!((u0 - u.eval(0.0)).abs() < 1e-11);
        assert!((v0 - u.eval_derivative(0.0)).abs() < 1e-10);
        let t = 0.37;
        let shifted = u.map_coeffs(|k, c| c * Complex64::from_polar(1.0, wavenumber(PI, k) * t));
        let (u1, v1) = model.point_values(2.5, &shifted);
        assert!((u1 - u.eval(t)).abs() < 1e-11);
        assert!((v1 - u.eval_derivative(t)).abs() < 1e-10);
    }

    fn random_vector(modes: usize, seed: &[f64]) -> FourierVector {
        let cos: Vec<f64> = seed
            .iter()
            .take(modes)
            .enumerate()
            .map(|(k, x)| x / (1.0 + k as f64).powi(2))
            .collect();
        let sin: Vec<f64> = seed
            .iter()
            .skip(modes)
            .take(modes)
            .enumerate()
            .map(|(k, x)| x / (1.0 + k as f64).powi(2))
            .collect();
        FourierVector::from_cos_sin(PI, seed[0], &cos, &sin).resized(modes)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invert_then_apply_is_identity(
            lambda in -20.0f64..20.0,
            seed in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let near = (0..=8).any(|k| (lambda - sigma(PI, k, 1)).abs() < 1e-3);
            prop_assume!(!near);
            let v = random_vector(8, &seed);
            let back = apply_l(lambda, &invert_l(lambda, &v).unwrap());
            prop_assert!((&back - &v).l2_norm() <= 1e-12 * v.l2_norm().max(1.0));
        }

        #[test]
        fn jacobian_matches_central_differences(
            lambda in -5.0f64..10.0,
            seed in proptest::collection::vec(-1.0f64..1.0, 12),
            dir in proptest::collection::vec(-1.0f64..1.0, 13),
        ) {
            let w = Weight::indicators(PI, &[(0.3, 0.5, 1.0), (PI - 0.5, PI - 0.3, 0.95)]).unwrap();
            let model = GalerkinModel::new(&w, 6);
            let u = random_vector(6, &seed);
            let jac = model.jacobian(lambda, &u);
            let d = DVector::from_vec(dir);
            let h = 1e-7;
            let x = u.to_real();
            let plus = model.residual(lambda, &FourierVector::from_real(PI, &(&x + &d * h))).to_real();
            let minus = model.residual(lambda, &FourierVector::from_real(PI, &(&x - &d * h))).to_real();
            let fd = (plus - minus) / (2.0 * h);
            let an = &jac * &d;
            prop_assert!((&fd - &an).norm() <= 1e-6 * an.norm().max(1e-3), "fd {} vs {}", fd.norm(), an.norm());
        }
    }
}

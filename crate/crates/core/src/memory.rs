//! Convolution (memory kernel) formulation of the constitutive laws.
//!
//! A [`KernelFunction`] is a finite sum of oscillator impulse responses and
//! exponential polynomials `Re(c t^p exp(lambda t))`. Every such kernel has a
//! finite-dimensional realization: oscillators become `(P, P')` pairs and an
//! exponential polynomial becomes the chain
//! `z_j = int (t-s)^j / j! exp(lambda (t-s)) E(s) ds`, `j = 0..p`.
//! That is what lets [`simulate_convolution_mode`] produce exact mode
//! trajectories for kernels that do not come from a Lorentz material.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{gauss_legendre, linear_fit};
use crate::material::{kernel_jet, Branch, MaterialParams, Oscillator};
use crate::mode::{build_generator, CVec3, ModeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("grid spacing {spacing} exceeds 1/8 of the kernel oscillation period {period}")]
    GridTooCoarse { spacing: f64, period: f64 },
    #[error("u(0) = {0}, the quadratic form lemma needs u(0) = 0")]
    NonzeroInitialValue(f64),
    #[error("kernel or one of its first three derivatives is not finite at t = {0}")]
    KernelNotC3(f64),
    #[error("supplied {branch} kernel differs from the trajectory's at t = {t}: {supplied} vs {actual}")]
    KernelMaterialMismatch { branch: Branch, t: f64, supplied: f64, actual: f64 },
    #[error("grid must start at 0 and increase strictly")]
    InvalidGrid,
    #[error("cannot parse kernel spec: {0}")]
    Parse(String),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelTerm {
    /// `weight * chi_osc(t)`, the impulse response of `x'' + alpha x' + omega0^2 x`.
    Oscillator { weight: f64, omega0: f64, alpha: f64 },
    /// `Re(coef t^power exp(rate t))`.
    ExpPoly { coef: Complex64, power: u32, rate: Complex64 },
}

impl KernelTerm {
    fn jet(&self, t: f64) -> [f64; 4] {
        match *self {
            KernelTerm::Oscillator { weight, omega0, alpha } => {
                kernel_jet(&Oscillator::new(1.0, omega0, alpha), t).map(|v| weight * v)
            }
            KernelTerm::ExpPoly { coef, power, rate } => {
                let mut out = [0.0; 4];
                let e = (rate * t).exp();
                for (n, slot) in out.iter_mut().enumerate() {
                    // d^n/dt^n t^p e^{rt} = sum_i C(n,i) p!/(p-i)! t^(p-i) r^(n-i) e^{rt}
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..=n.min(power as usize) {
                        let falling: f64 = (0..i).map(|q| (power as usize - q) as f64).product();
                        acc += binomial(n, i) * falling * t.powi(power as i32 - i as i32) * rate.powi((n - i) as i32);
                    }
                    *slot = (coef * acc * e).re;
                }
                out
            }
        }
    }

    fn period(&self) -> Option<f64> {
        match *self {
            KernelTerm::Oscillator { omega0, alpha, .. } => Oscillator::new(1.0, omega0, alpha).oscillation_period(),
            KernelTerm::ExpPoly { rate, .. } if rate.im != 0.0 => Some(2.0 * std::f64::consts::PI / rate.im.abs()),
            _ => None,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFunction {
    pub terms: Vec<KernelTerm>,
}

impl KernelFunction {
    pub fn new(terms: Vec<KernelTerm>) -> Self {
        Self { terms }
    }

    /// `chi_nu = sum Omega^2 chi_j` of a material branch.
    pub fn from_material(material: &MaterialParams, branch: Branch) -> Self {
        Self::new(
            material
                .branch(branch)
                .iter()
                .map(|o| KernelTerm::Oscillator { weight: o.coupling * o.coupling, omega0: o.omega0, alpha: o.alpha })
                .collect(),
        )
    }

    /// `(1 - exp(-alpha t)) / alpha`, or `t` when `alpha = 0`.
    pub fn drude(alpha: f64) -> Self {
        Self::new(vec![KernelTerm::Oscillator { weight: 1.0, omega0: 0.0, alpha }])
    }

    pub fn lorentz(alpha: f64, omega0: f64) -> Self {
        Self::new(vec![KernelTerm::Oscillator { weight: 1.0, omega0, alpha }])
    }

    pub fn exp_poly(coef: f64, power: u32, rate: f64) -> KernelTerm {
        KernelTerm::ExpPoly { coef: coef.into(), power, rate: rate.into() }
    }

    /// `2 - exp(-t)`.
    pub fn two_minus_exp() -> Self {
        Self::new(vec![Self::exp_poly(2.0, 0, 0.0), Self::exp_poly(-1.0, 0, -1.0)])
    }

    /// `c t`.
    pub fn linear(c: f64) -> Self {
        Self::new(vec![Self::exp_poly(c, 1, 0.0)])
    }

    /// Parses a `+`-separated sum of `drude(a[, w])`, `lorentz(a, w0[, w])`,
    /// `const(c)`, `linear(c)`, `exp(c, r)`, `texp(c, r)` and
    /// `cexp(c_re, c_im, p, r_re, r_im)` terms.
    pub fn parse(spec: &str) -> Result<Self, MemoryError> {
        let err = || MemoryError::Parse(spec.to_string());
        let mut terms = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        let bytes = spec.as_bytes();
        let mut pieces = Vec::new();
        for (i, &b) in bytes.iter().enumerate() {
            match b {
                b'(' => depth += 1,
                b')' => depth -= 1,
                b'+' if depth == 0 => {
                    pieces.push(&spec[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        pieces.push(&spec[start..]);
        for piece in pieces {
            let piece = piece.trim();
            let open = piece.find('(').ok_or_else(err)?;
            if !piece.ends_with(')') {
                return Err(err());
            }
            let name = piece[..open].trim();
            let args: Vec<f64> = piece[open + 1..piece.len() - 1]
                .split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|_| err()))
                .collect::<Result<_, _>>()?;
            let term = match (name, args.as_slice()) {
                ("drude", [a]) => KernelTerm::Oscillator { weight: 1.0, omega0: 0.0, alpha: *a },
                ("drude", [a, w]) => KernelTerm::Oscillator { weight: *w, omega0: 0.0, alpha: *a },
                ("lorentz", [a, w0]) => KernelTerm::Oscillator { weight: 1.0, omega0: *w0, alpha: *a },
                ("lorentz", [a, w0, w]) => KernelTerm::Oscillator { weight: *w, omega0: *w0, alpha: *a },
                ("const", [c]) => Self::exp_poly(*c, 0, 0.0),
                ("linear", [c]) => Self::exp_poly(*c, 1, 0.0),
                ("exp", [c, r]) => Self::exp_poly(*c, 0, *r),
                ("texp", [c, r]) => Self::exp_poly(*c, 1, *r),
                ("cexp", [cr, ci, p, rr, ri]) if *p >= 0.0 && p.fract() == 0.0 => KernelTerm::ExpPoly {
                    coef: Complex64::new(*cr, *ci),
                    power: *p as u32,
                    rate: Complex64::new(*rr, *ri),
                },
                _ => return Err(err()),
            };
            if let KernelTerm::Oscillator { omega0, alpha, .. } = term {
                if omega0 < 0.0 || alpha < 0.0 {
                    return Err(err());
                }
            }
            terms.push(term);
        }
        Ok(Self::new(terms))
    }

    /// `[chi, chi', chi'', chi''']` at `t`.
    pub fn jet(&self, t: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for term in &self.terms {
            for (o, v) in out.iter_mut().zip(term.jet(t)) {
                *o += v;
            }
        }
        out
    }

    pub fn value(&self, t: f64) -> f64 {
        self.jet(t)[0]
    }

    /// Shortest oscillation period among the terms, if any oscillates.
    pub fn oscillation_period(&self) -> Option<f64> {
        self.terms.iter().filter_map(|t| t.period()).reduce(f64::min)
    }

    fn check_c3(&self, times: &[f64]) -> Result<(), MemoryError> {
        for &t in times {
            if self.jet(t).iter().any(|v| !v.is_finite()) {
                return Err(MemoryError::KernelNotC3(t));
            }
        }
        Ok(())
    }
}

/// Scalar function of time with a derivative.
pub trait Signal: Sync {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
}

/// Closed-form signal.
pub struct AnalyticSignal<F, G> {
    pub f: F,
    pub df: G,
}

impl<F: Fn(f64) -> f64 + Sync, G: Fn(f64) -> f64 + Sync> Signal for AnalyticSignal<F, G> {
    fn value(&self, t: f64) -> f64 {
        (self.f)(t)
    }
    fn derivative(&self, t: f64) -> f64 {
        (self.df)(t)
    }
}

/// Sampled real signal on a grid starting at 0. Off-grid values use local
/// cubic Lagrange interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarTrajectory {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, MemoryError> {
        check_grid(&times)?;
        if values.len() != times.len() {
            return Err(MemoryError::InvalidGrid);
        }
        Ok(Self { times, values })
    }

    pub fn sample(times: &[f64], f: impl Fn(f64) -> f64) -> Result<Self, MemoryError> {
        Self::new(times.to_vec(), times.iter().map(|&t| f(t)).collect())
    }

    fn stencil(&self, t: f64) -> usize {
        let n = self.times.len();
        let i = self.times.partition_point(|&x| x <= t).saturating_sub(1);
        i.saturating_sub(1).min(n.saturating_sub(4))
    }

    fn lagrange(&self, t: f64, derivative: bool) -> f64 {
        let n = self.times.len();
        if n < 4 {
            // linear fallback
            let i = self.times.partition_point(|&x| x <= t).saturating_sub(1).min(n.saturating_sub(2));
            if n < 2 {
                return if derivative { 0.0 } else { self.values[0] };
            }
            let (t0, t1) = (self.times[i], self.times[i + 1]);
            let slope = (self.values[i + 1] - self.values[i]) / (t1 - t0);
            return if derivative { slope } else { self.values[i] + slope * (t - t0) };
        }
        let s = self.stencil(t);
        let xs = &self.times[s..s + 4];
        let ys = &self.values[s..s + 4];
        let mut acc = 0.0;
        for j in 0..4 {
            let denom: f64 = (0..4).filter(|&m| m != j).map(|m| xs[j] - xs[m]).product();
            let basis = if derivative {
                (0..4)
                    .filter(|&m| m != j)
                    .map(|skip| (0..4).filter(|&m| m != j && m != skip).map(|m| t - xs[m]).product::<f64>())
                    .sum::<f64>()
            } else {
                (0..4).filter(|&m| m != j).map(|m| t - xs[m]).product()
            };
            acc += ys[j] * basis / denom;
        }
        acc
    }
}

impl Signal for ScalarTrajectory {
    fn value(&self, t: f64) -> f64 {
        self.lagrange(t, false)
    }
    fn derivative(&self, t: f64) -> f64 {
        self.lagrange(t, true)
    }
}

fn check_grid(times: &[f64]) -> Result<(), MemoryError> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MemoryError::InvalidGrid);
    }
    Ok(())
}

/// Points per panel of the convolution rule.
pub const CONVOLUTION_ORDER: usize = 4;

/// `P(t_i) = int_0^t_i chi(t_i - s) E(s) ds` on the drive's grid.
pub fn convolve_kernel(kernel: &KernelFunction, drive: &ScalarTrajectory) -> Result<ScalarTrajectory, MemoryError> {
    check_grid(&drive.times)?;
    if let Some(period) = kernel.oscillation_period() {
        let spacing = drive.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if spacing > period / 8.0 {
            return Err(MemoryError::GridTooCoarse { spacing, period });
        }
    }
    let (x, w) = gauss_legendre(CONVOLUTION_ORDER);
    let times = &drive.times;
    // drive values at every quadrature node, shared by all outputs
    let nodes: Vec<Vec<(f64, f64, f64)>> = times
        .windows(2)
        .map(|p| {
            let (c, h) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
            x.iter().zip(&w).map(|(xi, wi)| (c + h * xi, h * wi, drive.value(c + h * xi))).collect()
        })
        .collect();
    let values = times
        .iter()
        .enumerate()
        .map(|(i, &t)| nodes[..i].iter().flatten().map(|&(s, ws, e)| ws * kernel.value(t - s) * e).sum())
        .collect();
    ScalarTrajectory::new(times.clone(), values)
}

/// Tolerance under which `u(0)` counts as zero.
const ZERO_START: f64 = 1e-12;

/// `max |Q u(t) - RHS(t)|` over the grid for the quadratic form identity
/// `Q u = 1/2 d/dt[(k(t) - k(0)) u^2 - int k'(t-s) (u(s) - u(t))^2 ds]
///        - 1/2 k'(t) u^2 + 1/2 int k''(t-s) (u(s) - u(t))^2 ds`,
/// where `Q u(t) = u'(t) int k'(t-s) u(s) ds` and the time derivative of the
/// bracket is expanded by the Leibniz rule.
pub fn q_form_identity_residual(kernel: &KernelFunction, u: &dyn Signal, grid: &[f64]) -> Result<f64, MemoryError> {
    q_form_identity_residual_with_order(kernel, u, grid, CONVOLUTION_ORDER)
}

pub fn q_form_identity_residual_with_order(
    kernel: &KernelFunction,
    u: &dyn Signal,
    grid: &[f64],
    order: usize,
) -> Result<f64, MemoryError> {
    check_grid(grid)?;
    let u0 = u.value(0.0);
    if u0.abs() > ZERO_START {
        return Err(MemoryError::NonzeroInitialValue(u0));
    }
    kernel.check_c3(grid)?;
    let (x, w) = gauss_legendre(order);
    let nodes: Vec<(f64, f64, f64)> = grid
        .windows(2)
        .flat_map(|p| {
            let (c, h) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
            x.iter().zip(&w).map(move |(xi, wi)| (c + h * xi, h * wi)).collect::<Vec<_>>()
        })
        .map(|(s, ws)| (s, ws, u.value(s)))
        .collect();
    let k0 = kernel.value(0.0);
    let mut worst: f64 = 0.0;
    for (i, &t) in grid.iter().enumerate() {
        let (ut, dut) = (u.value(t), u.derivative(t));
        let [kt, k1t, _, _] = kernel.jet(t);
        let (mut conv, mut i1, mut i2) = (0.0, 0.0, 0.0);
        for &(s, ws, us) in &nodes[..i * order] {
            let [_, k1, k2, _] = kernel.jet(t - s);
            let d = us - ut;
            conv += ws * k1 * us;
            i1 += ws * k1 * d;
            i2 += ws * k2 * d * d;
        }
        let lhs = dut * conv;
        let d_bracket = k1t * ut * ut + 2.0 * (kt - k0) * ut * dut - (i2 - 2.0 * dut * i1);
        let rhs = 0.5 * d_bracket - 0.5 * k1t * ut * ut + 0.5 * i2;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Builds the realization generator for `(E, H, auxiliary chains)`.
fn realization_matrix(
    eps0: f64,
    mu0: f64,
    chi_e: &KernelFunction,
    chi_m: &KernelFunction,
    k: &Vector3<f64>,
) -> DMatrix<Complex64> {
    fn blocks_for(kernel: &KernelFunction) -> usize {
        kernel
            .terms
            .iter()
            .map(|t| match *t {
                KernelTerm::Oscillator { .. } => 2,
                KernelTerm::ExpPoly { power, rate, .. } => (power as usize + 1) * if rate.im != 0.0 { 2 } else { 1 },
            })
            .sum()
    }
    let dim = 6 + 3 * (blocks_for(chi_e) + blocks_for(chi_m));
    let mut g = DMatrix::<Complex64>::zeros(dim, dim);
    let i = Complex64::i();
    let cx = [[0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]];
    for r in 0..3 {
        for c in 0..3 {
            g[(r, 3 + c)] = i * cx[r][c] / eps0;
            g[(3 + r, c)] = -i * cx[r][c] / mu0;
        }
    }
    let mut next = 6;
    for (field, kernel) in [(0usize, chi_e), (3usize, chi_m)] {
        for term in &kernel.terms {
            match *term {
                KernelTerm::Oscillator { weight, omega0, alpha } => {
                    let (p, v) = (next, next + 3);
                    next += 6;
                    for d in 0..3 {
                        g[(p + d, v + d)] = 1.0.into();
                        g[(v + d, field + d)] = 1.0.into();
                        g[(v + d, v + d)] = (-alpha).into();
                        g[(v + d, p + d)] = (-omega0 * omega0).into();
                        g[(field + d, v + d)] -= Complex64::from(weight);
                    }
                }
                KernelTerm::ExpPoly { coef, power, rate } => {
                    let chains: Vec<(Complex64, Complex64)> = if rate.im != 0.0 {
                        vec![(rate, coef * 0.5), (rate.conj(), coef.conj() * 0.5)]
                    } else {
                        vec![(rate, Complex64::from(coef.re))]
                    };
                    for (lambda, c) in chains {
                        let f = c * factorial(power);
                        let first = next;
                        next += 3 * (power as usize + 1);
                        for j in 0..=power as usize {
                            let z = first + 3 * j;
                            for d in 0..3 {
                                let src = if j == 0 { field + d } else { z - 3 + d };
                                g[(z + d, src)] = 1.0.into();
                                g[(z + d, z + d)] = lambda;
                            }
                        }
                        let last = first + 3 * power as usize;
                        for d in 0..3 {
                            let src = if power == 0 { field + d } else { last - 3 + d };
                            g[(field + d, src)] -= f;
                            g[(field + d, last + d)] -= f * lambda;
                        }
                    }
                }
            }
        }
    }
    g
}

/// Mode trajectory on a uniform panel grid with the fields and their time
/// primitives cached at every Gauss-Legendre node.
#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub k: Vector3<f64>,
    pub eps0: f64,
    pub mu0: f64,
    pub chi_e: KernelFunction,
    pub chi_m: KernelFunction,
    pub step: f64,
    pub order: usize,
    generator: DMatrix<Complex64>,
    edge_states: Vec<DVector<Complex64>>,
    edge_primitives: Vec<[CVec3; 2]>,
    /// per panel, per node: `(s, weight, [Ep, Hp])`
    node_primitives: Vec<Vec<(f64, f64, [CVec3; 2])>>,
}

fn fields_of(v: &DVector<Complex64>) -> [CVec3; 2] {
    [v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned()]
}

impl ModeTrajectory {
    fn build(
        generator: DMatrix<Complex64>,
        k: Vector3<f64>,
        eps0: f64,
        mu0: f64,
        chi_e: KernelFunction,
        chi_m: KernelFunction,
        e0: CVec3,
        h0: CVec3,
        t_end: f64,
        panels: usize,
        order: usize,
    ) -> Self {
        let step = t_end / panels as f64;
        let (x, w) = gauss_legendre(order);
        let expm = |tau: f64| (&generator * Complex64::from(tau)).exp();
        let full = expm(step);
        // offsets of the nodes in a panel and of the nested nodes in [0, offset]
        let offsets: Vec<f64> = x.iter().map(|xi| 0.5 * step * (1.0 + xi)).collect();
        let to_node: Vec<_> = offsets.iter().map(|&o| expm(o)).collect();
        let nested: Vec<Vec<_>> =
            offsets.iter().map(|&o| x.iter().map(|xj| expm(0.5 * o * (1.0 + xj))).collect()).collect();
        let mut u = DVector::zeros(generator.nrows());
        u.fixed_rows_mut::<3>(0).copy_from(&e0);
        u.fixed_rows_mut::<3>(3).copy_from(&h0);
        let mut edge_states = vec![u.clone()];
        let mut edge_primitives = vec![[CVec3::zeros(), CVec3::zeros()]];
        let mut node_primitives = Vec::with_capacity(panels);
        for n in 0..panels {
            let t0 = n as f64 * step;
            let base = edge_primitives[n];
            let mut panel_nodes = Vec::with_capacity(order);
            let mut acc = base;
            for (i, &o) in offsets.iter().enumerate() {
                let f = fields_of(&(&to_node[i] * &u));
                let mut prim = base;
                for (j, wj) in w.iter().enumerate() {
                    let g = fields_of(&(&nested[i][j] * &u));
                    for c in 0..2 {
                        prim[c] += g[c] * Complex64::from(0.5 * o * wj);
                    }
                }
                for c in 0..2 {
                    acc[c] += f[c] * Complex64::from(0.5 * step * w[i]);
                }
                panel_nodes.push((t0 + o, 0.5 * step * w[i], prim));
            }
            node_primitives.push(panel_nodes);
            u = &full * u;
            edge_states.push(u.clone());
            edge_primitives.push(acc);
        }
        Self { k, eps0, mu0, chi_e, chi_m, step, order, generator, edge_states, edge_primitives, node_primitives }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.edge_states.len()).map(|n| n as f64 * self.step).collect()
    }

    /// `(E, H, E', H')` at `t`, exact up to the propagator.
    pub fn fields_at(&self, t: f64) -> [CVec3; 4] {
        let n = ((t / self.step).floor() as usize).min(self.edge_states.len() - 1);
        let tau = t - n as f64 * self.step;
        let u = if tau == 0.0 {
            self.edge_states[n].clone()
        } else {
            (&self.generator * Complex64::from(tau)).exp() * &self.edge_states[n]
        };
        let du = &self.generator * &u;
        let [e, h] = fields_of(&u);
        let [de, dh] = fields_of(&du);
        [e, h, de, dh]
    }

    /// `(Ep, Hp)` at `t`: the cached edge value plus a Gauss-Legendre pass
    /// over the remainder of the panel.
    pub fn primitives_at(&self, t: f64) -> [CVec3; 2] {
        let n = ((t / self.step).floor() as usize).min(self.edge_states.len() - 1);
        let t0 = n as f64 * self.step;
        let mut acc = self.edge_primitives[n];
        if t > t0 {
            let (x, w) = gauss_legendre(self.order);
            for (xi, wi) in x.iter().zip(&w) {
                let s = t0 + 0.5 * (t - t0) * (1.0 + xi);
                let [e, h, _, _] = self.fields_at(s);
                acc[0] += e * Complex64::from(0.5 * (t - t0) * wi);
                acc[1] += h * Complex64::from(0.5 * (t - t0) * wi);
            }
        }
        acc
    }

    /// Real part of one component of `Ep` (`field = 0`) or `Hp` (`field = 1`)
    /// as a signal; its derivative is the matching field component.
    pub fn primitive_signal(&self, field: usize, component: usize) -> PrimitiveSignal<'_> {
        PrimitiveSignal { traj: self, field, component }
    }
}

pub struct PrimitiveSignal<'a> {
    traj: &'a ModeTrajectory,
    field: usize,
    component: usize,
}

impl Signal for PrimitiveSignal<'_> {
    fn value(&self, t: f64) -> f64 {
        self.traj.primitives_at(t)[self.field][self.component].re
    }
    fn derivative(&self, t: f64) -> f64 {
        self.traj.fields_at(t)[self.field][self.component].re
    }
}

/// Trajectory of a Lorentz material mode, from the material generator.
pub fn simulate_material_mode(
    material: &MaterialParams,
    k: Vector3<f64>,
    e0: CVec3,
    h0: CVec3,
    t_end: f64,
    panels: usize,
    order: usize,
) -> ModeTrajectory {
    let g = build_generator(material, k).matrix;
    ModeTrajectory::build(
        g,
        k,
        material.eps0,
        material.mu0,
        KernelFunction::from_material(material, Branch::Electric),
        KernelFunction::from_material(material, Branch::Magnetic),
        e0,
        h0,
        t_end,
        panels,
        order,
    )
}

/// Trajectory of a mode whose constitutive laws are given by arbitrary kernels.
#[allow(clippy::too_many_arguments)]
pub fn simulate_convolution_mode(
    eps0: f64,
    mu0: f64,
    chi_e: &KernelFunction,
    chi_m: &KernelFunction,
    k: Vector3<f64>,
    e0: CVec3,
    h0: CVec3,
    t_end: f64,
    panels: usize,
    order: usize,
) -> ModeTrajectory {
    let g = realization_matrix(eps0, mu0, chi_e, chi_m, &k);
    ModeTrajectory::build(g, k, eps0, mu0, chi_e.clone(), chi_m.clone(), e0, h0, t_end, panels, order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralIdentity {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_abs_residual: f64,
    /// `L(0)`, floored.
    pub normalizer: f64,
}

impl GeneralIdentity {
    pub fn relative(&self) -> f64 {
        self.max_abs_residual / self.normalizer
    }

    /// `-d log L / dt` from a least-squares fit over the second half.
    pub fn fitted_rate(&self) -> f64 {
        let half = self.times.len() / 2;
        let pts: Vec<(f64, f64)> = self.times[half..]
            .iter()
            .zip(&self.lyapunov[half..])
            .filter(|p| *p.1 > 0.0)
            .map(|(t, l)| (*t, l.ln()))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -linear_fit(&x, &y).1
    }

    /// `min D / L` over the grid.
    pub fn min_dissipation_ratio(&self) -> f64 {
        self.dissipation.iter().zip(&self.lyapunov).map(|(d, l)| d / l).fold(f64::INFINITY, f64::min)
    }

    pub fn is_non_increasing(&self, rel_tol: f64) -> bool {
        self.lyapunov.windows(2).all(|w| w[1] <= w[0] + rel_tol * self.normalizer)
    }
}

const MISMATCH_TOL: f64 = 1e-9;

fn check_same_kernel(
    branch: Branch,
    supplied: &KernelFunction,
    actual: &KernelFunction,
    t_end: f64,
) -> Result<(), MemoryError> {
    for i in 0..=8 {
        let t = t_end * i as f64 / 8.0;
        let (a, b) = (supplied.jet(t), actual.jet(t));
        for n in 0..4 {
            if (a[n] - b[n]).abs() > MISMATCH_TOL * (1.0 + b[n].abs()) {
                return Err(MemoryError::KernelMaterialMismatch { branch, t, supplied: a[n], actual: b[n] });
            }
        }
    }
    Ok(())
}

/// Evaluates the convolution Lyapunov functional `L = E + E_ad`, the
/// dissipation `D` and the residual `dL/dt + D` at every panel edge.
///
/// `dL/dt` is assembled from its Leibniz expansion: the field energy rate
/// uses the exact `E'`, `H'`, and the history integrals use the cached
/// primitives at the Gauss-Legendre nodes.
pub fn general_lyapunov_identity(
    chi_e: &KernelFunction,
    chi_m: &KernelFunction,
    traj: &ModeTrajectory,
) -> Result<GeneralIdentity, MemoryError> {
    let times = traj.times();
    let t_end = *times.last().unwrap_or(&0.0);
    check_same_kernel(Branch::Electric, chi_e, &traj.chi_e, t_end)?;
    check_same_kernel(Branch::Magnetic, chi_m, &traj.chi_m, t_end)?;
    chi_e.check_c3(&times)?;
    chi_m.check_c3(&times)?;
    let mut out = GeneralIdentity {
        times: times.clone(),
        energy: vec![],
        lyapunov: vec![],
        dissipation: vec![],
        residual: vec![],
        max_abs_residual: 0.0,
        normalizer: 0.0,
    };
    let chi0 = [chi_e.value(0.0), chi_m.value(0.0)];
    let vac = [traj.eps0, traj.mu0];
    let kernels = [chi_e, chi_m];
    for (n, &t) in times.iter().enumerate() {
        let u = &traj.edge_states[n];
        let du = &traj.generator * u;
        let f = fields_of(u);
        let df = fields_of(&du);
        let prim = traj.edge_primitives[n];
        let energy = 0.5 * (vac[0] * f[0].norm_squared() + vac[1] * f[1].norm_squared());
        let mut rate = vac[0] * f[0].dotc(&df[0]).re + vac[1] * f[1].dotc(&df[1]).re;
        let mut lyap = energy;
        let mut diss = 0.0;
        for b in 0..2 {
            let [_, c1, c2, _] = kernels[b].jet(t);
            let (mut a, mut bb, mut c) = (0.0, 0.0, 0.0);
            for &(s, ws, ref p) in traj.node_primitives[..n].iter().flatten() {
                let [_, _, k2, k3] = kernels[b].jet(t - s);
                let d = prim[b] - p[b];
                let d2 = d.norm_squared();
                a += ws * k2 * d2;
                bb += ws * k3 * d2;
                c += ws * k2 * d.dotc(&f[b]).re;
            }
            let ep2 = prim[b].norm_squared();
            let v = vac[b];
            lyap += 0.5 * v * c1 * ep2 - 0.5 * v * a;
            diss += v * chi0[b] * f[b].norm_squared() - 0.5 * v * c2 * ep2 + 0.5 * v * bb;
            rate += 0.5 * v * c2 * ep2 + v * c1 * prim[b].dotc(&f[b]).re - 0.5 * v * bb - v * c;
        }
        let res = rate + diss;
        out.energy.push(energy);
        out.lyapunov.push(lyap);
        out.dissipation.push(diss);
        out.residual.push(res);
        out.max_abs_residual = out.max_abs_residual.max(res.abs());
    }
    out.normalizer = out.lyapunov.first().copied().unwrap_or(0.0).max(crate::ledger::RESIDUAL_FLOOR);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignConditions {
    pub chi0_nonneg: bool,
    pub d1_nonneg: bool,
    pub d2_nonpos: bool,
    pub d3_nonneg: bool,
    /// All four of the above.
    pub conds_26: bool,
    pub chi0_pos: bool,
    /// `chi(0) > 0` and both beta inequalities hold for some `beta > 0`.
    pub conds_27: bool,
    /// Largest beta satisfying both inequalities on the grid, 0 if none.
    pub beta: f64,
}

/// Slack on sign tests, relative to the largest magnitude of the derivative.
const SIGN_SLACK: f64 = 1e-13;

pub fn sign_condition_check(kernel: &KernelFunction, grid: &[f64]) -> SignConditions {
    let jets: Vec<[f64; 4]> = grid.iter().map(|&t| kernel.jet(t)).collect();
    let scale: Vec<f64> = (0..4).map(|n| jets.iter().map(|j| j[n].abs()).fold(0.0, f64::max)).collect();
    let tol = |n: usize| SIGN_SLACK * scale[n];
    let chi0 = kernel.value(0.0);
    let d1_nonneg = jets.iter().all(|j| j[1] >= -tol(1));
    let d2_nonpos = jets.iter().all(|j| j[2] <= tol(2));
    let d3_nonneg = jets.iter().all(|j| j[3] >= -tol(3));
    let chi0_nonneg = chi0 >= 0.0;
    // -chi'' >= beta chi'  and  chi''' >= -beta chi''
    let (mut upper, mut lower) = (f64::INFINITY, 0.0f64);
    for j in &jets {
        let (d1, d2, d3) = (j[1], j[2], j[3]);
        if d1 > tol(1) {
            upper = upper.min(-d2 / d1);
        } else if d1 < -tol(1) {
            lower = lower.max(-d2 / d1);
        } else if -d2 < -tol(2) {
            upper = f64::NEG_INFINITY;
        }
        if d2 < -tol(2) {
            upper = upper.min(d3 / -d2);
        } else if d2 > tol(2) {
            lower = lower.max(-d3 / d2);
        } else if d3 < -tol(3) {
            upper = f64::NEG_INFINITY;
        }
    }
    let feasible = upper > 0.0 && upper >= lower && upper.is_finite();
    let beta = if feasible { upper } else { 0.0 };
    SignConditions {
        chi0_nonneg,
        d1_nonneg,
        d2_nonpos,
        d3_nonneg,
        conds_26: chi0_nonneg && d1_nonneg && d2_nonpos && d3_nonneg,
        chi0_pos: chi0 > 0.0,
        conds_27: chi0 > 0.0 && feasible,
        beta,
    }
}

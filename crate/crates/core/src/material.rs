//! Generalized Drude-Lorentz material models.
//!
//! A material is a pair of oscillator branches (electric and magnetic) on top of
//! the vacuum constants. Each oscillator contributes
//! `Omega^2 / (omega^2 + i alpha omega - omega0^2)` to the susceptibility and
//! `Omega^2 chi(t)` to the time-domain kernel, where `chi` is the impulse
//! response of `x'' + alpha x' + omega0^2 x = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("vacuum constant {name} must be positive, got {value}")]
    NonPositiveVacuumConstant { name: &'static str, value: f64 },
    #[error("{branch} oscillator {index}: coupling Omega must be positive, got {value}")]
    NonPositiveCoupling { branch: Branch, index: usize, value: f64 },
    #[error("{branch} oscillator {index}: damping must be non-negative, got {value}")]
    NegativeDamping { branch: Branch, index: usize, value: f64 },
    #[error("{branch} oscillator {index}: resonance frequency must be non-negative, got {value}")]
    NegativeResonance { branch: Branch, index: usize, value: f64 },
    #[error("{branch} branch must contain at least one oscillator")]
    EmptyBranch { branch: Branch },
    #[error("{branch} oscillators {first} and {second} share (alpha, omega0)")]
    DuplicateOscillator { branch: Branch, first: usize, second: usize },
    #[error("denominator vanishes at omega = {omega}")]
    PoleHit { omega: Complex64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("frequency grid point {0} is not in the open upper half-plane")]
    GridInLowerHalfPlane(Complex64),
    #[error("frequency grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Electric,
    Magnetic,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Electric => f.write_str("electric"),
            Branch::Magnetic => f.write_str("magnetic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    #[serde(rename = "Omega")]
    pub coupling: f64,
    pub omega0: f64,
    pub alpha: f64,
}

impl Oscillator {
    pub fn new(coupling: f64, omega0: f64, alpha: f64) -> Self {
        Self { coupling, omega0, alpha }
    }

    pub fn is_drude(&self) -> bool {
        self.omega0 == 0.0
    }

    /// `(alpha - 2 omega0)(alpha + 2 omega0)`, the discriminant of the
    /// characteristic polynomial, computed in factored form.
    pub fn discriminant(&self) -> f64 {
        (self.alpha - 2.0 * self.omega0) * (self.alpha + 2.0 * self.omega0)
    }

    pub fn kernel_case(&self) -> KernelCase {
        let gap = self.alpha - 2.0 * self.omega0;
        let scale = self.alpha.max(2.0 * self.omega0).max(1.0);
        if gap.abs() < NEAR_CRITICAL_BAND * scale {
            KernelCase::Critical
        } else if gap > 0.0 {
            KernelCase::Overdamped
        } else {
            KernelCase::Underdamped
        }
    }

    /// Period of the oscillating factor of the kernel, `4 pi / delta`, for
    /// underdamped oscillators.
    pub fn oscillation_period(&self) -> Option<f64> {
        let s = self.discriminant();
        if s < 0.0 {
            Some(4.0 * std::f64::consts::PI / (-s).sqrt())
        } else {
            None
        }
    }
}

/// Relative width of the band around `alpha = 2 omega0` labelled critical.
pub const NEAR_CRITICAL_BAND: f64 = 1e-8;

/// Relative tolerance of the Herglotz sampling test.
pub const TOL_HERGLOTZ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelCase {
    /// `alpha > 2 omega0`: hyperbolic sine form.
    Overdamped,
    /// `alpha = 2 omega0` up to the near-critical band: `t exp(-alpha t / 2)`.
    Critical,
    /// `alpha < 2 omega0`: oscillating sine form.
    Underdamped,
}

fn default_unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    #[serde(default = "default_unit")]
    pub eps0: f64,
    #[serde(default = "default_unit")]
    pub mu0: f64,
    pub electric: Vec<Oscillator>,
    pub magnetic: Vec<Oscillator>,
}

impl MaterialParams {
    /// Builds and validates a material.
    pub fn new(
        eps0: f64,
        mu0: f64,
        electric: Vec<Oscillator>,
        magnetic: Vec<Oscillator>,
    ) -> Result<Self, MaterialError> {
        validate_material(Self { eps0, mu0, electric, magnetic })
    }

    /// One damped Drude term per branch with unit constants.
    pub fn drude_toy() -> Self {
        Self::new(1.0, 1.0, vec![Oscillator::new(1.0, 0.0, 1.0)], vec![Oscillator::new(1.0, 0.0, 1.0)]).expect("valid")
    }

    /// One Lorentz term per branch, `omega0 = 1`, with the given damping.
    pub fn lorentz_toy(alpha: f64) -> Self {
        Self::new(1.0, 1.0, vec![Oscillator::new(1.0, 1.0, alpha)], vec![Oscillator::new(1.0, 1.0, alpha)])
            .expect("valid")
    }

    pub fn branch(&self, branch: Branch) -> &[Oscillator] {
        match branch {
            Branch::Electric => &self.electric,
            Branch::Magnetic => &self.magnetic,
        }
    }

    pub fn vacuum(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Electric => self.eps0,
            Branch::Magnetic => self.mu0,
        }
    }

    pub fn ne(&self) -> usize {
        self.electric.len()
    }

    pub fn nm(&self) -> usize {
        self.magnetic.len()
    }

    pub fn oscillators(&self) -> impl Iterator<Item = &Oscillator> {
        self.electric.iter().chain(self.magnetic.iter())
    }

    /// True when no oscillator has a positive resonance frequency.
    pub fn is_pure_drude(&self) -> bool {
        self.oscillators().all(|o| o.omega0 == 0.0)
    }

    pub fn has_drude(&self, branch: Branch) -> bool {
        self.branch(branch).iter().any(|o| o.is_drude())
    }

    /// Rescales time by `s`: rates and frequencies are divided by `s`.
    pub fn time_rescaled(&self, s: f64) -> Self {
        let f = |o: &Oscillator| Oscillator::new(o.coupling / s, o.omega0 / s, o.alpha / s);
        Self {
            eps0: self.eps0,
            mu0: self.mu0,
            electric: self.electric.iter().map(f).collect(),
            magnetic: self.magnetic.iter().map(f).collect(),
        }
    }
}

pub fn validate_material(raw: MaterialParams) -> Result<MaterialParams, MaterialError> {
    for (name, value) in [("eps0", raw.eps0), ("mu0", raw.mu0)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(MaterialError::NonPositiveVacuumConstant { name, value });
        }
    }
    for branch in [Branch::Electric, Branch::Magnetic] {
        let osc = raw.branch(branch);
        if osc.is_empty() {
            return Err(MaterialError::EmptyBranch { branch });
        }
        for (index, o) in osc.iter().enumerate() {
            if !(o.coupling > 0.0 && o.coupling.is_finite()) {
                return Err(MaterialError::NonPositiveCoupling { branch, index, value: o.coupling });
            }
            if !(o.alpha >= 0.0 && o.alpha.is_finite()) {
                return Err(MaterialError::NegativeDamping { branch, index, value: o.alpha });
            }
            if !(o.omega0 >= 0.0 && o.omega0.is_finite()) {
                return Err(MaterialError::NegativeResonance { branch, index, value: o.omega0 });
            }
        }
        for i in 0..osc.len() {
            for j in i + 1..osc.len() {
                if osc[i].alpha == osc[j].alpha && osc[i].omega0 == osc[j].omega0 {
                    return Err(MaterialError::DuplicateOscillator { branch, first: i, second: j });
                }
            }
        }
    }
    Ok(raw)
}

/// `eps(omega)` for the electric branch, `mu(omega)` for the magnetic one.
pub fn complex_response(
    material: &MaterialParams,
    branch: Branch,
    omega: Complex64,
) -> Result<Complex64, MaterialError> {
    let mut chi = Complex64::new(0.0, 0.0);
    for o in material.branch(branch) {
        let den = omega * omega + Complex64::i() * o.alpha * omega - o.omega0 * o.omega0;
        if den == Complex64::new(0.0, 0.0) {
            return Err(MaterialError::PoleHit { omega });
        }
        chi += o.coupling * o.coupling / den;
    }
    Ok(material.vacuum(branch) * (1.0 - chi))
}

/// Impulse response of `x'' + alpha x' + omega0^2 x = 0`, `x(0) = 0`, `x'(0) = 1`.
pub fn susceptibility_kernel(osc: &Oscillator, t: f64) -> Result<f64, MaterialError> {
    kernel_derivative(osc, t, 0)
}

/// `n`-th time derivative of [`susceptibility_kernel`].
pub fn kernel_derivative(osc: &Oscillator, t: f64, n: usize) -> Result<f64, MaterialError> {
    if t < 0.0 || t.is_nan() {
        return Err(MaterialError::NegativeTime(t));
    }
    Ok(kernel_derivatives(osc, t, n)[n])
}

/// Values `chi, chi', ..., chi^(n)` at `t >= 0`.
///
/// The kernel is written `exp(a t) S(t)` with `a = -alpha/2` and
/// `S'' = (s/4) S`, `S(0) = 0`, `S'(0) = 1`. Derivatives stay in the form
/// `exp(a t) (p S + q C)` with `C = S'`, so no difference of nearly equal
/// closed forms is ever taken. Inside `|s t^2 / 4| < 1` the power series is
/// used, which is what keeps the near-critical regime continuous.
pub fn kernel_derivatives(osc: &Oscillator, t: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    fill_derivatives(osc, t, &mut out);
    out
}

/// `[chi, chi', chi'', chi''']` without allocating.
pub fn kernel_jet(osc: &Oscillator, t: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    fill_derivatives(osc, t, &mut out);
    out
}

fn fill_derivatives(osc: &Oscillator, t: f64, out: &mut [f64]) {
    let a = -0.5 * osc.alpha;
    let s = osc.discriminant();
    let (es, ec) = damped_pair(a, s, t);
    let (mut p, mut q) = (1.0, 0.0);
    for slot in out.iter_mut() {
        *slot = p * es + q * ec;
        let (np, nq) = (a * p + q * s / 4.0, a * q + p);
        p = np;
        q = nq;
    }
}

/// `(exp(a t) S(t), exp(a t) C(t))`.
fn damped_pair(a: f64, s: f64, t: f64) -> (f64, f64) {
    let x = s * t * t / 4.0;
    if x.abs() < 1.0 {
        let mut term_s = t;
        let mut term_c = 1.0;
        let (mut sum_s, mut sum_c) = (term_s, term_c);
        let mut k = 1.0;
        loop {
            term_c *= x / ((2.0 * k - 1.0) * (2.0 * k));
            term_s *= x / ((2.0 * k) * (2.0 * k + 1.0));
            sum_c += term_c;
            sum_s += term_s;
            if term_c.abs() <= 1e-18 * sum_c.abs() && term_s.abs() <= 1e-18 * sum_s.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            k += 1.0;
            if k > 60.0 {
                break;
            }
        }
        let e = (a * t).exp();
        (e * sum_s, e * sum_c)
    } else if s > 0.0 {
        let r = 0.5 * s.sqrt();
        let up = ((a + r) * t).exp();
        let down = ((a - r) * t).exp();
        ((up - down) / (2.0 * r), 0.5 * (up + down))
    } else {
        let r = 0.5 * (-s).sqrt();
        let e = (a * t).exp();
        (e * (r * t).sin() / r, e * (r * t).cos())
    }
}

/// `chi_nu(t) = sum Omega^2 chi_j(t)` over the branch.
pub fn total_kernel(material: &MaterialParams, branch: Branch, t: f64) -> Result<f64, MaterialError> {
    total_kernel_derivative(material, branch, t, 0)
}

pub fn total_kernel_derivative(
    material: &MaterialParams,
    branch: Branch,
    t: f64,
    n: usize,
) -> Result<f64, MaterialError> {
    material.branch(branch).iter().map(|o| kernel_derivative(o, t, n).map(|v| o.coupling * o.coupling * v)).sum()
}

/// `Im(omega chi_hat(omega))` on the real axis.
pub fn gamma(material: &MaterialParams, branch: Branch, omega: f64) -> Result<f64, MaterialError> {
    let mut g = 0.0;
    for o in material.branch(branch) {
        let re = omega * omega - o.omega0 * o.omega0;
        let im = o.alpha * omega;
        let den = re * re + im * im;
        if den == 0.0 {
            return Err(MaterialError::PoleHit { omega: Complex64::new(omega, 0.0) });
        }
        g += o.alpha * o.coupling * o.coupling * omega * omega / den;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DissipationTag {
    NonDissipative,
    WeakOnly,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FigotinCase {
    /// No damped electric oscillator at all.
    AllAlphaZero,
    /// Some electric oscillator has `omega0 = 0` and `alpha > 0`.
    DrudeTermDamped,
    /// Damped electric oscillators exist but none of them is a Drude term.
    NoDampedDrudeTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissipationClass {
    pub tag: DissipationTag,
    pub figotin: bool,
    pub figotin_case: FigotinCase,
}

pub fn classify_dissipation(material: &MaterialParams) -> DissipationClass {
    let all = material.oscillators().all(|o| o.alpha > 0.0);
    let any = material.oscillators().any(|o| o.alpha > 0.0);
    let tag = match (all, any) {
        (true, _) => DissipationTag::Strong,
        (false, true) => DissipationTag::WeakOnly,
        _ => DissipationTag::NonDissipative,
    };
    let damped: Vec<_> = material.electric.iter().filter(|o| o.alpha > 0.0).collect();
    let figotin_case = if damped.is_empty() {
        FigotinCase::AllAlphaZero
    } else if damped.iter().any(|o| o.omega0 == 0.0) {
        FigotinCase::DrudeTermDamped
    } else {
        FigotinCase::NoDampedDrudeTerm
    };
    DissipationClass { tag, figotin: figotin_case == FigotinCase::DrudeTermDamped, figotin_case }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HerglotzReport {
    pub min_im_omega_eps: f64,
    pub min_im_omega_mu: f64,
    /// Smallest `Im(omega f) / |omega f|` seen over both branches.
    pub min_relative: f64,
    pub passed: bool,
    pub points: usize,
}

pub fn herglotz_scan(material: &MaterialParams, grid: &[Complex64]) -> Result<HerglotzReport, MaterialError> {
    if grid.is_empty() {
        return Err(MaterialError::EmptyGrid);
    }
    let mut rep = HerglotzReport {
        min_im_omega_eps: f64::INFINITY,
        min_im_omega_mu: f64::INFINITY,
        min_relative: f64::INFINITY,
        passed: true,
        points: grid.len(),
    };
    for &w in grid {
        if !(w.im > 0.0) {
            return Err(MaterialError::GridInLowerHalfPlane(w));
        }
        for branch in [Branch::Electric, Branch::Magnetic] {
            let f = w * complex_response(material, branch, w)?;
            let rel = f.im / f.norm();
            rep.min_relative = rep.min_relative.min(rel);
            if f.im < -TOL_HERGLOTZ * f.norm() {
                rep.passed = false;
            }
            match branch {
                Branch::Electric => rep.min_im_omega_eps = rep.min_im_omega_eps.min(f.im),
                Branch::Magnetic => rep.min_im_omega_mu = rep.min_im_omega_mu.min(f.im),
            }
        }
    }
    Ok(rep)
}

/// Log grid in the upper half-plane: `n x n` points with `|Re omega|` and
/// `Im omega` log-spaced on `[1e-3 r, r]`, real parts of both signs.
pub fn herglotz_grid(n: usize, r: f64) -> Vec<Complex64> {
    let half = (n / 2).max(1);
    let re: Vec<f64> = crate::grid::log_space(1e-3 * r, r, half).into_iter().flat_map(|x| [x, -x]).collect();
    let im = crate::grid::log_space(1e-3 * r, r, n.max(1));
    im.iter().flat_map(|&y| re.iter().map(move |&x| Complex64::new(x, y))).collect()
}

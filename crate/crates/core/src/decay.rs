//! Total energy curves and polynomial decay fits.
//!
//! For isotropic transverse data the mode dynamics depend on `k` only
//! through `|k|` up to a rotation, so each radial node is evolved once at the
//! canonical wave vector `(0, 0, kappa)` and weighted by `4 pi kappa^2`.

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{composite_rule, linear_fit, log_space, pairwise_sum};
use crate::ledger::order_densities;
use crate::material::MaterialParams;
use crate::mode::{build_generator, evolve_grid_vectors, CVec3, Layout, ModeError, ModeState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecayError {
    #[error("quadrature has no nodes")]
    EmptyQuadrature,
    #[error("polarization {0:?} is not orthogonal to the canonical wave vector")]
    NonTransversePolarization([f64; 3]),
    #[error("declared moment order {declared}, profile behaves like kappa^{actual}")]
    DeclaredMomentMismatch { declared: u32, actual: u32 },
    #[error("curve value {value} at t = {t} is not positive")]
    NonPositiveCurveValues { t: f64, value: f64 },
    #[error("fit window [{0}, {1}] holds fewer than two samples")]
    DegenerateWindow(f64, f64),
    #[error("quadrature does not have nodes on both sides of |k| = 1")]
    QuadratureDoesNotStraddleOne,
    #[error("mode {0} has k = 0, which lies in the kernel of the Maxwell operator")]
    ZeroModeIncluded(usize),
    #[error(transparent)]
    Mode(#[from] ModeError),
}

/// Radial spectral profile of the initial fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Profile {
    /// `exp(-kappa^2)`
    Gaussian,
    /// `kappa^p exp(-kappa^2)`
    PowerGaussian { p: u32 },
    /// `kappa^p exp(-kappa)`
    PowerExp { p: u32 },
    /// `(1 + kappa^2)^(-(m + 3/2 + delta)/2)`: in `H^m` but not `H^(m + 2 delta)`.
    SobolevTail { m: u32, delta: f64 },
}

impl Profile {
    pub fn eval(&self, kappa: f64) -> f64 {
        match *self {
            Profile::Gaussian => (-kappa * kappa).exp(),
            Profile::PowerGaussian { p } => kappa.powi(p as i32) * (-kappa * kappa).exp(),
            Profile::PowerExp { p } => kappa.powi(p as i32) * (-kappa).exp(),
            Profile::SobolevTail { m, delta } => (1.0 + kappa * kappa).powf(-(m as f64 + 1.5 + delta) / 2.0),
        }
    }

    /// Radius beyond which the profile's share of the initial energy is
    /// below `1e-3`, and at least `kappa_floor`.
    pub fn default_kappa_max(&self, t_max: f64) -> f64 {
        match *self {
            Profile::Gaussian | Profile::PowerGaussian { .. } => 10.0,
            Profile::PowerExp { p } => 60.0 + 2.0 * p as f64,
            Profile::SobolevTail { m, delta } => {
                // tail of kappa^2 |profile|^2 ~ kappa^-(2m + 1 + 2 delta)
                let q = 2.0 * m as f64 + 2.0 * delta;
                let tail = (1e-3 * q).powf(-1.0 / q);
                tail.max(30.0 * t_max.max(1.0).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDataSpec {
    pub profile: Profile,
    /// Declared low-frequency vanishing order.
    pub p: u32,
    /// Declared Sobolev order.
    pub m: u32,
    #[serde(default = "one")]
    pub e_amplitude: f64,
    #[serde(default)]
    pub h_amplitude: f64,
    /// Electric polarization in the canonical frame; must be orthogonal to z.
    #[serde(default = "x_axis")]
    pub polarization: [f64; 3],
    /// The profile is evaluated at `kappa * kappa_scale`.
    #[serde(default = "one")]
    pub kappa_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn x_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl InitialDataSpec {
    pub fn new(profile: Profile, p: u32, m: u32) -> Self {
        Self { profile, p, m, e_amplitude: 1.0, h_amplitude: 0.0, polarization: x_axis(), kappa_scale: 1.0 }
    }

    pub fn with_amplitudes(mut self, e: f64, h: f64) -> Self {
        self.e_amplitude = e;
        self.h_amplitude = h;
        self
    }

    pub fn amplitude(&self, kappa: f64) -> f64 {
        self.profile.eval(kappa * self.kappa_scale)
    }

    /// Unit `(e, k x e)` pair for the canonical wave vector `(0, 0, 1)`.
    pub fn canonical_polarization(&self) -> Result<(Vector3<f64>, Vector3<f64>), DecayError> {
        let e = Vector3::from(self.polarization);
        let n = e.norm();
        if !(n > 0.0) || (e.z / n).abs() > 1e-12 {
            return Err(DecayError::NonTransversePolarization(self.polarization));
        }
        let e = e / n;
        Ok((e, Vector3::z().cross(&e)))
    }

    /// Initial `(E0, H0)` at `kappa` on the canonical wave vector.
    pub fn fields(&self, kappa: f64) -> Result<(CVec3, CVec3), DecayError> {
        let (e, h) = self.canonical_polarization()?;
        let a = self.amplitude(kappa);
        let c = |v: Vector3<f64>, s: f64| v.map(|x| Complex64::new(x * s, 0.0));
        Ok((c(e, a * self.e_amplitude), c(h, a * self.h_amplitude)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub nodes: usize,
    /// Gauss-Legendre points per panel.
    pub order: usize,
}

impl QuadratureConfig {
    pub fn new(kappa_max: f64, nodes: usize) -> Self {
        Self { kappa_min: 1e-4, kappa_max, nodes, order: 8 }
    }
}

/// Radial rule with the `4 pi kappa^2` factor folded into the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RadialQuadrature {
    /// Composite Gauss-Legendre on log-spaced panels, with a panel edge at
    /// `kappa = 1` whenever the range straddles it.
    pub fn log_panels(cfg: &QuadratureConfig) -> Self {
        let order = cfg.order.max(1);
        let panels = (cfg.nodes / order).max(1);
        let (a, b) = (cfg.kappa_min, cfg.kappa_max);
        let edges = if a < 1.0 && b > 1.0 && panels >= 2 {
            let frac = (1.0f64 / a).ln() / (b / a).ln();
            let lo = ((panels as f64 * frac).round() as usize).clamp(1, panels - 1);
            let mut e = log_space(a, 1.0, lo + 1);
            e.extend(log_space(1.0, b, panels - lo + 1).into_iter().skip(1));
            e
        } else {
            log_space(a, b, panels + 1)
        };
        let (nodes, w) = composite_rule(&edges, order);
        let weights = nodes.iter().zip(&w).map(|(k, w)| 4.0 * std::f64::consts::PI * k * k * w).collect();
        Self { nodes, weights }
    }

    pub fn straddles_one(&self) -> bool {
        self.nodes.iter().any(|&k| k < 1.0) && self.nodes.iter().any(|&k| k >= 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCurve {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    /// Contribution of `|k| >= 1`.
    pub hf: Vec<f64>,
    /// Contribution of `|k| < 1`.
    pub lf: Vec<f64>,
    pub straddles_one: bool,
}

/// `L_0(t)` along one mode started from `(E0, H0)` with oscillators at rest.
pub fn mode_energy_curve(
    material: &MaterialParams,
    k: Vector3<f64>,
    e0: CVec3,
    h0: CVec3,
    times: &[f64],
) -> Result<Vec<f64>, DecayError> {
    let gen = build_generator(material, k);
    let u0 = ModeState::from_fields(material, e0, h0).to_vector();
    mode_energy_from_vector(material, &gen, &u0, times)
}

fn mode_energy_from_vector(
    material: &MaterialParams,
    gen: &crate::mode::Generator,
    u0: &DVector<Complex64>,
    times: &[f64],
) -> Result<Vec<f64>, DecayError> {
    let lay = Layout::of(material);
    Ok(evolve_grid_vectors(gen, u0, times)?
        .iter()
        .map(|v| order_densities(material, &ModeState::from_vector(v, lay)).lyapunov)
        .collect())
}

/// `L(t) = int L_k(t) dk` by the isotropic radial rule.
pub fn total_energy_curve(
    material: &MaterialParams,
    spec: &InitialDataSpec,
    times: &[f64],
    quad: &RadialQuadrature,
) -> Result<EnergyCurve, DecayError> {
    if quad.nodes.is_empty() {
        return Err(DecayError::EmptyQuadrature);
    }
    spec.canonical_polarization()?;
    let per_node: Vec<Vec<f64>> = quad
        .nodes
        .par_iter()
        .zip(quad.weights.par_iter())
        .map(|(&kappa, &w)| {
            let (e0, h0) = spec.fields(kappa)?;
            let l = mode_energy_curve(material, Vector3::new(0.0, 0.0, kappa), e0, h0, times)?;
            Ok(l.into_iter().map(|x| w * x).collect())
        })
        .collect::<Result<_, DecayError>>()?;
    let reduce = |pick: &dyn Fn(f64) -> bool| -> Vec<f64> {
        (0..times.len())
            .map(|i| {
                let terms: Vec<f64> =
                    quad.nodes.iter().zip(&per_node).filter(|(k, _)| pick(**k)).map(|(_, c)| c[i]).collect();
                pairwise_sum(&terms)
            })
            .collect()
    };
    Ok(EnergyCurve {
        times: times.to_vec(),
        total: reduce(&|_| true),
        hf: reduce(&|k| k >= 1.0),
        lf: reduce(&|k| k < 1.0),
        straddles_one: quad.straddles_one(),
    })
}

/// The `|k| >= 1` and `|k| < 1` partial curves.
pub fn hf_lf_split(curve: &EnergyCurve) -> Result<(Vec<f64>, Vec<f64>), DecayError> {
    if !curve.straddles_one {
        return Err(DecayError::QuadratureDoesNotStraddleOne);
    }
    Ok((curve.hf.clone(), curve.lf.clone()))
}

/// Leading power of the profile at the origin, from the log-log slope on
/// `[1e-4, 1e-2]`.
pub fn moment_order_check(spec: &InitialDataSpec) -> Result<u32, DecayError> {
    let ks = log_space(1e-4, 1e-2, 9);
    let x: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let y: Vec<f64> = ks.iter().map(|&k| spec.amplitude(k).abs().ln()).collect();
    let slope = linear_fit(&x, &y).1;
    let actual = slope.round().max(0.0) as u32;
    if actual != spec.p {
        return Err(DecayError::DeclaredMomentMismatch { declared: spec.p, actual });
    }
    Ok(actual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub window: [f64; 2],
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares slope of `log L` against `log t` on the window.
pub fn fit_decay_exponent(times: &[f64], values: &[f64], window: [f64; 2]) -> Result<DecayFit, DecayError> {
    let [lo, hi] = window;
    let pts: Vec<(f64, f64)> =
        times.iter().zip(values).filter(|(t, _)| **t >= lo && **t <= hi).map(|(t, v)| (*t, *v)).collect();
    if !(lo < hi) || pts.len() < 2 {
        return Err(DecayError::DegenerateWindow(lo, hi));
    }
    if let Some(&(t, value)) = pts.iter().find(|p| !(p.1 > 0.0) || p.0 <= 0.0) {
        return Err(DecayError::NonPositiveCurveValues { t, value });
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let (_, slope, r2) = linear_fit(&x, &y);
    Ok(DecayFit { exponent: slope, window, r_squared: r2, points: pts.len() })
}

/// The last simulated decade.
pub fn auto_window(times: &[f64]) -> [f64; 2] {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    [t_max / 10.0, t_max]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMode {
    pub k: f64,
    pub weight: f64,
    pub amplitude: f64,
}

/// `L(t) = sum weight_n L_{k_n}(t)` for a user supplied discrete spectrum.
/// Each mode starts with `E0 = amplitude x`, `H0 = 0` on the canonical wave
/// vector `(0, 0, k_n)`.
pub fn discrete_spectrum_curve(
    material: &MaterialParams,
    modes: &[DiscreteMode],
    times: &[f64],
) -> Result<Vec<f64>, DecayError> {
    if modes.is_empty() {
        return Err(DecayError::EmptyQuadrature);
    }
    if let Some(i) = modes.iter().position(|m| !(m.k > 0.0)) {
        return Err(DecayError::ZeroModeIncluded(i));
    }
    let per_mode: Vec<Vec<f64>> = modes
        .par_iter()
        .map(|md| {
            let e0 = Vector3::new(Complex64::new(md.amplitude, 0.0), 0.0.into(), 0.0.into());
            let l = mode_energy_curve(material, Vector3::new(0.0, 0.0, md.k), e0, Vector3::zeros(), times)?;
            Ok(l.into_iter().map(|x| md.weight * x).collect())
        })
        .collect::<Result<_, DecayError>>()?;
    Ok((0..times.len()).map(|i| pairwise_sum(&per_mode.iter().map(|c| c[i]).collect::<Vec<_>>())).collect())
}

/// `sup_r r^m exp(-sigma r) = (m / (sigma e))^m`.
pub fn envelope_sup(m: f64, sigma: f64) -> f64 {
    (m / (sigma * std::f64::consts::E)).powf(m)
}

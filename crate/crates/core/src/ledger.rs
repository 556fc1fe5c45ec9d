//! Energy, Lyapunov and decay densities of orders 0 to 2 for one mode.
//!
//! With `U_j = d^j U / dt^j` (a generator power applied to the state), the
//! order-j Lyapunov density is half the energy-weighted norm of `U_j`:
//!
//! ```text
//! L_j = 1/2 (eps0 |E_j|^2 + mu0 |H_j|^2)
//!     + 1/2 sum eps0 Omega^2 (|P'_j|^2 + omega0^2 |P_j|^2) + (magnetic)
//! D_j = sum eps0 alpha Omega^2 |P'_j|^2 + sum mu0 alpha Omega^2 |M'_j|^2
//! ```
//!
//! so `dL_j/dt = Re <U_j, U_{j+1}>` exactly, and `dL_j/dt + D_j = 0`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{linear_fit, log_grid_with_zero};
use crate::material::{classify_dissipation, DissipationTag, MaterialParams};
use crate::mode::{build_generator, derivative_ladder, evolve_grid, CVec3, ModeError, ModeState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("ladder has {0} entries, at least 3 are needed")]
    LadderTooShort(usize),
    #[error("time grid is empty")]
    EmptyTimeGrid,
    #[error("material is not strongly dissipative")]
    NotStronglyDissipative,
    #[error("the Lorentz-weighted estimate needs k != 0")]
    ZeroWaveVectorForLorentz,
    #[error("decay density vanishes at t = {0}")]
    ZeroDecayDensity(f64),
    #[error("initial fields are zero")]
    ZeroInitialData,
    #[error(transparent)]
    Mode(#[from] ModeError),
}

/// Floor of the identity-residual normalizer.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderDensities {
    pub energy: f64,
    pub extra_energy: f64,
    pub lyapunov: f64,
    pub decay: f64,
}

impl OrderDensities {
    fn add_scaled(&mut self, o: &OrderDensities, c: f64) {
        self.energy += c * o.energy;
        self.extra_energy += c * o.extra_energy;
        self.lyapunov += c * o.lyapunov;
        self.decay += c * o.decay;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityLedger {
    pub k: [f64; 3],
    pub t: f64,
    pub orders: [OrderDensities; 3],
    /// `cumulated[0]` is the n = 1 sum, `cumulated[1]` the n = 2 sum.
    pub cumulated: [OrderDensities; 2],
}

impl DensityLedger {
    pub fn cumulated(&self, n: usize) -> &OrderDensities {
        &self.cumulated[n - 1]
    }
}

/// `<k>^2 = 1 + |k|^2`.
pub fn bracket_sq(k: &Vector3<f64>) -> f64 {
    1.0 + k.norm_squared()
}

fn cnorm2(v: &CVec3) -> f64 {
    v.norm_squared()
}

fn re_dot(a: &CVec3, b: &CVec3) -> f64 {
    a.dotc(b).re
}

/// Order-j densities of one ladder entry.
pub fn order_densities(material: &MaterialParams, u: &ModeState) -> OrderDensities {
    let energy = 0.5 * (material.eps0 * cnorm2(&u.e) + material.mu0 * cnorm2(&u.h));
    let mut extra = 0.0;
    let mut decay = 0.0;
    for (j, o) in material.electric.iter().enumerate() {
        let w = material.eps0 * o.coupling * o.coupling;
        extra += 0.5 * w * (cnorm2(&u.pdot[j]) + o.omega0 * o.omega0 * cnorm2(&u.p[j]));
        decay += o.alpha * w * cnorm2(&u.pdot[j]);
    }
    for (l, o) in material.magnetic.iter().enumerate() {
        let w = material.mu0 * o.coupling * o.coupling;
        extra += 0.5 * w * (cnorm2(&u.mdot[l]) + o.omega0 * o.omega0 * cnorm2(&u.m[l]));
        decay += o.alpha * w * cnorm2(&u.mdot[l]);
    }
    OrderDensities { energy, extra_energy: extra, lyapunov: energy + extra, decay }
}

/// `Re <u, v>` in the energy inner product, i.e. `dL_j/dt` for `u = U_j`, `v = U_{j+1}`.
pub fn energy_inner(material: &MaterialParams, u: &ModeState, v: &ModeState) -> f64 {
    let mut s = material.eps0 * re_dot(&u.e, &v.e) + material.mu0 * re_dot(&u.h, &v.h);
    for (j, o) in material.electric.iter().enumerate() {
        let w = material.eps0 * o.coupling * o.coupling;
        s += w * (re_dot(&u.pdot[j], &v.pdot[j]) + o.omega0 * o.omega0 * re_dot(&u.p[j], &v.p[j]));
    }
    for (l, o) in material.magnetic.iter().enumerate() {
        let w = material.mu0 * o.coupling * o.coupling;
        s += w * (re_dot(&u.mdot[l], &v.mdot[l]) + o.omega0 * o.omega0 * re_dot(&u.m[l], &v.m[l]));
    }
    s
}

pub fn densities(
    material: &MaterialParams,
    k: &Vector3<f64>,
    t: f64,
    ladder: &[ModeState],
) -> Result<DensityLedger, LedgerError> {
    if ladder.len() < 3 {
        return Err(LedgerError::LadderTooShort(ladder.len()));
    }
    let orders = [0, 1, 2].map(|j| order_densities(material, &ladder[j]));
    let kb = 1.0 / bracket_sq(k);
    let mut c1 = orders[0];
    c1.add_scaled(&orders[1], kb);
    let mut c2 = c1;
    c2.add_scaled(&orders[2], kb * kb);
    Ok(DensityLedger { k: [k.x, k.y, k.z], t, orders, cumulated: [c1, c2] })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub max_abs_residual: f64,
    pub normalizer: f64,
}

impl ResidualEntry {
    pub fn relative(&self) -> f64 {
        self.max_abs_residual / self.normalizer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Orders 0, 1, 2.
    pub orders: [ResidualEntry; 3],
    /// Cumulated n = 1 and n = 2.
    pub cumulated: [ResidualEntry; 2],
    pub times: Vec<f64>,
}

impl IdentityReport {
    pub fn max_relative(&self) -> f64 {
        self.orders.iter().chain(self.cumulated.iter()).map(|r| r.relative()).fold(0.0, f64::max)
    }
}

/// Per-time ledger row with the identity residuals `dL/dt + D` of every order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub ledger: DensityLedger,
    pub rates: [f64; 3],
    pub residuals: [f64; 3],
    pub cumulated_residuals: [f64; 2],
}

/// Evolves `state0` over `times` and evaluates the ledger and identity
/// residuals at each point.
pub fn ledger_trajectory(
    material: &MaterialParams,
    k: &Vector3<f64>,
    state0: &ModeState,
    times: &[f64],
) -> Result<Vec<LedgerRow>, LedgerError> {
    if times.is_empty() {
        return Err(LedgerError::EmptyTimeGrid);
    }
    let gen = build_generator(material, *k);
    let states = evolve_grid(&gen, state0, times)?;
    let kb = 1.0 / bracket_sq(k);
    let mut rows = Vec::with_capacity(times.len());
    for (t, s) in times.iter().zip(&states) {
        let lad = derivative_ladder(&gen, s, 3);
        let ledger = densities(material, k, *t, &lad)?;
        let rates = [0, 1, 2].map(|j| energy_inner(material, &lad[j], &lad[j + 1]));
        let residuals = [0, 1, 2].map(|j| rates[j] + ledger.orders[j].decay);
        let c1 = residuals[0] + kb * residuals[1];
        let c2 = c1 + kb * kb * residuals[2];
        rows.push(LedgerRow { ledger, rates, residuals, cumulated_residuals: [c1, c2] });
    }
    Ok(rows)
}

pub fn identity_residual(
    material: &MaterialParams,
    k: &Vector3<f64>,
    state0: &ModeState,
    times: &[f64],
) -> Result<IdentityReport, LedgerError> {
    let rows = ledger_trajectory(material, k, state0, times)?;
    // normalizers come from the initial state, whatever the first grid point
    let gen = build_generator(material, *k);
    let l0 = densities(material, k, 0.0, &derivative_ladder(&gen, state0, 2))?;
    let mut orders = [0, 1, 2]
        .map(|j| ResidualEntry { max_abs_residual: 0.0, normalizer: l0.orders[j].lyapunov.max(RESIDUAL_FLOOR) });
    let mut cumulated = [0, 1]
        .map(|n| ResidualEntry { max_abs_residual: 0.0, normalizer: l0.cumulated[n].lyapunov.max(RESIDUAL_FLOOR) });
    for r in &rows {
        for j in 0..3 {
            orders[j].max_abs_residual = orders[j].max_abs_residual.max(r.residuals[j].abs());
        }
        for n in 0..2 {
            cumulated[n].max_abs_residual = cumulated[n].max_abs_residual.max(r.cumulated_residuals[n].abs());
        }
    }
    Ok(IdentityReport { orders, cumulated, times: times.to_vec() })
}

/// Which cumulated density and weight a comparison lemma uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaForm {
    /// Cumulation order, 1 (Drude) or 2 (Lorentz).
    pub n: usize,
    /// `w(k)`: `<k>^2` for Drude, `<k>^2 + |k|^-2` for Lorentz.
    pub weight: f64,
}

/// Lemma form for the material: pure Drude media use `n = 1`, `w = <k>^2`;
/// anything with a resonance uses `n = 2`, `w = <k>^2 + |k|^-2`.
pub fn lemma_form(material: &MaterialParams, k: &Vector3<f64>) -> Result<LemmaForm, LedgerError> {
    if classify_dissipation(material).tag != DissipationTag::Strong {
        return Err(LedgerError::NotStronglyDissipative);
    }
    if material.is_pure_drude() {
        Ok(LemmaForm { n: 1, weight: bracket_sq(k) })
    } else {
        let k2 = k.norm_squared();
        if k2 == 0.0 {
            return Err(LedgerError::ZeroWaveVectorForLorentz);
        }
        Ok(LemmaForm { n: 2, weight: bracket_sq(k) + 1.0 / k2 })
    }
}

/// Default certification grid: 0 and 63 log-spaced points on `[T 1e-4, T]`,
/// `T = 50 w(k)`.
pub fn default_time_grid(form: &LemmaForm) -> Vec<f64> {
    log_grid_with_zero(50.0 * form.weight, 1e-4, 64)
}

/// `L^(n)(t) / (w D^(n)(t))` along the trajectory, for an explicit form.
pub fn ratio_profile(
    material: &MaterialParams,
    k: &Vector3<f64>,
    state0: &ModeState,
    times: &[f64],
    form: &LemmaForm,
) -> Result<Vec<f64>, LedgerError> {
    let rows = ledger_trajectory(material, k, state0, times)?;
    rows.iter()
        .map(|r| {
            let c = r.ledger.cumulated(form.n);
            if !(c.decay > 0.0) {
                return Err(LedgerError::ZeroDecayDensity(r.ledger.t));
            }
            Ok(c.lyapunov / (form.weight * c.decay))
        })
        .collect()
}

/// `sup_t L^(n) / (w(k) D^(n))` over the grid.
pub fn lemma_ratio(
    material: &MaterialParams,
    k: &Vector3<f64>,
    state0: &ModeState,
    times: &[f64],
) -> Result<f64, LedgerError> {
    let form = lemma_form(material, k)?;
    Ok(ratio_profile(material, k, state0, times, &form)?.into_iter().fold(0.0, f64::max))
}

/// `L^(2)(0) / (|E0|^2 + |H0|^2)` for data with oscillators at rest.
pub fn initial_bound_ratio(
    material: &MaterialParams,
    k: &Vector3<f64>,
    e0: &CVec3,
    h0: &CVec3,
) -> Result<f64, LedgerError> {
    let d = e0.norm_squared() + h0.norm_squared();
    if d == 0.0 {
        return Err(LedgerError::ZeroInitialData);
    }
    let state = ModeState::from_fields(material, *e0, *h0);
    let gen = build_generator(material, *k);
    let l = densities(material, k, 0.0, &derivative_ladder(&gen, &state, 2))?;
    Ok(l.cumulated(2).lyapunov / d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallCertificate {
    pub sigma_fit: f64,
    pub bound_holds: bool,
    /// Largest `L(t) / (L(0) exp(-sigma* t / w)) - 1` over the grid.
    pub worst_excess: f64,
    pub weight: f64,
}

/// Relative slack allowed on the pointwise bound, for roundoff.
pub const GRONWALL_SLACK: f64 = 1e-10;

/// Fits the tail decay rate of `L^(n)` and checks the exponential bound with
/// rate `sigma_star / w(k)`. The tail is the last quarter of the grid.
pub fn gronwall_certificate(
    material: &MaterialParams,
    k: &Vector3<f64>,
    state0: &ModeState,
    times: &[f64],
    sigma_star: f64,
) -> Result<GronwallCertificate, LedgerError> {
    let form = lemma_form(material, k)?;
    let rows = ledger_trajectory(material, k, state0, times)?;
    let gen = build_generator(material, *k);
    let l0 = densities(material, k, 0.0, &derivative_ladder(&gen, state0, 2))?.cumulated(form.n).lyapunov;
    let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.ledger.t, r.ledger.cumulated(form.n).lyapunov)).collect();
    let mut worst = f64::NEG_INFINITY;
    for &(t, l) in &series {
        let bound = l0 * (-sigma_star * t / form.weight).exp();
        let excess = if bound > 0.0 {
            l / bound - 1.0
        } else if l > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst = worst.max(excess);
    }
    let tail_start = series.len() - (series.len() / 4).max(2).min(series.len());
    let tail: Vec<(f64, f64)> = series[tail_start..].iter().copied().filter(|&(_, l)| l > 0.0).collect();
    let sigma_fit = if tail.len() >= 2 {
        let x: Vec<f64> = tail.iter().map(|p| p.0).collect();
        let y: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
        -linear_fit(&x, &y).1 * form.weight
    } else {
        f64::NAN
    };
    Ok(GronwallCertificate {
        sigma_fit,
        bound_holds: worst <= GRONWALL_SLACK,
        worst_excess: worst,
        weight: form.weight,
    })
}

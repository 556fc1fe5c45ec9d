//! Seeded random streams.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! A uniform double is `(next_u64() >> 11) * 2^-53`; normals use the
//! Box-Muller cosine branch on two consecutive uniforms, with the first
//! uniform mapped to `(0, 1]`. Nothing else touches the stream, so any
//! language with a ChaCha8 implementation can reproduce the draws.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::material::{MaterialParams, Oscillator};
use crate::mode::{CVec3, ModeState};

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn complex_normal(&mut self) -> Complex64 {
        Complex64::new(self.normal(), self.normal())
    }

    pub fn cvec3(&mut self) -> CVec3 {
        Vector3::new(self.complex_normal(), self.complex_normal(), self.complex_normal())
    }

    /// Random complex vector orthogonal to `k` (unconstrained when `k = 0`).
    pub fn transverse_cvec3(&mut self, k: &Vector3<f64>) -> CVec3 {
        project_transverse(&self.cvec3(), k)
    }

    /// Random transverse mode state. Oscillator slots are filled only when
    /// `with_oscillators` is set.
    pub fn transverse_state(
        &mut self,
        material: &MaterialParams,
        k: &Vector3<f64>,
        with_oscillators: bool,
    ) -> ModeState {
        let mut s = ModeState::zeros(material.ne(), material.nm());
        s.e = self.transverse_cvec3(k);
        s.h = self.transverse_cvec3(k);
        if with_oscillators {
            for v in s.p.iter_mut().chain(s.pdot.iter_mut()).chain(s.m.iter_mut()).chain(s.mdot.iter_mut()) {
                *v = self.transverse_cvec3(k);
            }
        }
        s
    }

    /// Random valid material. `kind` selects pure Drude, pure Lorentz or mixed.
    pub fn material(&mut self, kind: MaterialKind, damped: bool) -> MaterialParams {
        let branch = |s: &mut Self| {
            // undamped Drude terms are all identical, so at most one per branch
            let most = if kind == MaterialKind::Drude && !damped { 1 } else { 2 };
            let n = 1 + (s.uniform() * most as f64) as usize;
            (0..n)
                .map(|j| {
                    let drude = match kind {
                        MaterialKind::Drude => true,
                        MaterialKind::Lorentz => false,
                        MaterialKind::Mixed => j == 0,
                    };
                    let omega0 = if drude { 0.0 } else { s.range(0.3, 3.0) };
                    let alpha = if damped { s.range(0.05, 3.0) } else { 0.0 };
                    Oscillator::new(s.range(0.3, 2.0), omega0, alpha)
                })
                .collect::<Vec<_>>()
        };
        loop {
            let electric = branch(self);
            let magnetic = branch(self);
            let eps0 = self.range(0.5, 2.0);
            let mu0 = self.range(0.5, 2.0);
            if let Ok(m) = MaterialParams::new(eps0, mu0, electric, magnetic) {
                return m;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaterialKind {
    Drude,
    Lorentz,
    Mixed,
}

pub fn project_transverse(v: &CVec3, k: &Vector3<f64>) -> CVec3 {
    let n2 = k.norm_squared();
    if n2 == 0.0 {
        return *v;
    }
    let kc = k.map(|x| Complex64::new(x, 0.0));
    let dot = kc.dot(v);
    v - kc * (dot / n2)
}

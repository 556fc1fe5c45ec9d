//! Exact evolution of a single Fourier mode.
//!
//! The state is ordered `(E, H, P_1..P_Ne, P'_1..P'_Ne, M_1..M_Nm, M'_1..M'_Nm)`,
//! every entry a complex 3-vector. With `dU/dt = G U`:
//!
//! ```text
//! E'  = (i/eps0) k x H - sum Omega_j^2 P'_j
//! H'  = -(i/mu0) k x E - sum Omega_l^2 M'_l
//! P'' = E - alpha_j P'_j - omega0_j^2 P_j
//! M'' = H - alpha_l M'_l - omega0_l^2 M_l
//! ```

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::material::MaterialParams;

pub type CVec3 = Vector3<Complex64>;

/// Absolute tolerance on `Re lambda` for contraction checks.
pub const TOL_SPECTRAL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("time {0} is not finite")]
    NonFiniteTime(f64),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("time grid is not sorted at index {0}")]
    UnsortedTimes(usize),
    #[error("state has ({0}, {1}) oscillators, material has ({2}, {3})")]
    LayoutMismatch(usize, usize, usize, usize),
    #[error("eigensolver did not converge")]
    EigensolveFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub ne: usize,
    pub nm: usize,
}

impl Layout {
    pub fn of(material: &MaterialParams) -> Self {
        Self { ne: material.ne(), nm: material.nm() }
    }
    pub fn dim(&self) -> usize {
        6 + 6 * self.ne + 6 * self.nm
    }
    pub fn e(&self) -> usize {
        0
    }
    pub fn h(&self) -> usize {
        3
    }
    pub fn p(&self, j: usize) -> usize {
        6 + 3 * j
    }
    pub fn pdot(&self, j: usize) -> usize {
        6 + 3 * self.ne + 3 * j
    }
    pub fn m(&self, l: usize) -> usize {
        6 + 6 * self.ne + 3 * l
    }
    pub fn mdot(&self, l: usize) -> usize {
        6 + 6 * self.ne + 3 * self.nm + 3 * l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeState {
    pub e: CVec3,
    pub h: CVec3,
    pub p: Vec<CVec3>,
    pub pdot: Vec<CVec3>,
    pub m: Vec<CVec3>,
    pub mdot: Vec<CVec3>,
}

fn zero3() -> CVec3 {
    Vector3::zeros()
}

impl ModeState {
    pub fn zeros(ne: usize, nm: usize) -> Self {
        Self {
            e: zero3(),
            h: zero3(),
            p: vec![zero3(); ne],
            pdot: vec![zero3(); ne],
            m: vec![zero3(); nm],
            mdot: vec![zero3(); nm],
        }
    }

    /// Fields `(E0, H0)` with all oscillator slots at rest.
    pub fn from_fields(material: &MaterialParams, e0: CVec3, h0: CVec3) -> Self {
        let mut s = Self::zeros(material.ne(), material.nm());
        s.e = e0;
        s.h = h0;
        s
    }

    pub fn layout(&self) -> Layout {
        Layout { ne: self.p.len(), nm: self.m.len() }
    }

    pub fn to_vector(&self) -> DVector<Complex64> {
        let lay = self.layout();
        let mut v = DVector::zeros(lay.dim());
        let mut put = |at: usize, x: &CVec3| v.rows_mut(at, 3).copy_from(x);
        put(lay.e(), &self.e);
        put(lay.h(), &self.h);
        for j in 0..lay.ne {
            put(lay.p(j), &self.p[j]);
            put(lay.pdot(j), &self.pdot[j]);
        }
        for l in 0..lay.nm {
            put(lay.m(l), &self.m[l]);
            put(lay.mdot(l), &self.mdot[l]);
        }
        v
    }

    pub fn from_vector(v: &DVector<Complex64>, lay: Layout) -> Self {
        let get = |at: usize| -> CVec3 { v.fixed_rows::<3>(at).into_owned() };
        Self {
            e: get(lay.e()),
            h: get(lay.h()),
            p: (0..lay.ne).map(|j| get(lay.p(j))).collect(),
            pdot: (0..lay.ne).map(|j| get(lay.pdot(j))).collect(),
            m: (0..lay.nm).map(|l| get(lay.m(l))).collect(),
            mdot: (0..lay.nm).map(|l| get(lay.mdot(l))).collect(),
        }
    }

    /// Flat real vector `[re x0, im x0, re x1, im x1, ...]`.
    pub fn to_real_interleaved(&self) -> Vec<f64> {
        self.to_vector().iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_real_interleaved(xs: &[f64], lay: Layout) -> Self {
        let v = DVector::from_iterator(lay.dim(), xs.chunks(2).map(|c| Complex64::new(c[0], c[1])));
        Self::from_vector(&v, lay)
    }

    pub fn fields(&self) -> impl Iterator<Item = &CVec3> {
        [&self.e, &self.h]
            .into_iter()
            .chain(self.p.iter())
            .chain(self.pdot.iter())
            .chain(self.m.iter())
            .chain(self.mdot.iter())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let f = |v: &CVec3| v * c;
        Self {
            e: f(&self.e),
            h: f(&self.h),
            p: self.p.iter().map(f).collect(),
            pdot: self.pdot.iter().map(f).collect(),
            m: self.m.iter().map(f).collect(),
            mdot: self.mdot.iter().map(f).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.to_vector() - other.to_vector()).camax()
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub matrix: DMatrix<Complex64>,
    pub k: Vector3<f64>,
    pub material: MaterialParams,
    /// Columns `(e1, e2, k/|k|)`, right-handed.
    frame: Matrix3<f64>,
    /// Generator for `|k| z`, in which the system splits into independent blocks.
    aligned: DMatrix<Complex64>,
    blocks: Vec<Vec<usize>>,
}

fn cross_matrix(k: &Vector3<f64>) -> [[f64; 3]; 3] {
    [[0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]]
}

pub fn build_generator(material: &MaterialParams, k: Vector3<f64>) -> Generator {
    let g = build_matrix(material, k);
    let kn = k.norm();
    let frame = if kn == 0.0 {
        Matrix3::identity()
    } else {
        let (e1, _) = transverse_basis(&k);
        let kh = k / kn;
        Matrix3::from_columns(&[e1, kh.cross(&e1), kh])
    };
    let aligned = if kn == 0.0 { g.clone() } else { build_matrix(material, Vector3::new(0.0, 0.0, kn)) };
    let blocks = coupled_blocks(&aligned);
    Generator { matrix: g, k, material: material.clone(), frame, aligned, blocks }
}

fn build_matrix(material: &MaterialParams, k: Vector3<f64>) -> DMatrix<Complex64> {
    let lay = Layout::of(material);
    let mut g = DMatrix::<Complex64>::zeros(lay.dim(), lay.dim());
    let cx = cross_matrix(&k);
    let i = Complex64::i();
    for r in 0..3 {
        for c in 0..3 {
            g[(lay.e() + r, lay.h() + c)] = i * cx[r][c] / material.eps0;
            g[(lay.h() + r, lay.e() + c)] = -i * cx[r][c] / material.mu0;
        }
    }
    for (j, o) in material.electric.iter().enumerate() {
        for d in 0..3 {
            g[(lay.e() + d, lay.pdot(j) + d)] = (-o.coupling * o.coupling).into();
            g[(lay.p(j) + d, lay.pdot(j) + d)] = 1.0.into();
            g[(lay.pdot(j) + d, lay.e() + d)] = 1.0.into();
            g[(lay.pdot(j) + d, lay.pdot(j) + d)] = (-o.alpha).into();
            g[(lay.pdot(j) + d, lay.p(j) + d)] = (-o.omega0 * o.omega0).into();
        }
    }
    for (l, o) in material.magnetic.iter().enumerate() {
        for d in 0..3 {
            g[(lay.h() + d, lay.mdot(l) + d)] = (-o.coupling * o.coupling).into();
            g[(lay.m(l) + d, lay.mdot(l) + d)] = 1.0.into();
            g[(lay.mdot(l) + d, lay.h() + d)] = 1.0.into();
            g[(lay.mdot(l) + d, lay.mdot(l) + d)] = (-o.alpha).into();
            g[(lay.mdot(l) + d, lay.m(l) + d)] = (-o.omega0 * o.omega0).into();
        }
    }
    g
}

/// Connected components of the sparsity graph.
fn coupled_blocks(m: &DMatrix<Complex64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for r in 0..n {
        for c in 0..n {
            if m[(r, c)] != Complex64::new(0.0, 0.0) {
                let (a, b) = (root(&mut label, r), root(&mut label, c));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut label, i);
        if index_of[r] == usize::MAX {
            index_of[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[index_of[r]].push(i);
    }
    groups
}

impl Generator {
    pub fn layout(&self) -> Layout {
        Layout::of(&self.material)
    }

    pub fn apply(&self, state: &ModeState) -> ModeState {
        ModeState::from_vector(&(&self.matrix * state.to_vector()), self.layout())
    }

    /// `exp(t G)`, computed block by block in the frame where `k` is the
    /// third axis and rotated back. The longitudinal block never mixes with
    /// the transverse ones, not even through roundoff.
    pub fn propagator(&self, t: f64) -> DMatrix<Complex64> {
        let n = self.aligned.nrows();
        let mut e = DMatrix::<Complex64>::zeros(n, n);
        for idx in &self.blocks {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.aligned[(idx[r], idx[c])] * t);
            let x = sub.exp();
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    e[(i, j)] = x[(r, c)];
                }
            }
        }
        if self.frame == Matrix3::identity() {
            return e;
        }
        let mut q = DMatrix::<Complex64>::zeros(n, n);
        for b in 0..n / 3 {
            for r in 0..3 {
                for c in 0..3 {
                    q[(3 * b + r, 3 * b + c)] = self.frame[(r, c)].into();
                }
            }
        }
        &q * e * q.transpose()
    }

    fn check(&self, state: &ModeState) -> Result<(), ModeError> {
        let (a, b) = (state.layout(), self.layout());
        if a != b {
            return Err(ModeError::LayoutMismatch(a.ne, a.nm, b.ne, b.nm));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<(), ModeError> {
    if !t.is_finite() {
        return Err(ModeError::NonFiniteTime(t));
    }
    if t < 0.0 {
        return Err(ModeError::NegativeTime(t));
    }
    Ok(())
}

/// `exp(t G) U0` by scaling and squaring.
pub fn evolve(gen: &Generator, state0: &ModeState, t: f64) -> Result<ModeState, ModeError> {
    check_time(t)?;
    gen.check(state0)?;
    if t == 0.0 {
        return Ok(state0.clone());
    }
    Ok(ModeState::from_vector(&(gen.propagator(t) * state0.to_vector()), gen.layout()))
}

/// States at every entry of a non-decreasing grid, obtained by stepping the
/// propagator from one grid point to the next. Stepping keeps late, heavily
/// decayed states accurate relative to their own size.
pub fn evolve_grid(gen: &Generator, state0: &ModeState, times: &[f64]) -> Result<Vec<ModeState>, ModeError> {
    Ok(evolve_grid_vectors(gen, &state0.to_vector(), times)?
        .iter()
        .map(|v| ModeState::from_vector(v, gen.layout()))
        .collect())
}

pub fn evolve_grid_vectors(
    gen: &Generator,
    u0: &DVector<Complex64>,
    times: &[f64],
) -> Result<Vec<DVector<Complex64>>, ModeError> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev_t = 0.0;
    let mut u = u0.clone();
    for (i, &t) in times.iter().enumerate() {
        check_time(t)?;
        if t < prev_t {
            return Err(ModeError::UnsortedTimes(i));
        }
        if t > prev_t {
            u = gen.propagator(t - prev_t) * u;
        }
        prev_t = t;
        out.push(u.clone());
    }
    Ok(out)
}

/// `[U, G U, ..., G^n U]`: the time derivatives of the trajectory through `state`.
pub fn derivative_ladder(gen: &Generator, state: &ModeState, n: usize) -> Vec<ModeState> {
    let mut v = state.to_vector();
    let mut out = vec![state.clone()];
    for _ in 0..n {
        v = &gen.matrix * v;
        out.push(ModeState::from_vector(&v, gen.layout()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    Full,
    Transverse,
}

/// Spectrum of the generator.
///
/// Drude polarizations (`omega0 = 0`) are pure integrators: nothing depends on
/// them, so `G` is block lower triangular and they contribute exact zeros.
/// Those zeros are added analytically for the full space and omitted on the
/// transverse subspace, where the integrated polarization carries no energy.
/// The remaining block is symmetrized with the energy weights before the
/// Schur decomposition; in the lossless case it is then skew-Hermitian.
pub fn generator_eigenvalues(gen: &Generator, subspace: Subspace) -> Result<Vec<Complex64>, ModeError> {
    let lay = gen.layout();
    let mat = &gen.material;
    // (offset, energy weight) of every retained 3-vector block
    let mut blocks = vec![(lay.e(), mat.eps0), (lay.h(), mat.mu0)];
    let mut drude_blocks = 0;
    for (j, o) in mat.electric.iter().enumerate() {
        if o.omega0 > 0.0 {
            blocks.push((lay.p(j), mat.eps0 * o.coupling.powi(2) * o.omega0.powi(2)));
        } else {
            drude_blocks += 1;
        }
        blocks.push((lay.pdot(j), mat.eps0 * o.coupling.powi(2)));
    }
    for (l, o) in mat.magnetic.iter().enumerate() {
        if o.omega0 > 0.0 {
            blocks.push((lay.m(l), mat.mu0 * o.coupling.powi(2) * o.omega0.powi(2)));
        } else {
            drude_blocks += 1;
        }
        blocks.push((lay.mdot(l), mat.mu0 * o.coupling.powi(2)));
    }
    let basis: Vec<Vector3<f64>> = match subspace {
        Subspace::Transverse if gen.k.norm() > 0.0 => {
            let (a, b) = transverse_basis(&gen.k);
            vec![a, b]
        }
        _ => vec![Vector3::x(), Vector3::y(), Vector3::z()],
    };
    let nb = basis.len();
    let n = blocks.len() * nb;
    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for (bi, &(ri, wi)) in blocks.iter().enumerate() {
        for (bj, &(cj, wj)) in blocks.iter().enumerate() {
            let scale = (wi / wj).sqrt();
            for (a, ea) in basis.iter().enumerate() {
                for (b, eb) in basis.iter().enumerate() {
                    let mut z = Complex64::new(0.0, 0.0);
                    for r in 0..3 {
                        for c in 0..3 {
                            z += ea[r] * gen.matrix[(ri + r, cj + c)] * eb[c];
                        }
                    }
                    s[(bi * nb + a, bj * nb + b)] = z * scale;
                }
            }
        }
    }
    let schur = s.try_schur(1e-14, 10_000).ok_or(ModeError::EigensolveFailure)?;
    let (_, t) = schur.unpack();
    let mut ev: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    if subspace == Subspace::Full {
        ev.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(3 * drude_blocks));
    }
    Ok(ev)
}

pub fn spectral_abscissa(gen: &Generator, subspace: Subspace) -> Result<f64, ModeError> {
    Ok(generator_eigenvalues(gen, subspace)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Orthonormal pair spanning the plane orthogonal to `k != 0`.
pub fn transverse_basis(k: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let kh = k.normalize();
    let seed = if kh.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = (seed - kh * kh.dot(&seed)).normalize();
    let b = kh.cross(&a);
    (a, b)
}

/// `max |k . f| / (|k| |f| + floor)` over every field of the state.
pub fn divergence_residual(state: &ModeState, k: &Vector3<f64>) -> f64 {
    let kn = k.norm();
    if kn == 0.0 {
        return 0.0;
    }
    let kc = k.map(|x| Complex64::new(x, 0.0));
    state.fields().map(|f| kc.dot(f).norm() / (kn * f.norm() + f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

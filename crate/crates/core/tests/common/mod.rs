//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's generator or propagator: the mode
//! equations are written out again and integrated with an extrapolated
//! modified-midpoint (Gragg-Bulirsch-Stoer) scheme.

#![allow(dead_code)]

use lorentz_decay::MaterialParams;
use nalgebra::Vector3;
use num_complex::Complex64 as C;

/// Integrates `y' = f(t, y)` from `t0` to `t1` with local error control `tol`
/// (mixed absolute/relative on the max norm).
pub fn gbs<F>(f: F, t0: f64, y0: &[C], t1: f64, tol: f64) -> Vec<C>
where
    F: Fn(f64, &[C]) -> Vec<C>,
{
    const SEQ: [usize; 10] = [2, 4, 6, 8, 10, 12, 14, 16, 18, 20];
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = (t1 - t0).min(0.5);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut table: Vec<Vec<Vec<C>>> = Vec::new();
        let mut accepted = None;
        for (i, &n) in SEQ.iter().enumerate() {
            let row0 = midpoint(&f, t, &y, h, n);
            let mut row = vec![row0];
            for j in 1..=i {
                let ratio = (n as f64 / SEQ[i - j] as f64).powi(2);
                let prev = &table[i - 1][j - 1];
                let cur = &row[j - 1];
                let next: Vec<C> = cur.iter().zip(prev).map(|(a, b)| a + (a - b) / (ratio - 1.0)).collect();
                row.push(next);
            }
            if i >= 2 {
                let err =
                    row[i].iter().zip(&row[i - 1]).map(|(a, b)| (a - b).norm() / (1.0 + a.norm())).fold(0.0, f64::max);
                if err < tol {
                    accepted = Some(row[i].clone());
                    table.push(row);
                    break;
                }
            }
            table.push(row);
        }
        match accepted {
            Some(next) => {
                t += h;
                y = next;
                h *= 1.5;
            }
            None => h *= 0.5,
        }
    }
    y
}

fn midpoint<F: Fn(f64, &[C]) -> Vec<C>>(f: &F, t: f64, y: &[C], h: f64, n: usize) -> Vec<C> {
    let dt = h / n as f64;
    let mut z0 = y.to_vec();
    let d = f(t, &z0);
    let mut z1: Vec<C> = z0.iter().zip(&d).map(|(a, b)| a + b * dt).collect();
    for m in 1..n {
        let d = f(t + m as f64 * dt, &z1);
        let z2: Vec<C> = z0.iter().zip(&d).map(|(a, b)| a + b * (2.0 * dt)).collect();
        z0 = z1;
        z1 = z2;
    }
    let d = f(t + h, &z1);
    z0.iter().zip(&z1).zip(&d).map(|((a, b), c)| 0.5 * (a + b + c * dt)).collect()
}

/// Integrates on a sequence of output times, restarting at each.
pub fn gbs_grid<F>(f: F, y0: &[C], times: &[f64], tol: f64) -> Vec<Vec<C>>
where
    F: Fn(f64, &[C]) -> Vec<C>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut y = y0.to_vec();
    for &ti in times {
        if ti > t {
            y = gbs(&f, t, &y, ti, tol);
            t = ti;
        }
        out.push(y.clone());
    }
    out
}

fn cross(k: &Vector3<f64>, v: &[C]) -> [C; 3] {
    [k.y * v[2] - k.z * v[1], k.z * v[0] - k.x * v[2], k.x * v[1] - k.y * v[0]]
}

/// Right-hand side of the per-mode Maxwell-Lorentz system, state ordered
/// `E, H, P_1..P_Ne, P'_1..P'_Ne, M_1..M_Nm, M'_1..M'_Nm`.
pub fn mode_rhs(m: &MaterialParams, k: Vector3<f64>) -> impl Fn(f64, &[C]) -> Vec<C> + '_ {
    move |_t, y| {
        let (ne, nm) = (m.electric.len(), m.magnetic.len());
        let p = |j: usize| 6 + 3 * j;
        let pd = |j: usize| 6 + 3 * ne + 3 * j;
        let mm = |l: usize| 6 + 6 * ne + 3 * l;
        let md = |l: usize| 6 + 6 * ne + 3 * nm + 3 * l;
        let mut d = vec![C::new(0.0, 0.0); y.len()];
        let kh = cross(&k, &y[3..6]);
        let ke = cross(&k, &y[0..3]);
        for c in 0..3 {
            d[c] = C::i() * kh[c] / m.eps0;
            d[3 + c] = -C::i() * ke[c] / m.mu0;
        }
        for (j, o) in m.electric.iter().enumerate() {
            for c in 0..3 {
                d[c] -= o.coupling * o.coupling * y[pd(j) + c];
                d[p(j) + c] = y[pd(j) + c];
                d[pd(j) + c] = y[c] - o.alpha * y[pd(j) + c] - o.omega0 * o.omega0 * y[p(j) + c];
            }
        }
        for (l, o) in m.magnetic.iter().enumerate() {
            for c in 0..3 {
                d[3 + c] -= o.coupling * o.coupling * y[md(l) + c];
                d[mm(l) + c] = y[md(l) + c];
                d[md(l) + c] = y[3 + c] - o.alpha * y[md(l) + c] - o.omega0 * o.omega0 * y[mm(l) + c];
            }
        }
        d
    }
}

/// Scalar impulse response of `x'' + alpha x' + omega0^2 x = 0` with
/// `x(0) = 0`, `x'(0) = 1`, returned as `[x, x']` at each time.
pub fn impulse_response(omega0: f64, alpha: f64, times: &[f64], tol: f64) -> Vec<[f64; 2]> {
    let f = move |_t: f64, y: &[C]| vec![y[1], -alpha * y[1] - omega0 * omega0 * y[0]];
    gbs_grid(f, &[C::new(0.0, 0.0), C::new(1.0, 0.0)], times, tol).into_iter().map(|y| [y[0].re, y[1].re]).collect()
}

/// Augmented energy of a state vector in the ordering of [`mode_rhs`].
pub fn lyapunov_density(m: &MaterialParams, y: &[C]) -> f64 {
    let (ne, nm) = (m.electric.len(), m.magnetic.len());
    let n2 = |s: &[C]| s.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut l = m.eps0 * n2(&y[0..3]) + m.mu0 * n2(&y[3..6]);
    for (j, o) in m.electric.iter().enumerate() {
        let w = m.eps0 * o.coupling * o.coupling;
        l += w * o.omega0 * o.omega0 * n2(&y[6 + 3 * j..9 + 3 * j]);
        l += w * n2(&y[6 + 3 * ne + 3 * j..9 + 3 * ne + 3 * j]);
    }
    for (l_, o) in m.magnetic.iter().enumerate() {
        let w = m.mu0 * o.coupling * o.coupling;
        let b = 6 + 6 * ne;
        l += w * o.omega0 * o.omega0 * n2(&y[b + 3 * l_..b + 3 + 3 * l_]);
        l += w * n2(&y[b + 3 * nm + 3 * l_..b + 3 * nm + 3 + 3 * l_]);
    }
    0.5 * l
}

/// Gauss-Legendre nodes and weights on `[a, b]`, computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w));
    }
    out
}

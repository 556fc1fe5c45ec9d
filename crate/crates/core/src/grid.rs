//! Time grids, Gauss-Legendre panels and reproducible summation.

use gauss_quad::GaussLegendre;

/// `n` log-spaced points from `a` to `b` inclusive (`a, b > 0`).
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![b],
        _ => {
            let (la, lb) = (a.ln(), b.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        a
                    } else if i == n - 1 {
                        b
                    } else {
                        (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub fn lin_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![b],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Pairwise (cascade) summation. The association order depends only on the
/// length, so results are bitwise reproducible whatever produced the terms.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(order.max(1).try_into().expect("order >= 1"));
    let mut pairs: Vec<(f64, f64)> = rule.iter().map(|(x, w)| (*x, *w)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite rule: `order` Gauss-Legendre nodes on each `[edges[i], edges[i+1]]`.
pub fn composite_rule(edges: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let mut nodes = Vec::with_capacity(edges.len().saturating_sub(1) * order);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(c + h * xi);
            weights.push(h * wi);
        }
    }
    (nodes, weights)
}

/// `0` followed by `n - 1` log-spaced points on `[t_max * ratio, t_max]`.
pub fn log_grid_with_zero(t_max: f64, ratio: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(log_space(t_max * ratio, t_max, n.saturating_sub(1)));
    g
}

/// Ordinary least squares `y = c0 + c1 x`; returns `(c0, c1, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    (my - slope * mx, slope, r2)
}

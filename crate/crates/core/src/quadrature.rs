//! One-dimensional Gaussian quadrature rules.
//!
//! Gauss-Hermite here is the probabilists' flavor: nodes and weights
//! integrate against the standard normal density, weights sum to one and
//! the rule reproduces normal moments exactly through degree 2*order - 1.

use crate::error::{Error, Result};

/// Gauss-Hermite rule with `order` nodes for the standard normal weight.
/// Built by Golub-Welsch: the nodes are eigenvalues of the Jacobi matrix
/// with zero diagonal and off-diagonals sqrt(k); the weights come from the
/// first components of the eigenvectors.
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be >= 1".into()));
    }
    let n = order;
    let mut diag = vec![0.0f64; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    off.push(0.0);
    let mut first = vec![0.0f64; n];
    first[0] = 1.0;
    tridiag_ql(&mut diag, &mut off, &mut first)?;

    let mut pairs: Vec<(f64, f64)> =
        diag.iter().zip(&first).map(|(&x, &z)| (x, z * z)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // The rule is symmetric; enforce it exactly so odd moments vanish to
    // machine precision instead of rounding noise.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok((nodes, weights))
}

/// Symmetric tridiagonal QL with implicit shifts. `diag` holds the diagonal,
/// `off[i]` couples rows i and i+1 (`off[n-1]` unused). `z` is rotated along
/// and ends up holding the first components of the eigenvectors.
fn tridiag_ql(diag: &mut [f64], off: &mut [f64], z: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n == 1 {
        return Ok(());
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::InvalidArgument(
                    "tridiagonal eigensolver failed to converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0f64, 1.0f64);
            let mut p = 0.0f64;
            for i in (l..m).rev() {
                let mut f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if r == 0.0 && m > l + 1 {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Gauss-Legendre rule on [-1, 1], by Newton iteration on the Legendre
/// recurrence.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be >= 1".into()));
    }
    let n = order;
    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0f64;
            let mut p1 = 0.0f64;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * x * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
            let dx = p0 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Expectation of g under N(0, 1) by composite Gauss-Legendre on [-8, 8].
/// Accurate to roughly 1e-12 for piecewise-smooth integrands with isolated
/// kinks, which defeats plain Gauss-Hermite.
pub fn normal_expectation(g: impl Fn(f64) -> f64, panels: usize, order: usize) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(order)?;
    let lo = -8.0f64;
    let hi = 8.0f64;
    let h = (hi - lo) / panels as f64;
    let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        let mid = a + 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            let t = mid + 0.5 * h * x;
            acc += w * g(t) * (-0.5 * t * t).exp();
        }
        total += acc * 0.5 * h * inv_sqrt_2pi;
    }
    Ok(total)
}

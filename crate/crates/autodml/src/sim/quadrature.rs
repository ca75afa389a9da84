//! Gauss-Hermite quadrature built from the orthonormal recurrence:
//! nodes are the roots of the degree-n orthonormal Hermite polynomial
//! (weight `exp(-t^2)`), located by bracketed bisection, with Christoffel
//! weights `1 / sum_{k<n} h_k(t)^2`. Used for exact-to-machine-precision
//! Gaussian expectations in the continuous-design oracles.

/// Values of the orthonormal Hermite polynomials h_0..h_n at t.
fn hermite_values(n: usize, t: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(n + 1);
    let h0 = std::f64::consts::PI.powf(-0.25);
    h.push(h0);
    if n == 0 {
        return h;
    }
    h.push(std::f64::consts::SQRT_2 * t * h0);
    for k in 1..n {
        let kf = k as f64;
        let next = t * (2.0 / (kf + 1.0)).sqrt() * h[k] - (kf / (kf + 1.0)).sqrt() * h[k - 1];
        h.push(next);
    }
    h
}

fn hermite_top(n: usize, t: f64) -> f64 {
    *hermite_values(n, t).last().unwrap()
}

/// Nodes and weights for `integral exp(-t^2) f(t) dt ~= sum w_i f(t_i)`.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "need at least one node");
    // All roots lie inside the turning point sqrt(2n + 1); the scan step
    // is far below the minimal root spacing pi / sqrt(2n).
    let bound = ((2 * n + 1) as f64).sqrt() + 0.5;
    let step = 0.8 / (n as f64).sqrt();
    let mut positive_roots = Vec::new();
    let mut t = if n % 2 == 1 { step / 4.0 } else { 0.0 };
    let mut prev = hermite_top(n, t);
    while t < bound {
        let next_t = t + step;
        let next = hermite_top(n, next_t);
        if prev == 0.0 {
            positive_roots.push(t);
        } else if prev.signum() != next.signum() && next != 0.0 {
            positive_roots.push(bisect(n, t, next_t));
        }
        t = next_t;
        prev = next;
    }
    let mut nodes: Vec<f64> = positive_roots.iter().map(|&r| -r).collect();
    if n % 2 == 1 {
        nodes.push(0.0);
    }
    nodes.extend(positive_roots.iter().copied());
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(nodes.len(), n, "root search missed a node");
    nodes
        .into_iter()
        .map(|t| {
            let h = hermite_values(n - 1, t);
            let w = 1.0 / h.iter().map(|v| v * v).sum::<f64>();
            (t, w)
        })
        .collect()
}

fn bisect(n: usize, mut lo: f64, mut hi: f64) -> f64 {
    let f_lo = hermite_top(n, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let f_mid = hermite_top(n, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Nodes and probabilities for standard-normal expectations:
/// `E[f(Z)] ~= sum p_i f(z_i)` with the probabilities summing to one.
pub fn gauss_hermite_normal(n: usize) -> Vec<(f64, f64)> {
    let sqrt_pi = std::f64::consts::PI.sqrt();
    gauss_hermite(n)
        .into_iter()
        .map(|(t, w)| (std::f64::consts::SQRT_2 * t, w / sqrt_pi))
        .collect()
}

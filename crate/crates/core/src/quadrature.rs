//! Gauss–Legendre rules and tensor products of them.

use std::f64::consts::PI;

/// An `n`-point Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights on `[-1, 1]`, found by Newton iteration on the
    /// three-term Legendre recurrence from Chebyshev-like starting guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        (
            self.nodes.iter().map(|t| mid + half * t).collect(),
            self.weights.iter().map(|w| half * w).collect(),
        )
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let (x, w) = self.on_interval(a, b);
        x.iter().zip(&w).map(|(&xi, &wi)| wi * f(xi)).sum()
    }
}

/// `(P_n(x), P_n'(x))`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product rule on a box: every point with its product weight.
///
/// The callback receives each point once, in lexicographic order over the
/// axes, together with the product weight.
pub fn for_each_tensor_point<F: FnMut(&[f64], f64)>(axes: &[(Vec<f64>, Vec<f64>)], mut f: F) {
    let dim = axes.len();
    if dim == 0 || axes.iter().any(|(x, _)| x.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    loop {
        let mut weight = 1.0;
        for d in 0..dim {
            point[d] = axes[d].0[idx[d]];
            weight *= axes[d].1[idx[d]];
        }
        f(&point, weight);
        let mut d = dim;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].0.len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

//! Independent reference for the single-step posterior: numerical 2-D
//! quadrature of the exact joint density over (D, pi), with no use of the
//! closed-form update.
//!
//! Likelihood of one observation `d`:
//!   rho * pi / E[pi] * N(d; D, tau^2) + (1 - rho) * (1 - pi) / E[1 - pi] * U
//! with `U = 1 / (2 * band)`. Prior `N(D; mu, sigma^2) * Beta(pi; a, b)`.

use gauss_quad::legendre::GaussLegendre;

#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct State {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub d: f64,
    pub tau: f64,
    pub rho: f64,
    pub band: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub mean_d: f64,
    pub var_d: f64,
    pub mean_pi: f64,
    pub var_pi: f64,
}

impl Moments {
    /// Beta × Gaussian with the same first two moments in each variable.
    pub fn to_state(&self) -> State {
        let m = self.mean_pi;
        let k = m * (1.0 - m) / self.var_pi - 1.0;
        State {
            mu: self.mean_d,
            sigma: self.var_d.sqrt(),
            a: m * k,
            b: (1.0 - m) * k,
        }
    }
}

const ORDER: usize = 16;
/// Half-width of the integration range around each bump, in standard deviations.
const SPAN: f64 = 14.0;
/// Panel width in standard deviations.
const STEP: f64 = 2.0;

fn rule() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Box<[(f64, f64)]>> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(ORDER.try_into().unwrap()).into_node_weight_pairs())
}

/// Composite Gauss-Legendre nodes with panel edges every `STEP` standard
/// deviations around each bump, within `SPAN` of some bump and `[lo, hi]`.
fn line_nodes(bumps: &[Gaussian], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut edges = vec![];
    for g in bumps {
        let steps = (SPAN / STEP) as i64;
        for k in -steps..=steps {
            let x = g.mean + k as f64 * STEP * g.std;
            if x > lo && x < hi {
                edges.push(x);
            }
        }
    }
    let lo = lo.max(
        bumps
            .iter()
            .map(|g| g.mean - SPAN * g.std)
            .fold(f64::INFINITY, f64::min),
    );
    let hi = hi.min(
        bumps
            .iter()
            .map(|g| g.mean + SPAN * g.std)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    edges.push(lo);
    edges.push(hi);
    edges.retain(|&x| x >= lo && x <= hi);
    panels(edges)
}

/// Nodes on (0, 1) with panels graded geometrically toward both ends, where
/// `p^(a-1) (1-p)^(b-1)` is not smooth for non-integer counts.
fn unit_nodes(bumps: &[Gaussian]) -> Vec<(f64, f64)> {
    let mut edges = vec![0.0, 1.0];
    for g in bumps {
        let steps = (SPAN / STEP) as i64;
        edges.extend((-steps..=steps).map(|k| g.mean + k as f64 * STEP * g.std));
    }
    for k in 1..=30 {
        let h = 0.5f64.powi(k);
        edges.push(h);
        edges.push(1.0 - h);
    }
    edges.retain(|&x| (0.0..=1.0).contains(&x));
    panels(edges)
}

fn panels(mut edges: Vec<f64>) -> Vec<(f64, f64)> {
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut out = Vec::with_capacity(edges.len() * ORDER);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        for &(x, wt) in rule() {
            out.push((a + half * (x + 1.0), wt * half));
        }
    }
    out
}

fn normal(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn beta_bump(a: f64, b: f64) -> Gaussian {
    let m = a / (a + b);
    Gaussian {
        mean: m,
        std: (m * (1.0 - m) / (a + b + 1.0)).sqrt(),
    }
}

/// Moments of the exact posterior after one observation.
pub fn posterior_moments(s: &State, o: &Observation) -> Moments {
    let (var, tau2) = (s.sigma * s.sigma, o.tau * o.tau);
    // Node placement only; the integrand is evaluated exactly.
    let s2 = 1.0 / (1.0 / var + 1.0 / tau2);
    let m = s2 * (s.mu / var + o.d / tau2);
    let d_nodes = line_nodes(
        &[
            Gaussian {
                mean: s.mu,
                std: s.sigma,
            },
            Gaussian {
                mean: m,
                std: s2.sqrt(),
            },
        ],
        f64::NEG_INFINITY,
        f64::INFINITY,
    );
    let p_nodes = unit_nodes(&[beta_bump(s.a + 1.0, s.b), beta_bump(s.a, s.b + 1.0)]);

    // Unnormalized Beta kernel; its normalizer cancels.
    let log_peak = {
        let g = beta_bump(s.a, s.b);
        (s.a - 1.0) * g.mean.ln() + (s.b - 1.0) * (1.0 - g.mean).ln()
    };
    let beta: Vec<f64> = p_nodes
        .iter()
        .map(|&(p, _)| ((s.a - 1.0) * p.ln() + (s.b - 1.0) * (1.0 - p).ln() - log_peak).exp())
        .collect();
    let (mut z_pi, mut m_pi) = (0.0, 0.0);
    for (&(p, w), &k) in p_nodes.iter().zip(&beta) {
        z_pi += w * k;
        m_pi += w * k * p;
    }
    let e_pi = m_pi / z_pi;
    let u = 1.0 / (2.0 * o.band);

    // The integrand is a sum of two products of a D factor and a pi factor;
    // factors are tabulated once per node.
    let d_in: Vec<f64> = d_nodes
        .iter()
        .map(|&(d, w)| w * o.rho * normal(o.d, d, tau2) * normal(d, s.mu, var))
        .collect();
    let d_out: Vec<f64> = d_nodes
        .iter()
        .map(|&(d, w)| w * (1.0 - o.rho) * u * normal(d, s.mu, var))
        .collect();
    let p_in: Vec<f64> = p_nodes
        .iter()
        .zip(&beta)
        .map(|(&(p, w), &k)| w * k * p / e_pi)
        .collect();
    let p_out: Vec<f64> = p_nodes
        .iter()
        .zip(&beta)
        .map(|(&(p, w), &k)| w * k * (1.0 - p) / (1.0 - e_pi))
        .collect();

    let grid = |fd: fn(f64, f64) -> f64, fp: fn(f64, f64) -> f64, cd: f64, cp: f64| -> f64 {
        let mut total = 0.0;
        for (i, &(d, _)) in d_nodes.iter().enumerate() {
            let gd = fd(d, cd);
            let mut row = 0.0;
            for (j, &(p, _)) in p_nodes.iter().enumerate() {
                let gp = fp(p, cp);
                row += (d_in[i] * p_in[j] + d_out[i] * p_out[j]) * gd * gp;
            }
            total += row;
        }
        total
    };
    let one = |_: f64, _: f64| 1.0;
    let id = |x: f64, _: f64| x;
    let sq = |x: f64, c: f64| (x - c).powi(2);
    let z = grid(one, one, 0.0, 0.0);
    let mean_d = grid(id, one, 0.0, 0.0) / z;
    let mean_pi = grid(one, id, 0.0, 0.0) / z;
    let sq_d = grid(sq, one, mean_d, 0.0);
    let sq_p = grid(one, sq, 0.0, mean_pi);
    Moments {
        mean_d,
        var_d: sq_d / z,
        mean_pi,
        var_pi: sq_p / z,
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

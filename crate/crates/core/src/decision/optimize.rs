//! Black-box maximization over the probability simplex.
//!
//! The model-based optimizer fits a Gaussian-process surrogate (squared
//! exponential kernel, length scale picked by marginal likelihood from a
//! small grid) to the evaluations so far and evaluates the candidate with
//! the highest expected improvement. Candidates are uniform draws from the
//! simplex plus perturbations of the best points, projected back onto it.
//! Random search evaluates uniform draws only. Both are seeded.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Bayesian,
    RandomSearch,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Bayesian => "bayesian",
            Optimizer::RandomSearch => "random-search",
        }
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bayesian" | "bo" => Ok(Optimizer::Bayesian),
            "random-search" | "random" => Ok(Optimizer::RandomSearch),
            other => Err(format!("unknown optimizer {other:?} (expected bayesian or random-search)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

const LENGTH_SCALES: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
const NUGGET: f64 = 1e-4;
const UNIFORM_CANDIDATES: usize = 400;
const LOCAL_CANDIDATES: usize = 400;
const XI: f64 = 0.01;

/// Euclidean projection onto `{x : x_i >= 0, sum x_i = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|xi| *xi /= s);
    x
}

/// Every point of the simplex grid with spacing `1/steps`.
pub fn simplex_grid(dim: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(dim: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == dim - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(dim, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(dim, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

fn dirichlet(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Surrogate {
    xs: Vec<Vec<f64>>,
    length: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    mean: f64,
    sd: f64,
}

impl Surrogate {
    fn kernel(a: &[f64], b: &[f64], length: f64) -> f64 {
        (-sq_dist(a, b) / (2.0 * length * length)).exp()
    }

    fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Option<Surrogate> {
        let n = xs.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        let sd = if var > 1e-12 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(n, ys.iter().map(|v| (v - mean) / sd));
        let mut best: Option<(f64, Surrogate)> = None;
        for &length in &LENGTH_SCALES {
            let k = DMatrix::from_fn(n, n, |i, j| Self::kernel(&xs[i], &xs[j], length) + if i == j { NUGGET } else { 0.0 });
            let Some(chol) = k.cholesky() else { continue };
            let alpha = chol.solve(&y);
            let log_det: f64 = chol.l_dirty().diagonal().iter().take(n).map(|d| 2.0 * d.ln()).sum();
            let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det;
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, Surrogate { xs: xs.to_vec(), length, chol, alpha, mean, sd }));
            }
        }
        best.map(|(_, s)| s)
    }

    /// Posterior mean and standard deviation in objective units.
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| Self::kernel(xi, x, self.length)));
        let mu = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (self.mean + self.sd * mu, self.sd * var.sqrt())
    }
}

fn expected_improvement(mu: f64, sigma: f64, best: f64, normal: &Normal) -> f64 {
    let imp = mu - best - XI;
    let z = imp / sigma;
    imp * normal.cdf(z) + sigma * normal.pdf(z)
}

/// Maximizes `objective` over the `dim`-simplex with at most `budget`
/// evaluations. The first evaluation is always the centroid.
pub fn maximize_on_simplex(
    objective: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    budget: usize,
    seed: u64,
    optimizer: Optimizer,
) -> OptimizeResult {
    assert!(dim >= 1 && budget >= 1, "need a dimension and a positive budget");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<Vec<f64>> = vec![vec![1.0 / dim as f64; dim]];
    let mut ys: Vec<f64> = vec![objective(&xs[0])];
    let n_init = match optimizer {
        Optimizer::RandomSearch => budget,
        Optimizer::Bayesian => budget.min((2 * dim + 2).max(8)),
    };
    while xs.len() < n_init {
        let x = dirichlet(&mut rng, dim);
        ys.push(objective(&x));
        xs.push(x);
    }
    let normal = Normal::standard();
    while xs.len() < budget {
        let best_y = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| ys[b].total_cmp(&ys[a]).then(a.cmp(&b)));
        let mut candidates: Vec<Vec<f64>> = (0..UNIFORM_CANDIDATES).map(|_| dirichlet(&mut rng, dim)).collect();
        let elite = &order[..order.len().min(5)];
        for i in 0..LOCAL_CANDIDATES {
            let centre = &xs[elite[i % elite.len()]];
            let scale = [0.02, 0.05, 0.1][i % 3];
            let moved: Vec<f64> = centre
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + scale * z
                })
                .collect();
            candidates.push(project_to_simplex(&moved));
        }
        let next = match Surrogate::fit(&xs, &ys) {
            Some(model) => candidates
                .into_iter()
                .filter(|c| xs.iter().all(|x| sq_dist(x, c) > 1e-18))
                .map(|c| {
                    let (mu, sd) = model.predict(&c);
                    (expected_improvement(mu, sd, best_y, &normal), c)
                })
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c),
            None => None,
        };
        let x = next.unwrap_or_else(|| dirichlet(&mut rng, dim));
        ys.push(objective(&x));
        xs.push(x);
    }
    // first index among ties, so the centroid wins a flat objective
    let mut best = 0;
    for i in 1..ys.len() {
        if ys[i] > ys[best] {
            best = i;
        }
    }
    OptimizeResult { best: xs[best].clone(), value: ys[best], evaluations: xs.len() }
}
